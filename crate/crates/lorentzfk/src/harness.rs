//! Experiment orchestration: config validation, deterministic seeding,
//! stage timing, result emission, and the run manifest.
//!
//! Configs are JSON documents; the CLI overrides only the seed and output
//! directory so a manifest plus config reproduces a run exactly. Every data
//! artifact is written under a ".partial" suffix and renamed when its stage
//! completes, and the manifest is emitted even on failure with the failing
//! stage recorded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdlt::{
    growth_constant, interaction_moment, j_layer_sum, tree_to_triangulation,
    DistanceOracle, Triangulation,
};
use crate::fk::brute::{
    brute_force_rdmk, BruteParams, FkError, RdmKernelEstimate, BRUTE_STATE_GUARD,
};
use crate::fk::chain::{chain_rdmk, kernel_transport_gap};
use crate::fk::checks::{compatibility_check, fkdlr_residual, partition_ratio};
use crate::fk::mc::{estimate_rdmk_mc, McParams};
use crate::gw::{sample_sb_layer_sizes, sample_sb_tree, GwError, OffspringDistribution};
use crate::interaction::{
    energy_bound, DecayJ, InteractionError, InteractionSpec, PotentialU, PotentialV,
};
use crate::mw::{
    convexity_check, fit_taylor_constant, invariance_gap, phi_full_cost, radial_profile,
    MwError, RadialCoordinate, TunedSchedule, VerifierRecord,
};
use crate::rng::derive_stream;
use crate::torus::{GroupElement, TorusPoint};

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("cost guard exceeded: {0}")]
    GuardExceeded(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("io failure: {0}")]
    IoFailure(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::ConfigInvalid(_) => 2,
            StageError::GuardExceeded(_) => 3,
            StageError::NumericalFailure(_) => 4,
            StageError::IoFailure(_) => 5,
        }
    }
}

impl From<FkError> for StageError {
    fn from(e: FkError) -> Self {
        match e {
            FkError::TooLarge(..) | FkError::WindowTooLarge => {
                StageError::GuardExceeded(e.to_string())
            }
            other => StageError::NumericalFailure(other.to_string()),
        }
    }
}

impl From<MwError> for StageError {
    fn from(e: MwError) -> Self {
        match e {
            MwError::Fk(f) => f.into(),
            MwError::BadSchedule { .. } | MwError::NotEnoughPoints(_) => {
                StageError::ConfigInvalid(e.to_string())
            }
            other => StageError::NumericalFailure(other.to_string()),
        }
    }
}

impl From<InteractionError> for StageError {
    fn from(e: InteractionError) -> Self {
        StageError::NumericalFailure(e.to_string())
    }
}

impl From<GwError> for StageError {
    fn from(e: GwError) -> Self {
        StageError::NumericalFailure(e.to_string())
    }
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        StageError::IoFailure(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    SampleCdlt,
    GeometryStats,
    McRun,
    OracleCheck,
    MwVerify,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::SampleCdlt => "sample-cdlt",
            Subcommand::GeometryStats => "geometry-stats",
            Subcommand::McRun => "mc-run",
            Subcommand::OracleCheck => "oracle-check",
            Subcommand::MwVerify => "mw-verify",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringConfig {
    Geometric,
    Binary,
    DeterministicUnit,
    Finite { probs: BTreeMap<usize, f64> },
}

impl OffspringConfig {
    pub fn build(&self) -> Result<OffspringDistribution, StageError> {
        match self {
            OffspringConfig::Geometric => Ok(OffspringDistribution::geometric()),
            OffspringConfig::Binary => Ok(OffspringDistribution::binary()),
            OffspringConfig::DeterministicUnit => {
                Ok(OffspringDistribution::deterministic_unit())
            }
            OffspringConfig::Finite { probs } => {
                OffspringDistribution::validate_critical(probs.clone())
                    .map_err(|e| StageError::ConfigInvalid(format!("offspring: {e}")))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub height: usize,
    pub eps: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub potential_u: PotentialU,
    pub potential_v: PotentialV,
    pub decay_j: DecayJ,
}

impl SpecConfig {
    pub fn build(&self) -> Result<InteractionSpec, StageError> {
        InteractionSpec::new(
            self.potential_u.clone(),
            self.potential_v.clone(),
            self.decay_j.clone(),
        )
        .map_err(|e| StageError::ConfigInvalid(format!("spec: {e}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumConfig {
    pub beta: f64,
    pub d: usize,
    pub d_prime: usize,
    pub matrix_a: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub l: usize,
    pub g: usize,
}

impl QuantumConfig {
    pub fn group_element(&self) -> Result<GroupElement, StageError> {
        let el = GroupElement::new(self.theta.clone(), self.matrix_a.clone())
            .map_err(|e| StageError::ConfigInvalid(format!("quantum.matrix_a: {e}")))?;
        if el.dim() != self.d {
            return Err(StageError::ConfigInvalid(format!(
                "quantum.matrix_a: action lives in dimension {}, expected d = {}",
                el.dim(),
                self.d
            )));
        }
        Ok(el)
    }
}

fn default_thin() -> usize {
    2
}
fn default_bridge_samples() -> usize {
    8
}
fn default_loop_samples() -> usize {
    64
}
fn default_batches() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_bridge_samples")]
    pub bridge_samples: usize,
    #[serde(default = "default_loop_samples")]
    pub loop_samples: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_radial() -> RadialCoordinate {
    RadialCoordinate::GraphDistance
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub n: usize,
    pub r_bar: usize,
    pub n_prime: Vec<usize>,
    pub a: f64,
    #[serde(default = "default_radial")]
    pub radial: RadialCoordinate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    #[serde(default)]
    pub formats: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub offspring: OffspringConfig,
    pub geometry: GeometryConfig,
    pub spec: SpecConfig,
    pub quantum: QuantumConfig,
    pub schedule: ScheduleConfig,
    pub mc: McConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Full validation; the error names the first failing field.
    pub fn validate(&self) -> Result<(), StageError> {
        let fail = |f: &str, why: String| Err(StageError::ConfigInvalid(format!("{f}: {why}")));
        self.offspring.build()?;
        if self.geometry.height == 0 {
            return fail("geometry.height", "must be at least 1".into());
        }
        if !(self.geometry.eps > 0.0 && self.geometry.eps < 1.0) {
            return fail("geometry.eps", format!("{} not in (0, 1)", self.geometry.eps));
        }
        if self.geometry.samples == 0 {
            return fail("geometry.samples", "must be at least 1".into());
        }
        self.spec.build()?;
        if !(self.quantum.beta > 0.0) {
            return fail("quantum.beta", format!("{} must be positive", self.quantum.beta));
        }
        if self.quantum.d == 0 {
            return fail("quantum.d", "must be at least 1".into());
        }
        if self.quantum.d_prime != self.quantum.theta.len() {
            return fail(
                "quantum.theta",
                format!(
                    "{} entries, d_prime is {}",
                    self.quantum.theta.len(),
                    self.quantum.d_prime
                ),
            );
        }
        self.quantum.group_element()?;
        if self.quantum.l < 2 {
            return fail("quantum.l", "needs at least 2 time slices".into());
        }
        if self.quantum.g < 2 {
            return fail("quantum.g", "needs at least 2 grid points".into());
        }
        let min_np = match self.schedule.n_prime.iter().min() {
            Some(&m) => m,
            None => return fail("schedule.n_prime", "empty sweep".into()),
        };
        if !(self.schedule.n < self.schedule.r_bar && self.schedule.r_bar < min_np) {
            return fail(
                "schedule.r_bar",
                format!(
                    "need n < r_bar < min n_prime, got {} / {} / {}",
                    self.schedule.n, self.schedule.r_bar, min_np
                ),
            );
        }
        if min_np > self.geometry.height {
            return fail(
                "schedule.n_prime",
                format!("min {} exceeds geometry.height {}", min_np, self.geometry.height),
            );
        }
        if !(self.schedule.a > 1.0) {
            return fail("schedule.a", format!("{} must exceed 1", self.schedule.a));
        }
        if self.mc.sweeps == 0 || self.mc.chains == 0 {
            return fail("mc.sweeps", "sweeps and chains must be positive".into());
        }
        if self.mc.batches < 2 || self.mc.sweeps < self.mc.batches {
            return fail(
                "mc.batches",
                format!("need 2 <= batches <= sweeps, got {} / {}", self.mc.batches, self.mc.sweeps),
            );
        }
        if self.output.directory.is_empty() {
            return fail("output.directory", "must not be empty".into());
        }
        Ok(())
    }
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_seconds: f64,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
    pub failure_stage: Option<String>,
}

/// Collects artifacts for one run: files are written as "<name>.partial"
/// and renamed only when the owning stage completes.
struct Emitter {
    dir: PathBuf,
    pending: Vec<(PathBuf, String, String)>,
    outputs: Vec<OutputRecord>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self, StageError> {
        fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            pending: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn emit(&mut self, name: &str, content: String) -> Result<(), StageError> {
        let partial = self.dir.join(format!("{name}.partial"));
        let hash = sha256_hex(content.as_bytes());
        fs::write(&partial, &content)?;
        self.pending.push((partial, name.to_string(), hash));
        Ok(())
    }

    fn finish_stage(&mut self) -> Result<(), StageError> {
        for (partial, name, hash) in self.pending.drain(..) {
            let final_path = self.dir.join(&name);
            fs::rename(&partial, &final_path)?;
            self.outputs.push(OutputRecord {
                path: name,
                sha256: hash,
            });
        }
        Ok(())
    }
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    threads: usize,
    emitter: Emitter,
    stages: Vec<StageRecord>,
}

impl RunContext<'_> {
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> Result<T, StageError>,
    ) -> Result<T, StageError> {
        let start = Instant::now();
        let result = f(self);
        self.stages.push(StageRecord {
            name: name.to_string(),
            wall_seconds: start.elapsed().as_secs_f64(),
            status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        });
        if result.is_ok() {
            self.emitter.finish_stage()?;
        }
        result
    }
}

/// Runs one subcommand end to end. The manifest is returned in both the
/// success and failure cases so the caller can always persist it.
pub fn run(
    cmd: Subcommand,
    config: &ExperimentConfig,
    output_dir: &Path,
    threads: usize,
) -> (RunManifest, Result<(), StageError>) {
    let config_json = serde_json::to_value(config).expect("config serializes");
    let config_hash = sha256_hex(
        serde_json::to_string(&config_json)
            .expect("config serializes")
            .as_bytes(),
    );
    let mut manifest = RunManifest {
        tool: "lorentzfk".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: cmd.as_str().to_string(),
        seed: config.seed,
        threads,
        config: config_json,
        config_sha256: config_hash,
        stages: Vec::new(),
        outputs: Vec::new(),
        failure_stage: None,
    };

    let emitter = match Emitter::new(output_dir) {
        Ok(e) => e,
        Err(e) => return (manifest, Err(e)),
    };
    let mut ctx = RunContext {
        config,
        threads,
        emitter,
        stages: Vec::new(),
    };

    let result = (|| -> Result<(), StageError> {
        ctx.stage("validate", |c| c.config.validate())?;
        match cmd {
            Subcommand::SampleCdlt => run_sample_cdlt(&mut ctx),
            Subcommand::GeometryStats => run_geometry_stats(&mut ctx),
            Subcommand::McRun => run_mc(&mut ctx),
            Subcommand::OracleCheck => run_oracle_check(&mut ctx),
            Subcommand::MwVerify => run_mw_verify(&mut ctx),
        }
    })();

    if result.is_err() {
        manifest.failure_stage = ctx
            .stages
            .iter()
            .rev()
            .find(|s| s.status == "failed")
            .map(|s| s.name.clone());
    }
    manifest.stages = ctx.stages;
    manifest.outputs = ctx.emitter.outputs;

    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_path = output_dir.join("manifest.json");
    if let Err(e) = fs::write(&manifest_path, manifest_json) {
        return (manifest, Err(StageError::IoFailure(e.to_string())));
    }
    (manifest, result)
}

fn layer_csv(rows: &[(usize, usize, usize)]) -> String {
    let mut out = String::from("sample_id,level,k_level\n");
    for &(id, level, k) in rows {
        writeln!(out, "{id},{level},{k}").unwrap();
    }
    out
}

fn run_sample_cdlt(ctx: &mut RunContext) -> Result<(), StageError> {
    ctx.stage("sample-cdlt", |c| {
        let cfg = c.config;
        let dist = cfg.offspring.build()?;
        let mut rows = Vec::new();
        for id in 0..cfg.geometry.samples {
            let mut rng = derive_stream(cfg.seed, "sample-cdlt", id as u64);
            let tree = sample_sb_tree(&dist, cfg.geometry.height, &mut rng);
            let tri = tree_to_triangulation(&tree)
                .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
            c.emitter
                .emit(&format!("tree_{id:04}.txt"), tree.to_canonical())?;
            c.emitter
                .emit(&format!("graph_{id:04}.txt"), tri.to_canonical())?;
            for (level, k) in tri.layer_sizes().iter().enumerate() {
                rows.push((id, level, *k));
            }
        }
        c.emitter.emit("layers.csv", layer_csv(&rows))
    })
}

fn run_geometry_stats(ctx: &mut RunContext) -> Result<(), StageError> {
    ctx.stage("geometry-stats", |c| {
        let cfg = c.config;
        let dist = cfg.offspring.build()?;
        let spec = cfg.spec.build()?;
        let mut layer_rows = Vec::new();
        let mut growth = String::from("sample_id,growth_constant,j_sum,j_sum_tail\n");
        for id in 0..cfg.geometry.samples {
            let mut rng = derive_stream(cfg.seed, "geometry-stats", id as u64);
            let ks = sample_sb_layer_sizes(&dist, cfg.geometry.height, &mut rng);
            for (level, k) in ks.iter().enumerate() {
                layer_rows.push((id, level, *k));
            }
            let lambda = growth_constant(&ks, cfg.geometry.eps)
                .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
            let jsum = j_layer_sum(&ks, &spec.decay_j, cfg.geometry.eps)
                .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
            writeln!(
                growth,
                "{id},{},{},{}",
                fmt17(lambda),
                fmt17(jsum.value),
                fmt17(jsum.tail_bound)
            )
            .unwrap();
        }
        c.emitter.emit("layers.csv", layer_csv(&layer_rows))?;
        c.emitter.emit("growth.csv", growth)
    })
}

/// Ball of radius `r` around vertex 0, ordered by (distance, id) so that
/// smaller balls are prefixes of larger ones.
fn root_ball(oracle: &DistanceOracle, r: usize) -> Result<Vec<usize>, StageError> {
    let d = oracle
        .distances_from(0)
        .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
    let mut ball: Vec<usize> = (0..oracle.vertex_count())
        .filter(|&v| (d[v] as usize) <= r)
        .collect();
    ball.sort_by_key(|&v| (d[v], v));
    Ok(ball)
}

fn rdmk_csv_rows(out: &mut String, level: usize, est: &RdmKernelEstimate) {
    let dw = est.window_dim();
    for x in 0..dw {
        for y in 0..dw {
            writeln!(
                out,
                "{level},{x},{y},{},{},{},{},{},{},{}",
                fmt17(est.value(x, y)),
                fmt17(est.std_error(x, y)),
                est.method.as_str(),
                est.seed,
                est.l_slices,
                est.grid,
                fmt17(est.beta)
            )
            .unwrap();
        }
    }
}

const RDMK_HEADER: &str = "n,x_index,y_index,value,std_error,method,seed,L,G,beta\n";

/// The uniform kernel cap exp(2 beta (U-bar + C J* V-bar) #V).
fn uniform_cap(
    oracle: &DistanceOracle,
    spec: &InteractionSpec,
    beta: f64,
    volume_len: usize,
) -> Result<f64, StageError> {
    let truncate = oracle.vertex_count() as u32;
    let moment = interaction_moment(oracle, &spec.decay_j, truncate)
        .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
    let cj = moment.value + moment.tail_bound;
    Ok((2.0 * energy_bound(beta, spec, cj, volume_len)).exp())
}

fn check_uniform_bound(
    est: &RdmKernelEstimate,
    cap: f64,
) -> Result<(), StageError> {
    for (i, &v) in est.values.iter().enumerate() {
        if v > cap {
            return Err(StageError::NumericalFailure(format!(
                "kernel value {v} at flat index {i} exceeds the uniform cap {cap}"
            )));
        }
    }
    Ok(())
}

/// Deterministic multi-chain MC: each chain gets its own derived seed, runs
/// independently (concurrency capped at `threads`), and the merge averages
/// values with combined standard errors, independent of the thread cap.
#[allow(clippy::too_many_arguments)]
fn mc_chains_seeded(
    oracle: &DistanceOracle,
    volume: &[usize],
    window: &[usize],
    spec: &InteractionSpec,
    params: &BruteParams,
    mc: &McParams,
    chains: usize,
    threads: usize,
    seed: u64,
) -> Result<RdmKernelEstimate, StageError> {
    let mut results: Vec<Option<Result<RdmKernelEstimate, FkError>>> =
        (0..chains).map(|_| None).collect();
    let cap = threads.max(1);
    std::thread::scope(|scope| {
        let mut chain_id = 0usize;
        for batch in results.chunks_mut(cap) {
            let mut handles = Vec::new();
            for slot in batch.iter_mut() {
                // Per-chain streams come from the chain index; the spawn
                // order never affects the draw sequences.
                let chain_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64
                    .wrapping_mul(chain_id as u64 + 1));
                chain_id += 1;
                handles.push(scope.spawn(move || {
                    *slot = Some(estimate_rdmk_mc(
                        oracle, volume, window, None, spec, params, mc, chain_seed,
                    ));
                }));
            }
            for h in handles {
                h.join().expect("mc chain panicked");
            }
        }
    });
    let mut estimates = Vec::with_capacity(chains);
    for r in results.into_iter().flatten() {
        estimates.push(r?);
    }
    let first = estimates[0].clone();
    if estimates.len() == 1 {
        return Ok(first);
    }
    let m = estimates.len() as f64;
    let len = first.values.len();
    let mut values = vec![0.0; len];
    let mut errs = vec![0.0; len];
    for est in &estimates {
        for i in 0..len {
            values[i] += est.values[i] / m;
            errs[i] += est.std_errors[i] * est.std_errors[i];
        }
    }
    for e in errs.iter_mut() {
        *e = e.sqrt() / m;
    }
    Ok(RdmKernelEstimate {
        values,
        std_errors: errs,
        seed,
        ..first
    })
}

fn run_mc(ctx: &mut RunContext) -> Result<(), StageError> {
    let (oracle, _tri) = ctx.stage("mc-geometry", |c| {
        let cfg = c.config;
        let dist = cfg.offspring.build()?;
        let mut rng = derive_stream(cfg.seed, "mc-geometry", 0);
        let tree = sample_sb_tree(&dist, cfg.geometry.height, &mut rng);
        let tri = tree_to_triangulation(&tree)
            .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
        let oracle = DistanceOracle::new(&tri);
        Ok((oracle, tri))
    })?;

    ctx.stage("mc-estimate", |c| {
        let cfg = c.config;
        let spec = cfg.spec.build()?;
        let volume = root_ball(&oracle, cfg.schedule.r_bar)?;
        let window = root_ball(&oracle, cfg.schedule.n)?;
        let guard = (cfg.quantum.g as f64).powi(2 * window.len() as i32);
        if guard > BRUTE_STATE_GUARD {
            return Err(StageError::GuardExceeded(format!(
                "window of {} vertices needs {guard:.3e} grid entries (guard {BRUTE_STATE_GUARD:.1e})",
                window.len()
            )));
        }
        let mc = McParams {
            exterior_samples: cfg.mc.sweeps,
            burn_in_sweeps: Some(cfg.mc.burn_in),
            thin: cfg.mc.thin,
            bridge_samples: cfg.mc.bridge_samples,
            loop_samples: cfg.mc.loop_samples,
            batches: cfg.mc.batches,
        };
        let cap = uniform_cap(&oracle, &spec, cfg.quantum.beta, volume.len())?;
        let mut out = String::from(RDMK_HEADER);
        // Time discretization is the sole approximation knob, so every
        // estimate is reported at L and at 2L.
        for l in [cfg.quantum.l, 2 * cfg.quantum.l] {
            let params = BruteParams {
                grid: cfg.quantum.g,
                l_slices: l,
                beta: cfg.quantum.beta,
            };
            let est = mc_chains_seeded(
                &oracle,
                &volume,
                &window,
                &spec,
                &params,
                &mc,
                cfg.mc.chains,
                c.threads,
                cfg.seed,
            )?;
            check_uniform_bound(&est, cap)?;
            rdmk_csv_rows(&mut out, cfg.schedule.n, &est);
        }
        c.emitter.emit("rdmk.csv", out)
    })
}

#[derive(Serialize)]
struct OracleCheckReport {
    instances: Vec<OracleInstanceReport>,
    uniform_bound_ok: bool,
}

#[derive(Serialize)]
struct OracleInstanceReport {
    volume_len: usize,
    window_len: usize,
    max_z_score: f64,
    max_relative_deviation: f64,
    fkdlr_residual: f64,
    compat_deviation_oracle: f64,
    compat_sigma_mc: f64,
    partition_ratio: f64,
    partition_ess: f64,
}

fn run_oracle_check(ctx: &mut RunContext) -> Result<(), StageError> {
    ctx.stage("oracle-check", |c| {
        let cfg = c.config;
        let spec = cfg.spec.build()?;
        let tree = crate::gw::RootedPlanarTree::chain(3);
        let tri = tree_to_triangulation(&tree)
            .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
        let oracle = DistanceOracle::new(&tri);
        let params = BruteParams {
            grid: cfg.quantum.g,
            l_slices: cfg.quantum.l,
            beta: cfg.quantum.beta,
        };
        let mc = McParams {
            exterior_samples: cfg.mc.sweeps,
            burn_in_sweeps: Some(cfg.mc.burn_in),
            thin: cfg.mc.thin,
            bridge_samples: cfg.mc.bridge_samples,
            loop_samples: cfg.mc.loop_samples,
            batches: cfg.mc.batches,
        };

        let instances: [(&[usize], &[usize]); 3] =
            [(&[0], &[0]), (&[0, 1], &[0]), (&[0, 1, 2], &[0])];
        let mut out = String::from(RDMK_HEADER);
        let mut reports = Vec::new();
        for (k, &(volume, window)) in instances.iter().enumerate() {
            let exact = brute_force_rdmk(&oracle, volume, window, None, &spec, &params)?;
            let sampled = mc_chains_seeded(
                &oracle,
                volume,
                window,
                &spec,
                &params,
                &mc,
                cfg.mc.chains,
                c.threads,
                cfg.seed.wrapping_add(k as u64),
            )?;
            let cap = uniform_cap(&oracle, &spec, cfg.quantum.beta, volume.len())?;
            check_uniform_bound(&exact, cap)?;
            check_uniform_bound(&sampled, cap)?;

            let dw = exact.window_dim();
            let mut max_z = 0.0f64;
            let mut max_rel = 0.0f64;
            // A value fails only when it misses both tolerances: the z
            // band alone is too strict for the max over dw^2 correlated
            // comparisons, the relative band alone too loose near zeros.
            for x in 0..dw {
                for y in 0..dw {
                    let diff = (sampled.value(x, y) - exact.value(x, y)).abs();
                    let sigma = sampled.std_error(x, y).max(1e-12);
                    let z = diff / sigma;
                    let rel = diff / exact.value(x, y).abs().max(1e-12);
                    max_z = max_z.max(z);
                    max_rel = max_rel.max(rel);
                    if z > 3.0 && rel > 0.02 {
                        return Err(StageError::NumericalFailure(format!(
                            "MC vs oracle off by {z:.2} sigma and {:.2}% at ({x},{y}) on instance {k}",
                            100.0 * rel
                        )));
                    }
                }
            }

            let residual = fkdlr_residual(
                &oracle,
                volume,
                window,
                None,
                &spec,
                &params,
                4,
                cfg.seed.wrapping_add(100 + k as u64),
            )?;
            if residual > 1e-9 {
                return Err(StageError::NumericalFailure(format!(
                    "conditional-density residual {residual:.3e} on instance {k}"
                )));
            }

            // Compatibility: trace the full-volume kernel down to the window.
            let (compat_dev, compat_sigma) = if volume.len() > window.len() {
                let wide =
                    brute_force_rdmk(&oracle, volume, volume, None, &spec, &params)?;
                let rep = compatibility_check(&wide, &exact)?;
                if rep.max_deviation > 1e-8 {
                    return Err(StageError::NumericalFailure(format!(
                        "compatibility deviation {:.3e} on instance {k}",
                        rep.max_deviation
                    )));
                }
                let rep_mc = compatibility_check(&wide, &sampled)?;
                let scale = exact.values.iter().cloned().fold(0.0f64, f64::max);
                if rep_mc.max_sigma_deviation > 3.0
                    && rep_mc.max_deviation > 0.02 * scale
                {
                    return Err(StageError::NumericalFailure(format!(
                        "MC compatibility off by {:.2} sigma and {:.3e} absolute on instance {k}",
                        rep_mc.max_sigma_deviation, rep_mc.max_deviation
                    )));
                }
                (rep.max_deviation, rep_mc.max_sigma_deviation)
            } else {
                (0.0, 0.0)
            };

            let mut rng = derive_stream(cfg.seed, "oracle-partition", k as u64);
            let pr = partition_ratio(
                &oracle,
                volume,
                None,
                &spec,
                cfg.quantum.beta,
                cfg.quantum.l,
                cfg.quantum.d,
                cfg.mc.sweeps.max(64),
                &mut rng,
            )?;

            rdmk_csv_rows(&mut out, cfg.schedule.n, &exact);
            rdmk_csv_rows(&mut out, cfg.schedule.n, &sampled);
            reports.push(OracleInstanceReport {
                volume_len: volume.len(),
                window_len: window.len(),
                max_z_score: max_z,
                max_relative_deviation: max_rel,
                fkdlr_residual: residual,
                compat_deviation_oracle: compat_dev,
                compat_sigma_mc: compat_sigma,
                partition_ratio: pr.ratio,
                partition_ess: pr.effective_samples,
            });
        }
        let report = OracleCheckReport {
            instances: reports,
            uniform_bound_ok: true,
        };
        c.emitter.emit("rdmk.csv", out)?;
        c.emitter.emit(
            "checks.json",
            serde_json::to_string_pretty(&report)
                .map_err(|e| StageError::IoFailure(e.to_string()))?,
        )
    })
}

fn run_mw_verify(ctx: &mut RunContext) -> Result<(), StageError> {
    let (oracle, tri) = ctx.stage("mw-geometry", |c| {
        let cfg = c.config;
        let dist = cfg.offspring.build()?;
        let mut rng = derive_stream(cfg.seed, "mw-geometry", 0);
        let tree = sample_sb_tree(&dist, cfg.geometry.height, &mut rng);
        let tri = tree_to_triangulation(&tree)
            .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
        let oracle = DistanceOracle::new(&tri);
        Ok((oracle, tri))
    })?;

    ctx.stage("mw-verify", |c| {
        let cfg = c.config;
        let spec = cfg.spec.build()?;
        let g = cfg.quantum.group_element()?;
        let radial = radial_profile(
            &oracle,
            0,
            cfg.schedule.radial,
            &levels_of(&tri),
        )?;
        let layers = tri.layer_sizes();

        let mut taylor_rng = derive_stream(cfg.seed, "mw-taylor", 0);
        let c_fit = fit_taylor_constant(
            &spec.potential_v,
            spec.v_bar,
            &g,
            cfg.quantum.beta,
            cfg.quantum.l,
            cfg.quantum.d,
            512,
            &mut taylor_rng,
        )?;

        let mut records = Vec::new();
        let mut sweep: Vec<usize> = cfg.schedule.n_prime.clone();
        sweep.sort_unstable();
        for (idx, &np) in sweep.iter().enumerate() {
            let sched =
                TunedSchedule::new(g.clone(), cfg.schedule.n, cfg.schedule.r_bar, np)?;
            // The certificate needs the cost over every de-synchronized
            // pair, not just those meeting the window ball, and each
            // unordered pair enters the energy twice with a time integral
            // bounded by beta times the worst slice gap.
            let phi_full = phi_full_cost(
                &sched,
                &oracle,
                &radial,
                &layers,
                &spec.decay_j,
                cfg.geometry.eps,
            )?;
            let phi_cert = phi_full.value + phi_full.tail_bound;
            let c_cert = 2.0 * cfg.quantum.beta * c_fit * spec.v_bar;

            let ball = root_ball(&oracle, np)?;
            if ball.len() > 4096 {
                return Err(StageError::GuardExceeded(format!(
                    "fade ball of {} vertices at n' = {np}",
                    ball.len()
                )));
            }
            let shell: Vec<usize> = {
                let d = oracle
                    .distances_from(0)
                    .map_err(|e| StageError::NumericalFailure(e.to_string()))?;
                (0..oracle.vertex_count())
                    .filter(|&v| d[v] as usize == np + 1)
                    .take(8)
                    .collect()
            };
            let mut bdy_rng = derive_stream(cfg.seed, "mw-boundary", idx as u64);
            let boundary: Option<BTreeMap<usize, TorusPoint>> = if shell.is_empty() {
                None
            } else {
                Some(
                    shell
                        .iter()
                        .map(|&v| {
                            use rand::Rng;
                            let p = TorusPoint::new(
                                (0..cfg.quantum.d)
                                    .map(|_| bdy_rng.gen::<f64>())
                                    .collect(),
                            );
                            (v, p)
                        })
                        .collect(),
                )
            };
            let conv = convexity_check(
                &sched,
                &oracle,
                &radial,
                &ball,
                boundary.as_ref(),
                &spec,
                cfg.quantum.beta,
                cfg.quantum.l,
                cfg.schedule.a,
                c_cert,
                phi_cert,
                cfg.mc.sweeps,
                cfg.seed.wrapping_add(idx as u64),
            )?;

            let (gap_kernel, gap_ratio) =
                verify_gap(c, &oracle, &spec, np, boundary.as_ref())?;
            records.push(VerifierRecord {
                n_prime: np,
                phi: phi_cert,
                q_margin: conv.q_margin,
                satisfaction_fraction: conv.satisfaction_fraction,
                gap_kernel,
                gap_ratio,
            });
        }

        let mut csv =
            String::from("n_prime,phi,q_margin,satisfaction_fraction,gap_kernel,gap_ratio\n");
        for r in &records {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.n_prime,
                fmt17(r.phi),
                fmt17(r.q_margin),
                fmt17(r.satisfaction_fraction),
                fmt17(r.gap_kernel),
                fmt17(r.gap_ratio)
            )
            .unwrap();
        }
        c.emitter.emit(
            "verifier.json",
            serde_json::to_string_pretty(&records)
                .map_err(|e| StageError::IoFailure(e.to_string()))?,
        )?;
        c.emitter.emit("verifier.csv", csv)
    })
}

fn levels_of(tri: &Triangulation) -> Vec<usize> {
    tri.level.clone()
}

/// Kernel-transport and ratio gaps for one n': the chain engine when the
/// coupling is nearest-neighbor and the volume is a root path, otherwise the
/// dense engine on a guard-feasible ball.
fn verify_gap(
    ctx: &RunContext,
    oracle: &DistanceOracle,
    spec: &InteractionSpec,
    np: usize,
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
) -> Result<(f64, f64), StageError> {
    let cfg = ctx.config;
    let params = BruteParams {
        grid: cfg.quantum.g,
        l_slices: cfg.quantum.l,
        beta: cfg.quantum.beta,
    };
    let shift = shift_steps_of(cfg)?;
    if matches!(spec.decay_j, DecayJ::RangeOne { .. }) {
        let n = np.min(oracle.vertex_count() - 1).max(2);
        let volume: Vec<usize> = (0..n).collect();
        if let Ok(est) = chain_rdmk(oracle, &volume, boundary, spec, &params) {
            let gap_kernel = kernel_transport_gap(&est, shift);
            let recs = invariance_gap(
                oracle,
                &[n],
                shift,
                spec,
                &params,
                boundary.and_then(|b| b.values().next()),
                64,
                cfg.seed,
            )?;
            return Ok((gap_kernel, recs[0].gap_ratio));
        }
    }
    // Dense fallback on the largest guard-feasible root ball.
    let mut m = 3usize;
    while m > 1 && (cfg.quantum.g as f64).powi(2 * m as i32) > BRUTE_STATE_GUARD {
        m -= 1;
    }
    let ball = root_ball(oracle, np)?;
    let volume: Vec<usize> = ball.into_iter().take(m).collect();
    let est = brute_force_rdmk(oracle, &volume, &volume[..1], boundary, spec, &params)?;
    let gap_kernel = kernel_transport_gap(&est, shift);
    Ok((gap_kernel, f64::NAN))
}

/// The grid-aligned shift of the configured action; errors when theta A is
/// not a rational multiple of the grid spacing (transport would need
/// interpolation).
fn shift_steps_of(cfg: &ExperimentConfig) -> Result<usize, StageError> {
    let g = cfg.quantum.group_element()?;
    let probe = TorusPoint::new(vec![0.0; cfg.quantum.d]);
    let shifted = crate::torus::apply_group_point(&g, &probe)
        .map_err(|e| StageError::ConfigInvalid(format!("quantum.theta: {e}")))?;
    let delta = shifted.coords[0];
    let steps = delta * cfg.quantum.g as f64;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(StageError::ConfigInvalid(format!(
            "quantum.theta: shift {delta} is not a multiple of 1/G = 1/{}",
            cfg.quantum.g
        )));
    }
    Ok(steps.round() as usize % cfg.quantum.g)
}
