//! Tuned-action machinery: the z/Q/theta/gamma profiles, spatially
//! interpolated group actions, the quadratic cost functional Phi and its
//! decay, the convexity inequality, and kernel-level invariance gaps.
//!
//! A tuned action applies a circle shift theta at full strength near the
//! root, fades it out radially through the profile gamma, and is the
//! identity far away. Its cost Phi sums J(d) |Delta gamma|^2 over pairs;
//! because gamma's increments are governed by the slowly varying z/Q
//! profile, Phi vanishes as the fade-out radius n' grows, which is what
//! forces the limiting states to be symmetric.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdlt::{j_layer_sum, DistanceOracle, TailBounded};
use crate::fk::brute::{BruteParams, FkError};
use crate::fk::chain::{chain_rdmk, kernel_transport_gap};
use crate::fk::config::LoopConfiguration;
use crate::interaction::{
    classical_pair_energy, conditional_energy, pair_energy, self_energy, DecayJ,
    InteractionError, InteractionSpec, PotentialV,
};
use crate::rng::derive_stream;
use crate::torus::{
    apply_group_path, apply_group_point, sample_loop, DiscretizedPath, GroupElement,
    TorusPoint,
};

#[derive(Debug, Error)]
pub enum MwError {
    #[error("Q requires a positive argument, got {0}")]
    NonpositiveB(f64),
    #[error("decay fit needs at least 5 points, got {0}")]
    NotEnoughPoints(usize),
    #[error("schedule must satisfy n < r_bar < n_prime, got n={n} r_bar={r_bar} n_prime={n_prime}")]
    BadSchedule {
        n: usize,
        r_bar: usize,
        n_prime: usize,
    },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Fk(#[from] FkError),
}

/// The slowly varying decay speed: 1 on (-inf, 2], then 1/(u ln u). The
/// jump at u = 2 (from 1 down to 1/(2 ln 2)) is kept as is; smoothing it
/// would change the closed form of Q.
pub fn z_fn(u: f64) -> f64 {
    if u <= 2.0 {
        1.0
    } else {
        1.0 / (u * u.ln())
    }
}

/// Q(b) = integral of z from 0 to b: b for b <= 2, else 2 + ln(ln b / ln 2).
pub fn big_q(b: f64) -> Result<f64, MwError> {
    if !(b > 0.0) {
        return Err(MwError::NonpositiveB(b));
    }
    Ok(if b <= 2.0 {
        b
    } else {
        2.0 + (b.ln() / 2.0f64.ln()).ln()
    })
}

/// Normalized tail mass of z: 1 for a <= 0, (1/Q(b)) int_a^b z for
/// 0 < a < b, and 0 for a >= b.
pub fn theta_fn(a: f64, b: f64) -> Result<f64, MwError> {
    let qb = big_q(b)?;
    Ok(if a <= 0.0 {
        1.0
    } else if a >= b {
        0.0
    } else {
        (qb - big_q(a)?) / qb
    })
}

/// A tuned group action: full strength g inside the window level n, fading
/// to the identity at radius n_prime, with the plateau ending at r_bar.
#[derive(Clone, Debug)]
pub struct TunedSchedule {
    pub g: GroupElement,
    pub n: usize,
    pub r_bar: usize,
    pub n_prime: usize,
}

impl TunedSchedule {
    pub fn new(
        g: GroupElement,
        n: usize,
        r_bar: usize,
        n_prime: usize,
    ) -> Result<Self, MwError> {
        if !(n < r_bar && r_bar < n_prime) {
            return Err(MwError::BadSchedule { n, r_bar, n_prime });
        }
        Ok(TunedSchedule {
            g,
            n,
            r_bar,
            n_prime,
        })
    }

    pub fn theta_norm_sq(&self) -> f64 {
        self.g.theta.iter().map(|t| t * t).sum()
    }
}

/// Per-vertex strength multiplier: 1 up to r_bar, then the theta_fn fade,
/// identically 0 from n_prime on. Bit-exact at both plateaus.
pub fn gamma_profile(schedule: &TunedSchedule, k: usize) -> f64 {
    if k <= schedule.r_bar {
        1.0
    } else if k >= schedule.n_prime {
        0.0
    } else {
        theta_fn(
            (k - schedule.r_bar) as f64,
            (schedule.n_prime - schedule.r_bar) as f64,
        )
        .expect("n_prime > r_bar by construction")
    }
}

/// Which radial coordinate drives the fade: graph distance to the root (the
/// default), or the layer height (a sensitivity toggle; the two differ on
/// general triangulations).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialCoordinate {
    GraphDistance,
    Height,
}

/// Radial coordinate of every vertex relative to `root`.
pub fn radial_profile(
    oracle: &DistanceOracle,
    root: usize,
    coord: RadialCoordinate,
    levels: &[usize],
) -> Result<Vec<usize>, MwError> {
    match coord {
        RadialCoordinate::GraphDistance => {
            let d = oracle
                .distances_from(root)
                .map_err(|e| MwError::Geometry(e.to_string()))?;
            Ok(d.iter().map(|&x| x as usize).collect())
        }
        RadialCoordinate::Height => {
            if levels.len() != oracle.vertex_count() {
                return Err(MwError::Geometry(format!(
                    "level table covers {} vertices, geometry has {}",
                    levels.len(),
                    oracle.vertex_count()
                )));
            }
            Ok(levels.to_vec())
        }
    }
}

/// Vertex -> group element of the tuned action: g scaled by gamma of the
/// radial coordinate. Equals g on the window ball, identity beyond n_prime.
pub fn build_tuned_action(
    schedule: &TunedSchedule,
    radial: &[usize],
) -> Vec<GroupElement> {
    radial
        .iter()
        .map(|&k| schedule.g.scaled(gamma_profile(schedule, k)))
        .collect()
}

/// Second-order cancellation of a symmetric pair of tuned shifts:
/// sup over shared slice times of
/// |V(g_i w, g_j w') + V(g_i^-1 w, g_j^-1 w') - 2 V(w, w')|.
pub fn taylor_gap(
    v: &PotentialV,
    omega_i: &DiscretizedPath,
    omega_j: &DiscretizedPath,
    gamma_i: f64,
    gamma_j: f64,
    g: &GroupElement,
) -> Result<f64, MwError> {
    let gi = g.scaled(gamma_i);
    let gj = g.scaled(gamma_j);
    let gi_inv = gi.inverse();
    let gj_inv = gj.inverse();
    let mut worst = 0.0f64;
    for (a, b) in omega_i.slices.iter().zip(&omega_j.slices) {
        let base = v.eval(a, b);
        let plus = v.eval(
            &apply_group_point(&gi, a).map_err(|e| MwError::Geometry(e.to_string()))?,
            &apply_group_point(&gj, b).map_err(|e| MwError::Geometry(e.to_string()))?,
        );
        let minus = v.eval(
            &apply_group_point(&gi_inv, a)
                .map_err(|e| MwError::Geometry(e.to_string()))?,
            &apply_group_point(&gj_inv, b)
                .map_err(|e| MwError::Geometry(e.to_string()))?,
        );
        worst = worst.max((plus + minus - 2.0 * base).abs());
    }
    Ok(worst)
}

/// Empirical constant C with gap <= C |theta|^2 |Delta gamma|^2 V-bar over
/// random loop pairs and multiplier gaps: the sup of the observed ratio.
pub fn fit_taylor_constant<R: Rng + ?Sized>(
    v: &PotentialV,
    v_bar: f64,
    g: &GroupElement,
    beta: f64,
    l_slices: usize,
    dim: usize,
    pairs: usize,
    rng: &mut R,
) -> Result<f64, MwError> {
    let theta_sq: f64 = g.theta.iter().map(|t| t * t).sum();
    if theta_sq == 0.0 || v_bar == 0.0 {
        return Ok(0.0);
    }
    let mut c = 0.0f64;
    for _ in 0..pairs {
        let x = TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect());
        let y = TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect());
        let wi = sample_loop(&x, beta, l_slices, rng)
            .map_err(|e| MwError::Geometry(e.to_string()))?;
        let wj = sample_loop(&y, beta, l_slices, rng)
            .map_err(|e| MwError::Geometry(e.to_string()))?;
        let gi: f64 = rng.gen();
        let gj: f64 = rng.gen();
        let dg2 = (gi - gj) * (gi - gj);
        if dg2 < 1e-4 {
            continue;
        }
        let gap = taylor_gap(v, &wi, &wj, gi, gj, g)?;
        c = c.max(gap / (theta_sq * dg2 * v_bar));
    }
    Ok(c)
}

/// The quadratic action cost
/// Phi = |theta|^2 sum over (j, j') in (window ball) x (all vertices) of
/// J(d(j,j')) (gamma_kj - gamma_kj')^2, with a layer-majorant tail bound
/// for the part of the lattice beyond the finite geometry.
pub fn phi_series(
    schedule: &TunedSchedule,
    oracle: &DistanceOracle,
    root: usize,
    radial: &[usize],
    layers: &[usize],
    j: &DecayJ,
    eps: f64,
) -> Result<TailBounded, MwError> {
    let theta_sq = schedule.theta_norm_sq();
    let gamma: Vec<f64> = radial
        .iter()
        .map(|&k| gamma_profile(schedule, k))
        .collect();
    let root_dist = oracle
        .distances_from(root)
        .map_err(|e| MwError::Geometry(e.to_string()))?;
    let ball: Vec<usize> = (0..oracle.vertex_count())
        .filter(|&v| (root_dist[v] as usize) <= schedule.n)
        .collect();

    let mut phi = 0.0;
    for &a in &ball {
        let da = oracle
            .distances_from(a)
            .map_err(|e| MwError::Geometry(e.to_string()))?;
        for b in 0..oracle.vertex_count() {
            if b == a {
                continue;
            }
            let dg = gamma[a] - gamma[b];
            if dg == 0.0 {
                continue;
            }
            phi += j.eval(da[b]) * dg * dg;
        }
    }

    // Beyond the finite geometry |Delta gamma| <= 1, so the per-window-vertex
    // tail is dominated by the layer-sum majorant's own tail.
    let tail_per_vertex = j_layer_sum(layers, j, eps)
        .map_err(|e| MwError::Geometry(e.to_string()))?
        .tail_bound;
    Ok(TailBounded {
        value: theta_sq * phi,
        tail_bound: theta_sq * ball.len() as f64 * tail_per_vertex,
    })
}

/// The full quadratic cost of the tuned action: |theta|^2 times the sum of
/// J(d) |Delta gamma|^2 over all unordered vertex pairs, not only those
/// meeting the window ball. This is the quantity the convexity certificate
/// needs: every pair the action de-synchronizes contributes energy drift,
/// wherever it sits. The tail bound covers pairs reaching beyond the finite
/// geometry (where gamma is identically 0).
pub fn phi_full_cost(
    schedule: &TunedSchedule,
    oracle: &DistanceOracle,
    radial: &[usize],
    layers: &[usize],
    j: &DecayJ,
    eps: f64,
) -> Result<TailBounded, MwError> {
    let theta_sq = schedule.theta_norm_sq();
    let gamma: Vec<f64> = radial
        .iter()
        .map(|&k| gamma_profile(schedule, k))
        .collect();
    let moved: Vec<usize> = (0..oracle.vertex_count())
        .filter(|&v| gamma[v] != 0.0)
        .collect();
    let mut phi = 0.0;
    for &a in &moved {
        let da = oracle
            .distances_from(a)
            .map_err(|e| MwError::Geometry(e.to_string()))?;
        for b in 0..oracle.vertex_count() {
            if b == a || (gamma[b] != 0.0 && b < a) {
                // Moved-moved pairs are visited from both ends; keep one.
                continue;
            }
            let dg = gamma[a] - gamma[b];
            if dg == 0.0 {
                continue;
            }
            phi += j.eval(da[b]) * dg * dg;
        }
    }
    let tail_per_vertex = j_layer_sum(layers, j, eps)
        .map_err(|e| MwError::Geometry(e.to_string()))?
        .tail_bound;
    Ok(TailBounded {
        value: theta_sq * phi,
        tail_bound: theta_sq * moved.len() as f64 * tail_per_vertex,
    })
}

#[derive(Clone, Debug)]
pub struct PhiDecayFit {
    /// Slope of the through-origin regression of Phi against 1/Q(n'-r_bar):
    /// the empirical decay constant.
    pub slope: f64,
    /// Root-mean-square regression residual.
    pub residual: f64,
    /// The products Phi(n') Q(n'-r_bar), in n' order.
    pub products: Vec<f64>,
    /// Max/min ratio of the products (infinite if any product is 0 while
    /// another is not).
    pub max_min_ratio: f64,
    /// True when every Phi vanished (theta = 0 family): the fit carries no
    /// information.
    pub degenerate: bool,
    /// Bounded products and a nonincreasing first-to-last trend.
    pub pass: bool,
}

/// Regression of Phi(n') against 1/Q(n'-r_bar) over an n' sweep.
pub fn phi_decay_fit(points: &[(usize, f64)], r_bar: usize) -> Result<PhiDecayFit, MwError> {
    if points.len() < 5 {
        return Err(MwError::NotEnoughPoints(points.len()));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut products = Vec::with_capacity(points.len());
    for &(np, phi) in points {
        if np <= r_bar {
            return Err(MwError::BadSchedule {
                n: 0,
                r_bar,
                n_prime: np,
            });
        }
        let q = big_q((np - r_bar) as f64)?;
        xs.push(1.0 / q);
        products.push(phi * q);
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, &(_, phi))| x * phi)
        .sum();
    let slope = sxy / sxx;
    let residual = (xs
        .iter()
        .zip(points)
        .map(|(x, &(_, phi))| (phi - slope * x) * (phi - slope * x))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let degenerate = products.iter().all(|&p| p == 0.0);
    let (max_min_ratio, pass) = if degenerate {
        (1.0, true)
    } else {
        let max = products.iter().cloned().fold(f64::MIN, f64::max);
        let min = products.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
        let trend_ok = products[products.len() - 1] <= products[0] * (1.0 + 1e-9);
        (ratio, ratio < 5.0 && trend_ok)
    };
    Ok(PhiDecayFit {
        slope,
        residual,
        products,
        max_min_ratio,
        degenerate,
        pass,
    })
}

/// Max violation of the radial Lipschitz bound
/// 0 <= gamma(k) - gamma(k') <= d(j,j') z(k - r_bar) / Q(n' - r_bar)
/// over all vertex pairs with k <= k'; 0 means the bound holds exhaustively.
pub fn lipschitz_violation(
    schedule: &TunedSchedule,
    oracle: &DistanceOracle,
    radial: &[usize],
) -> Result<f64, MwError> {
    let qb = big_q((schedule.n_prime - schedule.r_bar) as f64)?;
    let gamma: Vec<f64> = radial
        .iter()
        .map(|&k| gamma_profile(schedule, k))
        .collect();
    let n = oracle.vertex_count();
    let mut worst = 0.0f64;
    for a in 0..n {
        let da = oracle
            .distances_from(a)
            .map_err(|e| MwError::Geometry(e.to_string()))?;
        for b in 0..n {
            if a == b || radial[a] > radial[b] {
                continue;
            }
            let diff = gamma[a] - gamma[b];
            worst = worst.max(-diff);
            let cap = da[b] as f64
                * z_fn(radial[a] as f64 - schedule.r_bar as f64)
                / qb;
            worst = worst.max(diff - cap);
        }
    }
    Ok(worst)
}

/// Energy change of a per-vertex tuned transformation, summing only the
/// terms that can move: self terms of shifted vertices, pair terms with
/// unequal multipliers (equal rigid shifts cancel in the difference-kernel
/// V), and classical terms of shifted vertices.
fn tuned_energy_delta(
    config: &LoopConfiguration,
    action: &[GroupElement],
    gamma: &[f64],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    oracle: &DistanceOracle,
    spec: &InteractionSpec,
) -> Result<f64, MwError> {
    let vertices: Vec<usize> = config.vertices().collect();
    let mut moved: BTreeMap<usize, DiscretizedPath> = BTreeMap::new();
    for &v in &vertices {
        if gamma[v] != 0.0 {
            moved.insert(
                v,
                apply_group_path(&action[v], config.get(v).unwrap())
                    .map_err(|e| MwError::Geometry(e.to_string()))?,
            );
        }
    }
    let path_of = |v: usize| moved.get(&v).unwrap_or_else(|| config.get(v).unwrap());

    let mut delta = 0.0;
    for &v in &vertices {
        if gamma[v] == 0.0 {
            continue;
        }
        delta += self_energy(path_of(v), spec) - self_energy(config.get(v).unwrap(), spec);
        if let Some(bdy) = boundary {
            for (&b, point) in bdy {
                let d = oracle
                    .distance(v, b)
                    .map_err(|e| MwError::Geometry(e.to_string()))?;
                delta += classical_pair_energy(path_of(v), point, d, spec)?
                    - classical_pair_energy(config.get(v).unwrap(), point, d, spec)?;
            }
        }
    }
    for (i, &a) in vertices.iter().enumerate() {
        for &b in vertices.iter().skip(i + 1) {
            if gamma[a] == gamma[b] {
                continue;
            }
            let d = oracle
                .distance(a, b)
                .map_err(|e| MwError::Geometry(e.to_string()))?;
            let before = pair_energy(config.get(a).unwrap(), config.get(b).unwrap(), d, spec)?
                + pair_energy(config.get(b).unwrap(), config.get(a).unwrap(), d, spec)?;
            let after = pair_energy(path_of(a), path_of(b), d, spec)?
                + pair_energy(path_of(b), path_of(a), d, spec)?;
            delta += after - before;
        }
    }
    Ok(delta)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub violations: usize,
    pub satisfaction_fraction: f64,
    /// Smallest observed margin (a/2)(e^{-dh+} + e^{-dh-}) - 1.
    pub min_margin: f64,
    /// The analytic sufficient margin a exp(-C Phi / 2); > 1 certifies the
    /// inequality, provided C Phi dominates the full two-sided energy drift.
    /// That requires Phi to be the full pair cost of the action (see
    /// `phi_full_cost`) and the single-site potential to be invariant under
    /// the group; a non-invariant U adds drift the pair cost cannot see.
    pub q_margin: f64,
}

/// Checks the two-sided convexity inequality
/// (a/2)(e^{-h(S w)} + e^{-h(S^-1 w)}) >= e^{-h(w)} on freely sampled loop
/// configurations over `volume` with random classical boundary spins; the
/// inequality is pointwise, so free samples probe it as well as Gibbs ones.
#[allow(clippy::too_many_arguments)]
pub fn convexity_check(
    schedule: &TunedSchedule,
    oracle: &DistanceOracle,
    radial: &[usize],
    volume: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    beta: f64,
    l_slices: usize,
    a: f64,
    c_fit: f64,
    phi: f64,
    samples: usize,
    seed: u64,
) -> Result<ConvexityReport, MwError> {
    let dim = schedule.g.dim();
    let action = build_tuned_action(schedule, radial);
    let inverse: Vec<GroupElement> = action.iter().map(GroupElement::inverse).collect();
    let gamma: Vec<f64> = radial
        .iter()
        .map(|&k| gamma_profile(schedule, k))
        .collect();
    let mut rng = derive_stream(seed, "convexity", 0);
    let mut violations = 0usize;
    let mut min_margin = f64::INFINITY;
    for _ in 0..samples {
        let loops: BTreeMap<usize, DiscretizedPath> = volume
            .iter()
            .map(|&v| {
                let x = TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect());
                (v, sample_loop(&x, beta, l_slices, &mut rng).unwrap())
            })
            .collect();
        let config =
            LoopConfiguration::new(loops).map_err(|e| MwError::Geometry(e.to_string()))?;
        let d_plus =
            tuned_energy_delta(&config, &action, &gamma, boundary, oracle, spec)?;
        let d_minus =
            tuned_energy_delta(&config, &inverse, &gamma, boundary, oracle, spec)?;
        let margin = 0.5 * a * ((-d_plus).exp() + (-d_minus).exp()) - 1.0;
        min_margin = min_margin.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
    }
    Ok(ConvexityReport {
        samples,
        violations,
        satisfaction_fraction: 1.0 - violations as f64 / samples.max(1) as f64,
        min_margin,
        q_margin: a * (-c_fit * phi / 2.0).exp(),
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapRecord {
    pub volume: usize,
    /// Max kernel deviation under grid transport of the shift.
    pub gap_kernel: f64,
    /// Max deviation of the conditional-density ratio from 1 under a rigid
    /// shift of the whole volume configuration.
    pub gap_ratio: f64,
}

/// Invariance diagnostics over a sequence of path-graph volumes rooted at
/// vertex 0 of `oracle`: the exact kernel-transport gap of the root window
/// under the rational grid shift, and the sampled conditional-density ratio
/// deviation. The optional classical spin sits at vertex N, just outside
/// each volume.
#[allow(clippy::too_many_arguments)]
pub fn invariance_gap(
    oracle: &DistanceOracle,
    volumes: &[usize],
    shift_steps: usize,
    spec: &InteractionSpec,
    params: &BruteParams,
    boundary_point: Option<&TorusPoint>,
    ratio_samples: usize,
    seed: u64,
) -> Result<Vec<GapRecord>, MwError> {
    let theta = shift_steps as f64 / params.grid as f64;
    let g = GroupElement::translation_1d(theta);
    let mut records = Vec::with_capacity(volumes.len());
    for (vi, &n) in volumes.iter().enumerate() {
        if n == 0 || n >= oracle.vertex_count() {
            return Err(MwError::Geometry(format!(
                "volume of {n} vertices does not fit the geometry"
            )));
        }
        let volume: Vec<usize> = (0..n).collect();
        let boundary: Option<BTreeMap<usize, TorusPoint>> =
            boundary_point.map(|p| BTreeMap::from([(n, p.clone())]));
        let est = chain_rdmk(oracle, &volume, boundary.as_ref(), spec, params)?;
        let gap_kernel = kernel_transport_gap(&est, shift_steps);

        let mut gap_ratio = 0.0f64;
        let mut rng = derive_stream(seed, "invariance-ratio", vi as u64);
        for _ in 0..ratio_samples {
            let loops: BTreeMap<usize, DiscretizedPath> = volume
                .iter()
                .map(|&v| {
                    let x = TorusPoint::new(vec![rng.gen::<f64>()]);
                    (v, sample_loop(&x, params.beta, params.l_slices, &mut rng).unwrap())
                })
                .collect();
            let config = LoopConfiguration::new(loops)
                .map_err(|e| MwError::Geometry(e.to_string()))?;
            let mut shifted_loops = BTreeMap::new();
            for v in config.vertices() {
                shifted_loops.insert(
                    v,
                    apply_group_path(&g, config.get(v).unwrap())
                        .map_err(|e| MwError::Geometry(e.to_string()))?,
                );
            }
            let shifted = LoopConfiguration::new(shifted_loops)
                .map_err(|e| MwError::Geometry(e.to_string()))?;
            let h0 = conditional_energy(&config, None, boundary.as_ref(), oracle, spec)?;
            let h1 = conditional_energy(&shifted, None, boundary.as_ref(), oracle, spec)?;
            gap_ratio = gap_ratio.max(((h0 - h1).exp() - 1.0).abs());
        }
        records.push(GapRecord {
            volume: n,
            gap_kernel,
            gap_ratio,
        });
    }
    Ok(records)
}

/// One row of the verifier report, per n' in the sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VerifierRecord {
    pub n_prime: usize,
    pub phi: f64,
    pub q_margin: f64,
    pub satisfaction_fraction: f64,
    pub gap_kernel: f64,
    pub gap_ratio: f64,
}
