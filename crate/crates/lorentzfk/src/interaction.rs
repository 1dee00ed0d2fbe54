//! Potentials (U, V, J), their bound constants, symmetry checks, and the
//! path-energy functionals of the loop ensemble.
//!
//! The library ships closed-form potentials whose bound constants and
//! symmetry properties are certifiable, rather than accepting arbitrary
//! user closures: U either vanishes, is constant, or is a single cosine
//! mode; V is a cosine difference kernel (invariant under every
//! translation); J is one of the admissible decay profiles.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdlt::{j_majorant, DistanceOracle, TailBounded};
use crate::fk::config::LoopConfiguration;
use crate::torus::{DiscretizedPath, GroupElement, TorusPoint};

pub const BREAKDOWN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum InteractionError {
    #[error("pair energy needs distance >= 1")]
    ZeroDistance,
    #[error("paths do not share discretization: {0}")]
    MismatchedPaths(String),
    #[error("supports overlap at vertex {0}")]
    OverlappingSupports(usize),
    #[error("decay function violates the admissibility condition: {0}")]
    InadmissibleJ(String),
    #[error("invalid interaction spec: {0}")]
    BadSpec(String),
    #[error("distance lookup failed: {0}")]
    Geometry(String),
}

/// Single-site potential U on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PotentialU {
    Zero,
    Constant { value: f64 },
    /// amplitude * cos(2 pi harmonic * x_coord)
    Cosine {
        amplitude: f64,
        harmonic: i32,
        coord: usize,
    },
}

impl PotentialU {
    pub fn eval(&self, x: &TorusPoint) -> f64 {
        match *self {
            PotentialU::Zero => 0.0,
            PotentialU::Constant { value } => value,
            PotentialU::Cosine {
                amplitude,
                harmonic,
                coord,
            } => amplitude * (2.0 * PI * harmonic as f64 * x.coords[coord]).cos(),
        }
    }

    /// Closed-form bound on |U| and |grad U|.
    pub fn bound(&self) -> f64 {
        match *self {
            PotentialU::Zero => 0.0,
            PotentialU::Constant { value } => value.abs(),
            PotentialU::Cosine {
                amplitude, harmonic, ..
            } => amplitude.abs() * (2.0 * PI * harmonic.unsigned_abs() as f64).max(1.0),
        }
    }
}

/// Pair potential V on the torus; the difference kernel is invariant under
/// every translation action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PotentialV {
    Zero,
    /// amplitude * cos(2 pi sum_c harmonics[c] * (x_c - x'_c))
    CosineDiff { amplitude: f64, harmonics: Vec<i32> },
}

impl PotentialV {
    pub fn eval(&self, x: &TorusPoint, y: &TorusPoint) -> f64 {
        match self {
            PotentialV::Zero => 0.0,
            PotentialV::CosineDiff {
                amplitude,
                harmonics,
            } => {
                let phase: f64 = harmonics
                    .iter()
                    .zip(x.coords.iter().zip(&y.coords))
                    .map(|(&k, (&a, &b))| k as f64 * (a - b))
                    .sum();
                amplitude * (2.0 * PI * phase).cos()
            }
        }
    }

    /// Closed-form bound on |V| and its first and mixed second derivatives.
    pub fn bound(&self) -> f64 {
        match self {
            PotentialV::Zero => 0.0,
            PotentialV::CosineDiff {
                amplitude,
                harmonics,
            } => {
                let k2: f64 = harmonics.iter().map(|&k| (k * k) as f64).sum();
                let omega = 2.0 * PI * k2.sqrt();
                amplitude.abs() * omega.max(1.0).max(omega * omega)
            }
        }
    }
}

/// Distance decay profile J, constrained by the admissibility condition:
/// bounded, nonincreasing, and at most (1/(r ln r))^3 from r = 2 on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DecayJ {
    Zero,
    /// J(1) = 1, J(r) = min(1, (1/(r ln r))^3) for r >= 2.
    CubicLog,
    /// Nearest-neighbor only: J(1) = j1, zero beyond.
    RangeOne { j1: f64 },
}

impl DecayJ {
    pub fn eval(&self, r: u32) -> f64 {
        if r == 0 {
            return 0.0;
        }
        match *self {
            DecayJ::Zero => 0.0,
            DecayJ::CubicLog => {
                if r == 1 {
                    1.0
                } else {
                    j_majorant(r as f64).min(1.0)
                }
            }
            DecayJ::RangeOne { j1 } => {
                if r == 1 {
                    j1
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_admissible(&self) -> bool {
        match *self {
            DecayJ::Zero | DecayJ::CubicLog => true,
            DecayJ::RangeOne { j1 } => j1 >= 0.0,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DecayJ::Zero => "zero".into(),
            DecayJ::CubicLog => "cubic-log".into(),
            DecayJ::RangeOne { j1 } => format!("range-one(j1 = {j1})"),
        }
    }
}

/// The interaction triple (U, V, J) with its certified bound constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub potential_u: PotentialU,
    pub potential_v: PotentialV,
    pub decay_j: DecayJ,
    pub u_bar: f64,
    pub v_bar: f64,
}

impl InteractionSpec {
    pub fn new(
        u: PotentialU,
        v: PotentialV,
        j: DecayJ,
    ) -> Result<Self, InteractionError> {
        if !j.is_admissible() {
            return Err(InteractionError::InadmissibleJ(j.describe()));
        }
        let spec = InteractionSpec {
            u_bar: u.bound(),
            v_bar: v.bound(),
            potential_u: u,
            potential_v: v,
            decay_j: j,
        };
        spec.certify_bounds(1 << 12)?;
        Ok(spec)
    }

    pub fn free() -> Self {
        InteractionSpec::new(PotentialU::Zero, PotentialV::Zero, DecayJ::Zero).unwrap()
    }

    /// Grid check that the closed-form constants really dominate the
    /// potential values (a Lipschitz inflation covers between-node behavior).
    pub fn certify_bounds(&self, grid: usize) -> Result<(), InteractionError> {
        let inflation = 1.0 + 2.0 * PI * 8.0 / grid as f64;
        for i in 0..grid {
            let x = TorusPoint::new(vec![i as f64 / grid as f64]);
            if self.potential_u.eval(&x).abs() > self.u_bar * inflation + 1e-12 {
                return Err(InteractionError::BadSpec(format!(
                    "U exceeds its bound at {:?}",
                    x.coords
                )));
            }
            let zero = TorusPoint::origin(1);
            if self.potential_v.eval(&x, &zero).abs() > self.v_bar * inflation + 1e-12 {
                return Err(InteractionError::BadSpec(format!(
                    "V exceeds its bound at {:?}",
                    x.coords
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InvarianceReport {
    pub max_deviation: f64,
    pub pass: bool,
}

/// Monte Carlo check that U and V are invariant under the group element.
pub fn check_invariance<R: Rng + ?Sized>(
    spec: &InteractionSpec,
    g: &GroupElement,
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> InvarianceReport {
    let d = g.dim();
    let mut max_dev = 0.0f64;
    for _ in 0..samples {
        let x = TorusPoint::new((0..d).map(|_| rng.gen::<f64>()).collect());
        let xp = TorusPoint::new((0..d).map(|_| rng.gen::<f64>()).collect());
        let gx = crate::torus::apply_group_point(g, &x).unwrap();
        let gxp = crate::torus::apply_group_point(g, &xp).unwrap();
        max_dev = max_dev.max((spec.potential_u.eval(&gx) - spec.potential_u.eval(&x)).abs());
        max_dev = max_dev.max(
            (spec.potential_v.eval(&gx, &gxp) - spec.potential_v.eval(&x, &xp)).abs(),
        );
    }
    InvarianceReport {
        max_deviation: max_dev,
        pass: max_dev < tol,
    }
}

/// Trapezoid rule on the uniform slice grid.
fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..n - 1].iter().sum();
    dt * (0.5 * values[0] + interior + 0.5 * values[n - 1])
}

/// Time integral of U along one loop.
pub fn self_energy(path: &DiscretizedPath, spec: &InteractionSpec) -> f64 {
    let values: Vec<f64> = path
        .slices
        .iter()
        .map(|x| spec.potential_u.eval(x))
        .collect();
    trapezoid(&values, path.dt())
}

/// J(dist) times the time integral of V along two synchronized paths.
pub fn pair_energy(
    path_i: &DiscretizedPath,
    path_j: &DiscretizedPath,
    dist: u32,
    spec: &InteractionSpec,
) -> Result<f64, InteractionError> {
    if dist == 0 {
        return Err(InteractionError::ZeroDistance);
    }
    if path_i.beta != path_j.beta || path_i.steps() != path_j.steps() {
        return Err(InteractionError::MismatchedPaths(format!(
            "beta {} vs {}, steps {} vs {}",
            path_i.beta,
            path_j.beta,
            path_i.steps(),
            path_j.steps()
        )));
    }
    let j = spec.decay_j.eval(dist);
    if j == 0.0 {
        return Ok(0.0);
    }
    let values: Vec<f64> = path_i
        .slices
        .iter()
        .zip(&path_j.slices)
        .map(|(a, b)| spec.potential_v.eval(a, b))
        .collect();
    Ok(j * trapezoid(&values, path_i.dt()))
}

/// J(dist) times the time integral of V against a fixed classical point.
pub fn classical_pair_energy(
    path: &DiscretizedPath,
    point: &TorusPoint,
    dist: u32,
    spec: &InteractionSpec,
) -> Result<f64, InteractionError> {
    if dist == 0 {
        return Err(InteractionError::ZeroDistance);
    }
    let j = spec.decay_j.eval(dist);
    if j == 0.0 {
        return Ok(0.0);
    }
    let values: Vec<f64> = path
        .slices
        .iter()
        .map(|a| spec.potential_v.eval(a, point))
        .collect();
    Ok(j * trapezoid(&values, path.dt()))
}

/// Itemized energy of a configuration: self terms, ordered pair terms, and
/// (for conditioned variants) boundary terms.
#[derive(Clone, Debug, Default)]
pub struct EnergyBreakdown {
    pub self_terms: BTreeMap<usize, f64>,
    pub pair_terms: BTreeMap<(usize, usize), f64>,
    pub boundary_terms: BTreeMap<(usize, usize), f64>,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.self_terms.values().sum::<f64>()
            + self.pair_terms.values().sum::<f64>()
            + self.boundary_terms.values().sum::<f64>()
    }
}

/// Full potential energy of a loop configuration: every self term plus the
/// double sum over ordered vertex pairs (each unordered pair enters twice,
/// following the ordered-sum convention; the diagonal carries only U).
pub fn config_energy(
    loops: &LoopConfiguration,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
) -> Result<EnergyBreakdown, InteractionError> {
    let mut bd = EnergyBreakdown::default();
    let vertices: Vec<usize> = loops.vertices().collect();
    for &v in &vertices {
        bd.self_terms.insert(v, self_energy(loops.get(v).unwrap(), spec));
    }
    for (a_idx, &a) in vertices.iter().enumerate() {
        for &b in &vertices[a_idx + 1..] {
            let dist = geometry
                .distance(a, b)
                .map_err(|e| InteractionError::Geometry(e.to_string()))?;
            let e_ab = pair_energy(loops.get(a).unwrap(), loops.get(b).unwrap(), dist, spec)?;
            let e_ba = pair_energy(loops.get(b).unwrap(), loops.get(a).unwrap(), dist, spec)?;
            bd.pair_terms.insert((a, b), e_ab);
            bd.pair_terms.insert((b, a), e_ba);
        }
    }
    bd.total = bd.parts_sum();
    Ok(bd)
}

/// Configuration energy in the external field of a classical boundary
/// configuration: interior terms plus one directed sum over
/// (interior, exterior) pairs, truncated at graph radius `truncate` with the
/// discarded part bounded by the decay majorant.
pub fn boundary_energy(
    loops: &LoopConfiguration,
    boundary: &BTreeMap<usize, TorusPoint>,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
    truncate: u32,
) -> Result<(EnergyBreakdown, TailBounded), InteractionError> {
    for &v in boundary.keys() {
        if loops.contains(v) {
            return Err(InteractionError::OverlappingSupports(v));
        }
    }
    let mut bd = config_energy(loops, geometry, spec)?;
    let beta = loops.beta();
    let mut tail = 0.0;
    for v in loops.vertices().collect::<Vec<_>>() {
        for (&b, point) in boundary {
            let dist = geometry
                .distance(v, b)
                .map_err(|e| InteractionError::Geometry(e.to_string()))?;
            if dist == 0 {
                return Err(InteractionError::OverlappingSupports(b));
            }
            if dist <= truncate {
                let e = classical_pair_energy(loops.get(v).unwrap(), point, dist, spec)?;
                bd.boundary_terms.insert((v, b), e);
            } else {
                tail += j_majorant(dist as f64) * spec.v_bar * beta;
            }
        }
    }
    bd.total = bd.parts_sum();
    let bounded = TailBounded {
        value: bd.total,
        tail_bound: tail,
    };
    Ok((bd, bounded))
}

/// Conditional energy h(inner | outer, boundary) = h(inner v outer) -
/// h(outer), assembled directly from the terms that touch the inner support
/// (never by subtracting two large totals).
pub fn conditional_energy(
    inner: &LoopConfiguration,
    outer: Option<&LoopConfiguration>,
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
) -> Result<f64, InteractionError> {
    if let Some(out) = outer {
        for v in inner.vertices() {
            if out.contains(v) {
                return Err(InteractionError::OverlappingSupports(v));
            }
        }
    }
    let mut h = config_energy(inner, geometry, spec)?.total;
    let inner_vs: Vec<usize> = inner.vertices().collect();
    if let Some(out) = outer {
        for &v in &inner_vs {
            for o in out.vertices().collect::<Vec<_>>() {
                let dist = geometry
                    .distance(v, o)
                    .map_err(|e| InteractionError::Geometry(e.to_string()))?;
                // Both orientations of the ordered double sum cross the cut.
                h += pair_energy(inner.get(v).unwrap(), out.get(o).unwrap(), dist, spec)?;
                h += pair_energy(out.get(o).unwrap(), inner.get(v).unwrap(), dist, spec)?;
            }
        }
    }
    if let Some(bdy) = boundary {
        for &v in &inner_vs {
            for (&b, point) in bdy {
                if inner.contains(b) || outer.map_or(false, |o| o.contains(b)) {
                    return Err(InteractionError::OverlappingSupports(b));
                }
                let dist = geometry
                    .distance(v, b)
                    .map_err(|e| InteractionError::Geometry(e.to_string()))?;
                h += classical_pair_energy(inner.get(v).unwrap(), point, dist, spec)?;
            }
        }
    }
    Ok(h)
}

/// The a-priori energy bound beta (Ubar + C J* Vbar) #V for a configuration
/// on `n_vertices` sites, with `cj_star` = C(T) J* from the geometry module.
pub fn energy_bound(beta: f64, spec: &InteractionSpec, cj_star: f64, n_vertices: usize) -> f64 {
    beta * (spec.u_bar + cj_star * spec.v_bar) * n_vertices as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdlt::tree_to_triangulation;
    use crate::gw::RootedPlanarTree;
    use crate::rng::derive_stream;
    use crate::torus::sample_loop;
    use approx::assert_abs_diff_eq;

    fn pt(x: f64) -> TorusPoint {
        TorusPoint::new(vec![x])
    }

    /// Constant loop at x with L slices.
    fn const_loop(x: f64, beta: f64, l: usize) -> DiscretizedPath {
        DiscretizedPath {
            slices: vec![pt(x); l + 1],
            beta,
            is_loop: true,
        }
    }

    fn cos_u() -> PotentialU {
        PotentialU::Cosine {
            amplitude: 1.0,
            harmonic: 1,
            coord: 0,
        }
    }

    fn cos_v() -> PotentialV {
        PotentialV::CosineDiff {
            amplitude: 1.0,
            harmonics: vec![1],
        }
    }

    fn chain_oracle(height: usize) -> DistanceOracle {
        let tri = tree_to_triangulation(&RootedPlanarTree::chain(height)).unwrap();
        DistanceOracle::new(&tri)
    }

    #[test]
    fn invariance_examples() {
        let mut rng = derive_stream(30, "invariance", 0);
        let g = crate::torus::GroupElement::translation_1d(0.3);

        let inv = InteractionSpec::new(PotentialU::Zero, cos_v(), DecayJ::CubicLog).unwrap();
        let rep = check_invariance(&inv, &g, 500, 1e-10, &mut rng);
        assert!(rep.pass, "deviation {}", rep.max_deviation);

        let const_u = InteractionSpec::new(
            PotentialU::Constant { value: 3.0 },
            PotentialV::Zero,
            DecayJ::Zero,
        )
        .unwrap();
        let rep = check_invariance(&const_u, &g, 200, 1e-12, &mut rng);
        assert!(rep.pass);

        // U = cos(2 pi x) under theta = 0.3: max deviation 2 sin(0.3 pi).
        let broken = InteractionSpec::new(cos_u(), PotentialV::Zero, DecayJ::Zero).unwrap();
        let rep = check_invariance(&broken, &g, 20_000, 1e-10, &mut rng);
        assert!(!rep.pass);
        let exact = 2.0 * (0.3 * PI).sin();
        assert!(rep.max_deviation <= exact + 1e-12);
        assert!(rep.max_deviation > exact - 0.01, "{}", rep.max_deviation);
    }

    #[test]
    fn self_energy_examples() {
        let spec = InteractionSpec::free();
        assert_abs_diff_eq!(self_energy(&const_loop(0.1, 2.0, 8), &spec), 0.0);

        let const_spec = InteractionSpec::new(
            PotentialU::Constant { value: 1.5 },
            PotentialV::Zero,
            DecayJ::Zero,
        )
        .unwrap();
        assert_abs_diff_eq!(
            self_energy(&const_loop(0.3, 2.0, 16), &const_spec),
            3.0,
            epsilon = 1e-12
        );

        // cos(2 pi * 0) = 1 along the loop; integral = beta.
        let cos_spec = InteractionSpec::new(cos_u(), PotentialV::Zero, DecayJ::Zero).unwrap();
        assert_abs_diff_eq!(
            self_energy(&const_loop(0.0, 2.0, 4), &cos_spec),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pair_energy_examples() {
        let zero_j = InteractionSpec::new(PotentialU::Zero, cos_v(), DecayJ::Zero).unwrap();
        let a = const_loop(0.2, 1.0, 8);
        let b = const_loop(0.7, 1.0, 8);
        assert_abs_diff_eq!(pair_energy(&a, &b, 1, &zero_j).unwrap(), 0.0);

        // Identical loops, J(1) = 1, beta = 1: V(0) = cos 0 = 1.
        let spec =
            InteractionSpec::new(PotentialU::Zero, cos_v(), DecayJ::RangeOne { j1: 1.0 }).unwrap();
        assert_abs_diff_eq!(pair_energy(&a, &a, 1, &spec).unwrap(), 1.0, epsilon = 1e-12);

        // Linearity in the V amplitude.
        let scaled = InteractionSpec::new(
            PotentialU::Zero,
            PotentialV::CosineDiff {
                amplitude: 2.5,
                harmonics: vec![1],
            },
            DecayJ::RangeOne { j1: 1.0 },
        )
        .unwrap();
        assert_abs_diff_eq!(
            pair_energy(&a, &b, 1, &scaled).unwrap(),
            2.5 * pair_energy(&a, &b, 1, &spec).unwrap(),
            epsilon = 1e-12
        );

        assert!(matches!(
            pair_energy(&a, &b, 0, &spec),
            Err(InteractionError::ZeroDistance)
        ));
        let c = const_loop(0.5, 2.0, 8);
        assert!(matches!(
            pair_energy(&a, &c, 1, &spec),
            Err(InteractionError::MismatchedPaths(_))
        ));
    }

    #[test]
    fn config_energy_two_vertices() {
        let oracle = chain_oracle(1);
        let spec = InteractionSpec::new(cos_u(), cos_v(), DecayJ::CubicLog).unwrap();
        let mut loops = BTreeMap::new();
        loops.insert(0, const_loop(0.0, 1.0, 8));
        loops.insert(1, const_loop(0.25, 1.0, 8));
        let cfg = LoopConfiguration::new(loops).unwrap();
        let bd = config_energy(&cfg, &oracle, &spec).unwrap();
        // Hand expansion of the ordered double sum: 2 self + 2 pair terms.
        let s0 = self_energy(cfg.get(0).unwrap(), &spec);
        let s1 = self_energy(cfg.get(1).unwrap(), &spec);
        let p = pair_energy(cfg.get(0).unwrap(), cfg.get(1).unwrap(), 1, &spec).unwrap();
        assert_eq!(bd.pair_terms.len(), 2);
        assert_abs_diff_eq!(bd.total, s0 + s1 + 2.0 * p, epsilon = 1e-12);
        assert_abs_diff_eq!(bd.total, bd.parts_sum(), epsilon = BREAKDOWN_TOL);
    }

    #[test]
    fn boundary_energy_examples() {
        let oracle = chain_oracle(2);
        let spec =
            InteractionSpec::new(cos_u(), cos_v(), DecayJ::RangeOne { j1: 1.0 }).unwrap();
        let mut loops = BTreeMap::new();
        loops.insert(0, const_loop(0.1, 1.0, 8));
        let cfg = LoopConfiguration::new(loops).unwrap();

        let empty = BTreeMap::new();
        let (bd, _) = boundary_energy(&cfg, &empty, &oracle, &spec, 100).unwrap();
        let plain = config_energy(&cfg, &oracle, &spec).unwrap();
        assert_abs_diff_eq!(bd.total, plain.total, epsilon = 1e-12);

        // Interior loop at vertex 0, classical point at vertex 1 (distance 1).
        let mut bdy = BTreeMap::new();
        bdy.insert(1usize, pt(0.35));
        let (bd, _) = boundary_energy(&cfg, &bdy, &oracle, &spec, 100).unwrap();
        let expect = self_energy(cfg.get(0).unwrap(), &spec)
            + spec.potential_v.eval(&pt(0.1), &pt(0.35)); // J(1) = 1, beta = 1
        assert_abs_diff_eq!(bd.total, expect, epsilon = 1e-12);

        // Truncation: enlarging the radius changes the value by at most the
        // reported tail bound.
        let mut bdy2 = BTreeMap::new();
        bdy2.insert(2usize, pt(0.6));
        let (full, _) = boundary_energy(&cfg, &bdy2, &oracle, &spec, 100).unwrap();
        let (cut, tail) = boundary_energy(&cfg, &bdy2, &oracle, &spec, 1).unwrap();
        assert!((full.total - cut.total).abs() <= tail.tail_bound + 1e-12);

        // Overlap rejected.
        let mut bad = BTreeMap::new();
        bad.insert(0usize, pt(0.2));
        assert!(matches!(
            boundary_energy(&cfg, &bad, &oracle, &spec, 100),
            Err(InteractionError::OverlappingSupports(0))
        ));
    }

    #[test]
    fn conditional_energy_identity() {
        let oracle = chain_oracle(2);
        let spec = InteractionSpec::new(cos_u(), cos_v(), DecayJ::CubicLog).unwrap();
        let mut rng = derive_stream(31, "cond", 0);
        let mk = |x: f64, rng: &mut _| sample_loop(&pt(x), 1.0, 8, rng).unwrap();

        let mut inner_map = BTreeMap::new();
        inner_map.insert(1usize, mk(0.3, &mut rng));
        let inner = LoopConfiguration::new(inner_map).unwrap();
        let mut outer_map = BTreeMap::new();
        outer_map.insert(0usize, mk(0.1, &mut rng));
        outer_map.insert(2usize, mk(0.8, &mut rng));
        let outer = LoopConfiguration::new(outer_map).unwrap();

        // h(inner v outer) = h(outer) + h(inner | outer).
        let mut joint_map = outer.loops().clone();
        joint_map.insert(1, inner.get(1).unwrap().clone());
        let joint = LoopConfiguration::new(joint_map).unwrap();
        let h_joint = config_energy(&joint, &oracle, &spec).unwrap().total;
        let h_outer = config_energy(&outer, &oracle, &spec).unwrap().total;
        let h_cond = conditional_energy(&inner, Some(&outer), None, &oracle, &spec).unwrap();
        assert_abs_diff_eq!(h_joint, h_outer + h_cond, epsilon = 1e-10);

        // 3-vertex line, inner = middle: self + 2 (pair(mid,left) + pair(mid,right)).
        let p_left = pair_energy(inner.get(1).unwrap(), outer.get(0).unwrap(), 1, &spec).unwrap();
        let p_right = pair_energy(inner.get(1).unwrap(), outer.get(2).unwrap(), 1, &spec).unwrap();
        let s_mid = self_energy(inner.get(1).unwrap(), &spec);
        // V is a symmetric difference kernel, so both orientations coincide.
        assert_abs_diff_eq!(
            h_cond,
            s_mid + 2.0 * (p_left + p_right),
            epsilon = 1e-10
        );

        // Empty outer reduces to the plain configuration energy.
        let h_alone = conditional_energy(&inner, None, None, &oracle, &spec).unwrap();
        assert_abs_diff_eq!(
            h_alone,
            config_energy(&inner, &oracle, &spec).unwrap().total,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadrature_second_order() {
        // Tent-shaped loop: the integrand has corners, so the trapezoid rule
        // sits at its generic O(L^-2) rate (a smooth periodic loop would be
        // spectrally accurate and say nothing about the rate).
        let spec = InteractionSpec::new(cos_u(), PotentialV::Zero, DecayJ::Zero).unwrap();
        let beta = 1.0;
        let make = |l: usize| {
            let slices: Vec<TorusPoint> = (0..=l)
                .map(|s| {
                    let t = s as f64 / l as f64;
                    pt(0.5 + 0.2 * (1.0 - (2.0 * t - 1.0).abs()))
                })
                .collect();
            DiscretizedPath {
                slices,
                beta,
                is_loop: true,
            }
        };
        let reference = self_energy(&make(4096), &spec);
        let mut errs = Vec::new();
        for &l in &[8usize, 16, 32, 64, 128, 256] {
            errs.push((self_energy(&make(l), &spec) - reference).abs());
        }
        // Log-log slope about -2.
        let n = errs.len();
        let slope = ((errs[n - 1] / errs[0]).ln()) / (((n - 1) as f64) * 2f64.ln());
        assert!((slope + 2.0).abs() < 0.3, "slope {slope}, errs {errs:?}");
    }

    #[test]
    fn energy_bound_holds_on_samples() {
        let oracle = chain_oracle(3);
        let spec = InteractionSpec::new(cos_u(), cos_v(), DecayJ::CubicLog).unwrap();
        let mut rng = derive_stream(32, "bound", 0);
        let beta = 1.0;
        // C J* for the chain: layers all 1.
        let layers = vec![1usize; 4];
        let js = crate::cdlt::j_layer_sum(&layers, &spec.decay_j, 0.25).unwrap();
        let c = crate::cdlt::growth_constant(&layers, 0.25).unwrap();
        let cj_star = c.max(1.0) * (js.value + js.tail_bound);
        for _ in 0..20 {
            let mut loops = BTreeMap::new();
            for v in 0..4 {
                loops.insert(v, sample_loop(&pt(rng.gen()), beta, 8, &mut rng).unwrap());
            }
            let cfg = LoopConfiguration::new(loops).unwrap();
            let h = config_energy(&cfg, &oracle, &spec).unwrap().total;
            let bound = energy_bound(beta, &spec, cj_star, 4);
            assert!(h.abs() <= 2.0 * bound, "h {h}, bound {bound}");
        }
    }

    #[test]
    fn spec_descriptor_roundtrip() {
        let spec = InteractionSpec::new(cos_u(), cos_v(), DecayJ::CubicLog).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: InteractionSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.potential_u, spec.potential_u);
        assert_eq!(back.potential_v, spec.potential_v);
        assert_eq!(back.decay_j, spec.decay_j);
        assert_abs_diff_eq!(back.u_bar, spec.u_bar);
        assert_abs_diff_eq!(back.v_bar, spec.v_bar);
    }
}
