//! Geometry and stochastic calculus on the flat unit torus R^d/Z^d: heat
//! kernels by theta sums, discretized Brownian bridges and loops with
//! explicit winding sampling, and the translation group action.
//!
//! The transition density factorizes over coordinates, so everything is
//! built from the one-dimensional kernel. For small time the direct image
//! sum converges in a handful of terms; for large time the Fourier dual
//! does, and both are truncated against the caller's tolerance.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error("beta must be positive, got {0}")]
    NonpositiveBeta(f64),
    #[error("slice count must be >= 1, got {0}")]
    BadSliceCount(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix A is rank deficient (smallest singular value {0:.3e})")]
    RankDeficient(f64),
}

pub const RANK_TOL: f64 = 1e-10;

/// A point of the unit torus, canonical coordinates in [0,1).
#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint {
    pub coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        TorusPoint {
            coords: coords.into_iter().map(wrap_unit).collect(),
        }
    }

    pub fn origin(d: usize) -> Self {
        TorusPoint {
            coords: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Half-open reduction into [0,1).
pub fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A time-sliced bridge or loop of time-length beta: slices[s] = omega(s*beta/L).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedPath {
    pub slices: Vec<TorusPoint>,
    pub beta: f64,
    pub is_loop: bool,
}

impl DiscretizedPath {
    /// Number of time steps L (slices.len() - 1).
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.slices[0].dim()
    }

    pub fn dt(&self) -> f64 {
        self.beta / self.steps() as f64
    }
}

/// One-dimensional torus kernel p^beta(0, delta) for any real delta.
pub fn kernel_1d(delta: f64, beta: f64, tol: f64) -> f64 {
    // Dual (Fourier) series 1 + 2 sum_k exp(-2 pi^2 beta k^2) cos(2 pi k d)
    // converges faster than the image sum once beta > 1/(2 pi); switch there.
    if beta > 1.0 / (2.0 * std::f64::consts::PI) {
        let mut s = 1.0;
        let mut k = 1.0f64;
        loop {
            let term = 2.0 * (-2.0 * std::f64::consts::PI.powi(2) * beta * k * k).exp();
            if term < tol * 0.1 {
                break;
            }
            s += term * (2.0 * std::f64::consts::PI * k * delta).cos();
            k += 1.0;
        }
        s
    } else {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * beta).sqrt();
        // Keep every image with Gaussian weight above the tolerance:
        // |delta + n| <= sqrt(2 beta ln(1/tol')) for a shaved tolerance.
        let radius = (2.0 * beta * (10.0 / tol).ln()).sqrt() + delta.abs() + 1.0;
        let n_max = radius.ceil() as i64;
        let mut s = 0.0;
        for n in -n_max..=n_max {
            let u = delta + n as f64;
            s += (-u * u / (2.0 * beta)).exp();
        }
        norm * s
    }
}

/// Transition density p^beta(x, y) on R^d/Z^d by the theta sum, truncated so
/// the discarded tail stays below `tol`.
pub fn transition_density(
    x: &TorusPoint,
    y: &TorusPoint,
    beta: f64,
    tol: f64,
) -> Result<f64, TorusError> {
    if beta <= 0.0 {
        return Err(TorusError::NonpositiveBeta(beta));
    }
    if x.dim() != y.dim() {
        return Err(TorusError::DimensionMismatch(format!(
            "{} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let per_coord_tol = tol / x.dim().max(1) as f64;
    let mut p = 1.0;
    for c in 0..x.dim() {
        p *= kernel_1d(y.coords[c] - x.coords[c], beta, per_coord_tol);
    }
    Ok(p)
}

/// Diagonal density p-bar^beta = p^beta(x, x), independent of x.
pub fn diagonal_density(beta: f64, d: usize, tol: f64) -> Result<f64, TorusError> {
    if beta <= 0.0 {
        return Err(TorusError::NonpositiveBeta(beta));
    }
    Ok(kernel_1d(0.0, beta, tol / d.max(1) as f64).powi(d as i32))
}

/// Samples the winding offset n for one coordinate: P(n) prop to
/// exp(-(delta+n)^2 / (2 beta)).
fn sample_winding<R: Rng + ?Sized>(delta: f64, beta: f64, rng: &mut R) -> i64 {
    let radius = (2.0 * beta * (1e14f64).ln()).sqrt() + delta.abs() + 1.0;
    let n_max = radius.ceil() as i64;
    let mut weights = Vec::with_capacity((2 * n_max + 1) as usize);
    let mut total = 0.0;
    for n in -n_max..=n_max {
        let u = delta + n as f64;
        let w = (-u * u / (2.0 * beta)).exp();
        weights.push(w);
        total += w;
    }
    let mut t = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return i as i64 - n_max;
        }
    }
    n_max
}

/// Draws a discretized torus Brownian bridge from x to y over L slices.
///
/// A winding vector is sampled per coordinate, then a Euclidean bridge to
/// the chosen lift of y is laid down by the sequential (staging) rule: each
/// interior slice is Gaussian about the linear pull toward the endpoint.
pub fn sample_bridge<R: Rng + ?Sized>(
    x: &TorusPoint,
    y: &TorusPoint,
    beta: f64,
    l_slices: usize,
    rng: &mut R,
) -> Result<DiscretizedPath, TorusError> {
    if beta <= 0.0 {
        return Err(TorusError::NonpositiveBeta(beta));
    }
    if l_slices < 1 {
        return Err(TorusError::BadSliceCount(l_slices));
    }
    if x.dim() != y.dim() {
        return Err(TorusError::DimensionMismatch(format!(
            "{} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let d = x.dim();
    let dt = beta / l_slices as f64;
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // Lift endpoint: y + n in R^d, coordinates independent.
    let mut target = Vec::with_capacity(d);
    for c in 0..d {
        let delta = y.coords[c] - x.coords[c];
        let n = sample_winding(delta, beta, rng);
        target.push(x.coords[c] + delta + n as f64);
    }

    let mut slices = Vec::with_capacity(l_slices + 1);
    slices.push(x.clone());
    let mut cur: Vec<f64> = x.coords.clone();
    for s in 1..l_slices {
        let remaining = (l_slices - s + 1) as f64;
        let var = dt * (remaining - 1.0) / remaining;
        let sd = var.sqrt();
        let mut next = Vec::with_capacity(d);
        for c in 0..d {
            let mean = cur[c] + (target[c] - cur[c]) / remaining;
            next.push(mean + sd * std_normal.sample(rng));
        }
        slices.push(TorusPoint::new(next.clone()));
        cur = next;
    }
    slices.push(y.clone());
    Ok(DiscretizedPath {
        slices,
        beta,
        is_loop: false,
    })
}

/// Draws a loop (closed bridge) at marked point x.
pub fn sample_loop<R: Rng + ?Sized>(
    x: &TorusPoint,
    beta: f64,
    l_slices: usize,
    rng: &mut R,
) -> Result<DiscretizedPath, TorusError> {
    let mut p = sample_bridge(x, x, beta, l_slices, rng)?;
    p.is_loop = true;
    Ok(p)
}

/// Translation family element: x -> x + theta A mod 1, with A of full row
/// rank d' <= d.
#[derive(Clone, Debug)]
pub struct GroupElement {
    pub theta: Vec<f64>,
    pub matrix_a: Vec<Vec<f64>>,
    shift: Vec<f64>,
}

impl GroupElement {
    pub fn new(theta: Vec<f64>, matrix_a: Vec<Vec<f64>>) -> Result<Self, TorusError> {
        let d_prime = matrix_a.len();
        if theta.len() != d_prime {
            return Err(TorusError::DimensionMismatch(format!(
                "theta has {} entries but A has {} rows",
                theta.len(),
                d_prime
            )));
        }
        if d_prime == 0 {
            return Err(TorusError::DimensionMismatch("A has no rows".into()));
        }
        let d = matrix_a[0].len();
        if matrix_a.iter().any(|row| row.len() != d) {
            return Err(TorusError::DimensionMismatch("ragged matrix A".into()));
        }
        if d_prime > d {
            return Err(TorusError::DimensionMismatch(format!(
                "d' = {d_prime} exceeds d = {d}"
            )));
        }
        let sigma_min = smallest_singular_value(&matrix_a);
        if sigma_min <= RANK_TOL {
            return Err(TorusError::RankDeficient(sigma_min));
        }
        let mut shift = vec![0.0; d];
        for (r, row) in matrix_a.iter().enumerate() {
            for (c, &a) in row.iter().enumerate() {
                shift[c] += theta[r] * a;
            }
        }
        Ok(GroupElement {
            theta,
            matrix_a,
            shift,
        })
    }

    /// The translation x -> x + theta A acting on d coordinates.
    pub fn translation_1d(theta: f64) -> Self {
        GroupElement::new(vec![theta], vec![vec![1.0]]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift_vector(&self) -> &[f64] {
        &self.shift
    }

    pub fn inverse(&self) -> Self {
        let theta: Vec<f64> = self.theta.iter().map(|t| -t).collect();
        GroupElement::new(theta, self.matrix_a.clone()).unwrap()
    }

    /// Same A, scaled parameter: used for tuned per-vertex actions.
    pub fn scaled(&self, factor: f64) -> Self {
        let theta: Vec<f64> = self.theta.iter().map(|t| t * factor).collect();
        // Scaling only changes theta; A keeps its rank.
        GroupElement::new(theta, self.matrix_a.clone()).unwrap()
    }
}

pub fn apply_group_point(g: &GroupElement, x: &TorusPoint) -> Result<TorusPoint, TorusError> {
    if g.dim() != x.dim() {
        return Err(TorusError::DimensionMismatch(format!(
            "group acts on {} coords, point has {}",
            g.dim(),
            x.dim()
        )));
    }
    Ok(TorusPoint::new(
        x.coords
            .iter()
            .zip(g.shift_vector())
            .map(|(&xc, &s)| xc + s)
            .collect(),
    ))
}

pub fn apply_group_path(
    g: &GroupElement,
    p: &DiscretizedPath,
) -> Result<DiscretizedPath, TorusError> {
    let slices: Result<Vec<_>, _> = p.slices.iter().map(|s| apply_group_point(g, s)).collect();
    Ok(DiscretizedPath {
        slices: slices?,
        beta: p.beta,
        is_loop: p.is_loop,
    })
}

/// Smallest singular value of a d' x d matrix (d' <= d), via Jacobi
/// eigenvalues of the small Gram matrix A A^T.
fn smallest_singular_value(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let mut gram = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in 0..m {
            gram[i][j] = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
        }
    }
    let eigs = jacobi_eigenvalues(&mut gram);
    eigs.into_iter()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt()
}

/// Cyclic Jacobi sweeps on a small symmetric matrix; returns eigenvalues.
pub fn jacobi_eigenvalues(a: &mut [Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![a[0][0]];
    }
    for _ in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}
