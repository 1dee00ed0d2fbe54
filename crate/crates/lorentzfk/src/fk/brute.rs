//! Exact (at the discretization level) reduced-density-matrix kernels for
//! small volumes by dense summation over grid-valued path configurations.
//!
//! The sum over all loop/bridge configurations factorizes through time:
//! with states a = (grid position of every vertex) at one slice, the weight
//! of a transition is a tensor product of one-coordinate step kernels times
//! a diagonal interaction factor. Writing P for the normalized step matrix
//! and D_c = exp(-c dt E) for the slice-energy diagonal,
//!
//!   A = D_half (P D_full)^{L-1} P D_half
//!
//! collects every time step with trapezoid endpoint weights. Closing all
//! vertices into loops gives the partition sum as tr(A); leaving the window
//! vertices open gives the unnormalized kernel. The normalized kernel then
//! has grid trace exactly 1 by construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdlt::DistanceOracle;
use crate::interaction::{InteractionError, InteractionSpec};
use crate::torus::{transition_density, TorusPoint};

#[derive(Debug, Error)]
pub enum FkError {
    #[error("state space too large: {0} (guard {1})")]
    TooLarge(f64, f64),
    #[error("window is not contained in the sampled volume")]
    WindowTooLarge,
    #[error("not enough samples: {0}")]
    NotEnoughSamples(String),
    #[error("importance weights degenerate (effective sample size {0:.1})")]
    DegenerateWeights(f64),
    #[error("estimates are on different grids: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("chain engine requires a nearest-neighbor decay profile, got {0}")]
    LongRangeChain(String),
}

/// Cost guard: the dense engine touches dim^2 = G^(2 #vertices) entries.
pub const BRUTE_STATE_GUARD: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Oracle,
    Mc,
}

impl EstimateMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateMethod::Oracle => "oracle",
            EstimateMethod::Mc => "mc",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BruteParams {
    pub grid: usize,
    pub l_slices: usize,
    pub beta: f64,
}

/// A kernel estimate over the window's product grid: values[x * dim + y]
/// with x, y mixed-radix grid indices over the window vertices.
#[derive(Clone, Debug)]
pub struct RdmKernelEstimate {
    pub window: Vec<usize>,
    pub grid: usize,
    pub l_slices: usize,
    pub beta: f64,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub method: EstimateMethod,
    pub seed: u64,
}

impl RdmKernelEstimate {
    pub fn window_dim(&self) -> usize {
        self.grid.pow(self.window.len() as u32)
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.window_dim() + y]
    }

    pub fn std_error(&self, x: usize, y: usize) -> f64 {
        self.std_errors[x * self.window_dim() + y]
    }

    /// Grid quadrature of the diagonal; 1 for a normalized kernel.
    pub fn trace(&self) -> f64 {
        let dw = self.window_dim();
        (0..dw).map(|i| self.values[i * dw + i]).sum::<f64>() / dw as f64
    }

    /// Smallest eigenvalue of the symmetrized kernel matrix (positivity
    /// proxy), by shifted power iteration.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.window_dim();
        let m = &self.values;
        // Gershgorin-style upper bound on the spectral radius.
        let bound = (0..n)
            .map(|i| (0..n).map(|j| m[i * n + j].abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        // Power-iterate c I - M; its top eigenvalue is c - lambda_min(M).
        let c = bound;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lam = 0.0;
        for _ in 0..300 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                let mut acc = c * v[i];
                for j in 0..n {
                    acc -= 0.5 * (m[i * n + j] + m[j * n + i]) * v[j];
                }
                w[i] = acc;
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            lam = norm;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
        }
        c - lam
    }
}

/// The i-th of G equispaced grid points on the unit circle.
pub fn grid_point(i: usize, g: usize) -> TorusPoint {
    TorusPoint::new(vec![i as f64 / g as f64])
}

/// Normalized one-coordinate step matrix P[i][j] = p^dt(x_i, x_j) / G,
/// folding the per-slice quadrature weight into the kernel.
pub fn step_matrix(g: usize, dt: f64) -> Vec<f64> {
    let mut p = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            p[i * g + j] =
                transition_density(&grid_point(i, g), &grid_point(j, g), dt, 1e-14).unwrap()
                    / g as f64;
        }
    }
    p
}

struct DenseVolume {
    g: usize,
    m: usize,
    dim: usize,
    l: usize,
    dtau: f64,
    p_step: Vec<f64>,
    /// Slice interaction energy E(a) per product state (energy density, to
    /// be scaled by dt and the trapezoid weight).
    e_slice: Vec<f64>,
}

impl DenseVolume {
    fn new(
        oracle: &DistanceOracle,
        volume: &[usize],
        boundary: Option<&BTreeMap<usize, TorusPoint>>,
        spec: &InteractionSpec,
        params: &BruteParams,
    ) -> Result<Self, FkError> {
        let g = params.grid;
        let m = volume.len();
        let dim_f = (g as f64).powi(2 * m as i32);
        if dim_f > BRUTE_STATE_GUARD {
            return Err(FkError::TooLarge(dim_f, BRUTE_STATE_GUARD));
        }
        let dim = g.pow(m as u32);
        let l = params.l_slices;
        let dtau = params.beta / l as f64;

        // Pairwise couplings J(d(v, v')) once.
        let mut j_pairs = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    let d = oracle
                        .distance(volume[a], volume[b])
                        .map_err(|e| FkError::Geometry(e.to_string()))?;
                    j_pairs[a * m + b] = spec.decay_j.eval(d);
                }
            }
        }
        let mut j_boundary: Vec<Vec<(f64, TorusPoint)>> = vec![Vec::new(); m];
        if let Some(bdy) = boundary {
            for (a, &v) in volume.iter().enumerate() {
                for (&b, point) in bdy {
                    let d = oracle
                        .distance(v, b)
                        .map_err(|e| FkError::Geometry(e.to_string()))?;
                    let j = spec.decay_j.eval(d);
                    if j != 0.0 {
                        j_boundary[a].push((j, point.clone()));
                    }
                }
            }
        }

        // Tabulate U on the grid and V on the grid square.
        let u_tab: Vec<f64> = (0..g)
            .map(|i| spec.potential_u.eval(&grid_point(i, g)))
            .collect();
        let mut v_tab = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                v_tab[i * g + j] = spec
                    .potential_v
                    .eval(&grid_point(i, g), &grid_point(j, g));
            }
        }

        let mut e_slice = vec![0.0; dim];
        let mut digits = vec![0usize; m];
        for (state, e) in e_slice.iter_mut().enumerate() {
            let mut s = state;
            for d in digits.iter_mut() {
                *d = s % g;
                s /= g;
            }
            let mut acc = 0.0;
            for a in 0..m {
                acc += u_tab[digits[a]];
                for b in 0..m {
                    if a != b {
                        acc += j_pairs[a * m + b] * v_tab[digits[a] * g + digits[b]];
                    }
                }
                for (j, point) in &j_boundary[a] {
                    acc += j * spec.potential_v.eval(&grid_point(digits[a], g), point);
                }
            }
            *e = acc;
        }

        Ok(DenseVolume {
            g,
            m,
            dim,
            l,
            dtau,
            p_step: step_matrix(g, dtau),
            e_slice,
        })
    }

    /// Applies the tensor-product step kernel (one P per vertex axis).
    fn apply_step(&self, v: &[f64]) -> Vec<f64> {
        let g = self.g;
        let mut cur = v.to_vec();
        for axis in 0..self.m {
            let stride = g.pow(axis as u32);
            let mut next = vec![0.0; self.dim];
            let block = stride * g;
            for base in (0..self.dim).step_by(block) {
                for lo in 0..stride {
                    for i in 0..g {
                        let src = cur[base + lo + i * stride];
                        if src == 0.0 {
                            continue;
                        }
                        let row = &self.p_step[i * g..(i + 1) * g];
                        for (j, &p) in row.iter().enumerate() {
                            next[base + lo + j * stride] += p * src;
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }

    fn mul_diag(&self, v: &mut [f64], weight: f64) {
        for (x, &e) in v.iter_mut().zip(&self.e_slice) {
            *x *= (-weight * self.dtau * e).exp();
        }
    }

    /// One full time evolution A = D_half (P D_full)^(L-1) P D_half.
    fn apply_a(&self, v: &[f64]) -> Vec<f64> {
        let mut cur = v.to_vec();
        self.mul_diag(&mut cur, 0.5);
        for step in 0..self.l {
            cur = self.apply_step(&cur);
            if step + 1 < self.l {
                self.mul_diag(&mut cur, 1.0);
            }
        }
        self.mul_diag(&mut cur, 0.5);
        cur
    }
}

/// Exact RDM kernel over `window` for the Gibbs ensemble on `volume`
/// (window vertices must come first in `volume`), with an optional classical
/// boundary configuration.
pub fn brute_force_rdmk(
    oracle: &DistanceOracle,
    volume: &[usize],
    window: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    params: &BruteParams,
) -> Result<RdmKernelEstimate, FkError> {
    if window.len() > volume.len() || window != &volume[..window.len()] {
        return Err(FkError::WindowTooLarge);
    }
    let vol = DenseVolume::new(oracle, volume, boundary, spec, params)?;
    let g = vol.g;
    let w = window.len();
    let dw = g.pow(w as u32);
    let ext_dim = vol.dim / dw;

    let mut xi = 0.0f64;
    let mut num = vec![0.0f64; dw * dw];
    let mut basis = vec![0.0f64; vol.dim];
    for b in 0..vol.dim {
        basis[b] = 1.0;
        let col = vol.apply_a(&basis);
        basis[b] = 0.0;
        xi += col[b];
        // b = y + e * dw; accumulate A((x,e),(y,e)) into Num[x][y].
        let y = b % dw;
        let e = b / dw;
        debug_assert!(e < ext_dim);
        for x in 0..dw {
            num[x * dw + y] += col[x + e * dw];
        }
    }

    let scale = (g as f64).powi(w as i32) / xi;
    let values: Vec<f64> = num.into_iter().map(|v| v * scale).collect();
    Ok(RdmKernelEstimate {
        window: window.to_vec(),
        grid: g,
        l_slices: vol.l,
        beta: params.beta,
        std_errors: vec![0.0; values.len()],
        values,
        method: EstimateMethod::Oracle,
        seed: 0,
    })
}

/// Partition sum over grid loop configurations, normalized the same way as
/// the kernel (used by the FK-DLR residual check, where only ratios enter).
pub fn brute_force_partition(
    oracle: &DistanceOracle,
    volume: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    params: &BruteParams,
) -> Result<f64, FkError> {
    let vol = DenseVolume::new(oracle, volume, boundary, spec, params)?;
    let mut xi = 0.0;
    let mut basis = vec![0.0f64; vol.dim];
    for b in 0..vol.dim {
        basis[b] = 1.0;
        let col = vol.apply_a(&basis);
        basis[b] = 0.0;
        xi += col[b];
    }
    Ok(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdlt::tree_to_triangulation;
    use crate::gw::RootedPlanarTree;
    use crate::interaction::{DecayJ, PotentialU, PotentialV};
    use crate::torus::diagonal_density;
    use approx::assert_abs_diff_eq;

    fn chain_oracle(height: usize) -> DistanceOracle {
        let tri = tree_to_triangulation(&RootedPlanarTree::chain(height)).unwrap();
        DistanceOracle::new(&tri)
    }

    fn cos_spec() -> InteractionSpec {
        InteractionSpec::new(
            PotentialU::Cosine {
                amplitude: 0.4,
                harmonic: 1,
                coord: 0,
            },
            PotentialV::CosineDiff {
                amplitude: 0.4,
                harmonics: vec![1],
            },
            DecayJ::CubicLog,
        )
        .unwrap()
    }

    #[test]
    fn free_single_vertex_matches_closed_form() {
        let oracle = chain_oracle(0);
        let params = BruteParams {
            grid: 16,
            l_slices: 4,
            beta: 1.0,
        };
        let est = brute_force_rdmk(
            &oracle,
            &[0],
            &[0],
            None,
            &InteractionSpec::free(),
            &params,
        )
        .unwrap();
        let p_bar = diagonal_density(1.0, 1, 1e-13).unwrap();
        for x in 0..16 {
            for y in 0..16 {
                let expect = transition_density(
                    &grid_point(x, 16),
                    &grid_point(y, 16),
                    1.0,
                    1e-13,
                )
                .unwrap()
                    / p_bar;
                assert_abs_diff_eq!(est.value(x, y), expect, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(est.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interacting_kernel_is_normalized_and_symmetric() {
        let oracle = chain_oracle(1);
        let params = BruteParams {
            grid: 12,
            l_slices: 3,
            beta: 1.0,
        };
        let est = brute_force_rdmk(&oracle, &[0, 1], &[0], None, &cos_spec(), &params).unwrap();
        assert_abs_diff_eq!(est.trace(), 1.0, epsilon = 1e-9);
        for x in 0..12 {
            assert!(est.value(x, x) > 0.0);
            for y in 0..12 {
                assert_abs_diff_eq!(est.value(x, y), est.value(y, x), epsilon = 1e-10);
            }
        }
        assert!(est.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn guard_rejects_large_state_spaces() {
        let oracle = chain_oracle(4);
        let params = BruteParams {
            grid: 16,
            l_slices: 4,
            beta: 1.0,
        };
        let err = brute_force_rdmk(
            &oracle,
            &[0, 1, 2, 3, 4],
            &[0],
            None,
            &InteractionSpec::free(),
            &params,
        );
        assert!(matches!(err, Err(FkError::TooLarge(_, _))));
    }

    #[test]
    fn window_must_prefix_volume() {
        let oracle = chain_oracle(1);
        let params = BruteParams {
            grid: 8,
            l_slices: 2,
            beta: 1.0,
        };
        let err = brute_force_rdmk(
            &oracle,
            &[0, 1],
            &[1],
            None,
            &InteractionSpec::free(),
            &params,
        );
        assert!(matches!(err, Err(FkError::WindowTooLarge)));
    }

    #[test]
    fn boundary_shifts_the_kernel() {
        let oracle = chain_oracle(1);
        let params = BruteParams {
            grid: 12,
            l_slices: 3,
            beta: 1.0,
        };
        let spec = cos_spec();
        let mut bdy = BTreeMap::new();
        bdy.insert(1usize, grid_point(3, 12));
        let with = brute_force_rdmk(&oracle, &[0], &[0], Some(&bdy), &spec, &params).unwrap();
        let without = brute_force_rdmk(&oracle, &[0], &[0], None, &spec, &params).unwrap();
        assert_abs_diff_eq!(with.trace(), 1.0, epsilon = 1e-9);
        let dev: f64 = (0..with.values.len())
            .map(|i| (with.values[i] - without.values[i]).abs())
            .fold(0.0, f64::max);
        assert!(dev > 1e-4, "boundary had no effect (dev {dev})");
    }

    #[test]
    fn two_step_free_evolution_matches_chapman_kolmogorov() {
        // P^2 at the grid level equals the kernel at doubled time to
        // spectral accuracy.
        let g = 16;
        let p = step_matrix(g, 0.25);
        let mut p2 = vec![0.0; g * g];
        for i in 0..g {
            for k in 0..g {
                for j in 0..g {
                    p2[i * g + j] += p[i * g + k] * p[k * g + j];
                }
            }
        }
        let direct = step_matrix(g, 0.5);
        for i in 0..g * g {
            assert_abs_diff_eq!(p2[i] * g as f64, direct[i] * g as f64, epsilon = 1e-10);
        }
    }
}
