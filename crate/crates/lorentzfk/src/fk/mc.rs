//! Monte Carlo estimation of reduced-density-matrix kernels.
//!
//! The kernel over a window W inside volume V is the Gibbs expectation,
//! over the exterior loop configuration Omega, of the ratio
//!
//!   B(x, y | Omega) / Z_W(Omega)
//!
//! where B integrates exp(-h(window | Omega)) over free bridges x -> y
//! (carrying the bridge mass p^beta(x, y) per vertex) and Z_W does the same
//! over free window loops (mass p-bar^beta per vertex). Exterior samples
//! come from a full-volume Metropolis chain, whose exterior marginal is
//! exactly the weight the representation asks for; both inner integrals are
//! importance-sampled from the free laws. Errors are batch means over the
//! exterior chain.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cdlt::DistanceOracle;
use crate::fk::brute::{BruteParams, EstimateMethod, FkError, RdmKernelEstimate};
use crate::fk::config::LoopConfiguration;
use crate::fk::metropolis::{metropolis_sweep, GibbsSamplerState, SamplerParams};
use crate::interaction::{
    classical_pair_energy, pair_energy, self_energy, InteractionSpec,
};
use crate::rng::derive_stream;
use crate::torus::{
    diagonal_density, sample_bridge, sample_loop, transition_density, DiscretizedPath,
    TorusPoint,
};

#[derive(Clone, Copy, Debug)]
pub struct McParams {
    /// Exterior chain samples kept (after burn-in, one per `thin` sweeps).
    pub exterior_samples: usize,
    /// Burn-in sweeps; defaults to 10 x #vertices.
    pub burn_in_sweeps: Option<usize>,
    pub thin: usize,
    /// Free-bridge draws per evaluation pair per exterior sample.
    pub bridge_samples: usize,
    /// Free-loop draws for the window partition factor per exterior sample.
    pub loop_samples: usize,
    /// Batch-means batches for error bars.
    pub batches: usize,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            exterior_samples: 320,
            burn_in_sweeps: None,
            thin: 2,
            bridge_samples: 8,
            loop_samples: 64,
            batches: 32,
        }
    }
}

struct WindowGeometry {
    /// Distances between window vertices (ordered pairs evaluated once).
    within: Vec<Vec<u32>>,
    /// Distances from each window vertex to each exterior vertex.
    to_ext: Vec<Vec<u32>>,
    /// Distances from each window vertex to each boundary vertex.
    to_bdy: Vec<Vec<u32>>,
}

/// Energy of the window paths conditioned on the exterior loops and the
/// classical boundary (every term of the full sum touching the window).
fn window_energy(
    paths: &[DiscretizedPath],
    ext: Option<&LoopConfiguration>,
    ext_ids: &[usize],
    boundary: &[(usize, TorusPoint)],
    geo: &WindowGeometry,
    spec: &InteractionSpec,
) -> Result<f64, FkError> {
    let mut h = 0.0;
    for (a, path) in paths.iter().enumerate() {
        h += self_energy(path, spec);
        for (b, other) in paths.iter().enumerate().skip(a + 1) {
            let d = geo.within[a][b];
            h += pair_energy(path, other, d, spec)?;
            h += pair_energy(other, path, d, spec)?;
        }
        if let Some(out) = ext {
            for (e, &ev) in ext_ids.iter().enumerate() {
                let d = geo.to_ext[a][e];
                let other = out.get(ev).unwrap();
                h += pair_energy(path, other, d, spec)?;
                h += pair_energy(other, path, d, spec)?;
            }
        }
        for (b, (_, point)) in boundary.iter().enumerate() {
            h += classical_pair_energy(path, point, geo.to_bdy[a][b], spec)?;
        }
    }
    Ok(h)
}

/// Estimates the RDM kernel over `window` (a prefix of `volume`) on the
/// G x G evaluation grid by exterior-chain plus free-law importance
/// sampling. d = 1.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rdmk_mc(
    oracle: &DistanceOracle,
    volume: &[usize],
    window: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    params: &BruteParams,
    mc: &McParams,
    seed: u64,
) -> Result<RdmKernelEstimate, FkError> {
    if window.is_empty() || window.len() > volume.len() || window != &volume[..window.len()] {
        return Err(FkError::WindowTooLarge);
    }
    if mc.exterior_samples < mc.batches || mc.batches < 2 {
        return Err(FkError::NotEnoughSamples(format!(
            "{} exterior samples across {} batches",
            mc.exterior_samples, mc.batches
        )));
    }
    let g = params.grid;
    let l = params.l_slices;
    let beta = params.beta;
    let w = window.len();
    let dw = g.pow(w as u32);
    let ext_ids: Vec<usize> = volume[w..].to_vec();
    let bdy_vec: Vec<(usize, TorusPoint)> = boundary
        .map(|b| b.iter().map(|(&v, p)| (v, p.clone())).collect())
        .unwrap_or_default();

    let dist = |a: usize, b: usize| -> Result<u32, FkError> {
        oracle.distance(a, b).map_err(|e| FkError::Geometry(e.to_string()))
    };
    let mut geo = WindowGeometry {
        within: vec![vec![0; w]; w],
        to_ext: vec![vec![0; ext_ids.len()]; w],
        to_bdy: vec![vec![0; bdy_vec.len()]; w],
    };
    for a in 0..w {
        for b in 0..w {
            if a != b {
                geo.within[a][b] = dist(window[a], window[b])?;
            }
        }
        for (e, &ev) in ext_ids.iter().enumerate() {
            geo.to_ext[a][e] = dist(window[a], ev)?;
        }
        for (bi, &(bv, _)) in bdy_vec.iter().enumerate() {
            geo.to_bdy[a][bi] = dist(window[a], bv)?;
        }
    }

    // Bridge masses p^beta(x_i, x_j) and the loop mass p-bar, d = 1.
    let grid_pt = |i: usize| TorusPoint::new(vec![i as f64 / g as f64]);
    let mut p_mass = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            p_mass[i * g + j] =
                transition_density(&grid_pt(i), &grid_pt(j), beta, 1e-13).unwrap();
        }
    }
    let p_bar = diagonal_density(beta, 1, 1e-13).unwrap();

    // Exterior chain on the full volume.
    let mut chain_rng = derive_stream(seed, "rdmk-mc-chain", 0);
    let mut state = if ext_ids.is_empty() {
        None
    } else {
        let mut s = GibbsSamplerState::free_start(
            volume,
            beta,
            l,
            1,
            boundary.cloned(),
            oracle,
            spec,
            &mut chain_rng,
        )?;
        let sampler = SamplerParams::default();
        let burn = mc.burn_in_sweeps.unwrap_or(10 * volume.len());
        for _ in 0..burn {
            metropolis_sweep(&mut s, oracle, spec, &sampler, &mut chain_rng)?;
        }
        Some(s)
    };
    let sampler = SamplerParams::default();

    let mut batch_sums = vec![vec![0.0f64; dw * dw]; mc.batches];
    let mut batch_counts = vec![0usize; mc.batches];

    for t in 0..mc.exterior_samples {
        let ext_config = if let Some(s) = state.as_mut() {
            for _ in 0..mc.thin {
                metropolis_sweep(s, oracle, spec, &sampler, &mut chain_rng)?;
            }
            let ext_loops: BTreeMap<usize, DiscretizedPath> = ext_ids
                .iter()
                .map(|&v| (v, s.config.get(v).unwrap().clone()))
                .collect();
            Some(LoopConfiguration::new(ext_loops).map_err(|e| {
                FkError::NotEnoughSamples(e.to_string())
            })?)
        } else {
            None
        };
        let mut inner_rng = derive_stream(seed, "rdmk-mc-inner", t as u64);

        // Window partition factor Z_W(Omega).
        let mut z_acc = 0.0;
        for _ in 0..mc.loop_samples {
            let paths: Vec<DiscretizedPath> = (0..w)
                .map(|_| {
                    let x = TorusPoint::new(vec![inner_rng.gen::<f64>()]);
                    sample_loop(&x, beta, l, &mut inner_rng).unwrap()
                })
                .collect();
            let h = window_energy(
                &paths,
                ext_config.as_ref(),
                &ext_ids,
                &bdy_vec,
                &geo,
                spec,
            )?;
            z_acc += (-h).exp();
        }
        let z = p_bar.powi(w as i32) * z_acc / mc.loop_samples as f64;

        let batch = t * mc.batches / mc.exterior_samples;
        batch_counts[batch] += 1;
        let sums = &mut batch_sums[batch];

        // Numerators over the evaluation grid.
        let mut digits_x = vec![0usize; w];
        let mut digits_y = vec![0usize; w];
        for xi in 0..dw {
            decode(xi, g, &mut digits_x);
            for yi in 0..dw {
                decode(yi, g, &mut digits_y);
                let mut b_acc = 0.0;
                for _ in 0..mc.bridge_samples {
                    let paths: Vec<DiscretizedPath> = (0..w)
                        .map(|a| {
                            sample_bridge(
                                &grid_pt(digits_x[a]),
                                &grid_pt(digits_y[a]),
                                beta,
                                l,
                                &mut inner_rng,
                            )
                            .unwrap()
                        })
                        .collect();
                    let h = window_energy(
                        &paths,
                        ext_config.as_ref(),
                        &ext_ids,
                        &bdy_vec,
                        &geo,
                        spec,
                    )?;
                    b_acc += (-h).exp();
                }
                let mut mass = 1.0;
                for a in 0..w {
                    mass *= p_mass[digits_x[a] * g + digits_y[a]];
                }
                let b_val = mass * b_acc / mc.bridge_samples as f64;
                sums[xi * dw + yi] += b_val / z;
            }
        }
    }

    let n_tot: usize = batch_counts.iter().sum();
    let mut values = vec![0.0; dw * dw];
    let mut std_errors = vec![0.0; dw * dw];
    for idx in 0..dw * dw {
        let mean: f64 =
            batch_sums.iter().map(|b| b[idx]).sum::<f64>() / n_tot as f64;
        values[idx] = mean;
        let mut var = 0.0;
        let mut used = 0.0;
        for (b, sums) in batch_sums.iter().enumerate() {
            if batch_counts[b] == 0 {
                continue;
            }
            let bm = sums[idx] / batch_counts[b] as f64;
            var += (bm - mean) * (bm - mean);
            used += 1.0;
        }
        if used > 1.0 {
            std_errors[idx] = (var / (used - 1.0) / used).sqrt();
        }
    }

    Ok(RdmKernelEstimate {
        window: window.to_vec(),
        grid: g,
        l_slices: l,
        beta,
        values,
        std_errors,
        method: EstimateMethod::Mc,
        seed,
    })
}

fn decode(mut idx: usize, g: usize, digits: &mut [usize]) {
    for d in digits.iter_mut() {
        *d = idx % g;
        idx /= g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdlt::tree_to_triangulation;
    use crate::fk::brute::brute_force_rdmk;
    use crate::gw::RootedPlanarTree;
    use crate::interaction::{DecayJ, PotentialU, PotentialV};
    use approx::assert_abs_diff_eq;

    fn chain_oracle(height: usize) -> DistanceOracle {
        let tri = tree_to_triangulation(&RootedPlanarTree::chain(height)).unwrap();
        DistanceOracle::new(&tri)
    }

    #[test]
    fn free_case_is_exact() {
        let oracle = chain_oracle(0);
        let params = BruteParams {
            grid: 8,
            l_slices: 4,
            beta: 1.0,
        };
        let mc = McParams {
            exterior_samples: 32,
            bridge_samples: 1,
            loop_samples: 1,
            ..McParams::default()
        };
        let est = estimate_rdmk_mc(
            &oracle,
            &[0],
            &[0],
            None,
            &InteractionSpec::free(),
            &params,
            &mc,
            7,
        )
        .unwrap();
        let p_bar = diagonal_density(1.0, 1, 1e-13).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                let expect = transition_density(
                    &TorusPoint::new(vec![x as f64 / 8.0]),
                    &TorusPoint::new(vec![y as f64 / 8.0]),
                    1.0,
                    1e-13,
                )
                .unwrap()
                    / p_bar;
                // Weights are identically 1: the estimate is deterministic.
                assert_abs_diff_eq!(est.value(x, y), expect, epsilon = 1e-12);
                assert!(est.std_error(x, y) < 1e-12);
            }
        }
        assert_abs_diff_eq!(est.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_brute_force_on_two_vertices() {
        let oracle = chain_oracle(1);
        let spec = InteractionSpec::new(
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
        .unwrap();
        let params = BruteParams {
            grid: 8,
            l_slices: 3,
            beta: 1.0,
        };
        let oracle_est =
            brute_force_rdmk(&oracle, &[0, 1], &[0], None, &spec, &params).unwrap();
        let mc = McParams {
            exterior_samples: 256,
            thin: 2,
            bridge_samples: 8,
            loop_samples: 64,
            ..McParams::default()
        };
        let est =
            estimate_rdmk_mc(&oracle, &[0, 1], &[0], None, &spec, &params, &mc, 11).unwrap();
        let mut worst_z = 0.0f64;
        for x in 0..8 {
            for y in 0..8 {
                let diff = (est.value(x, y) - oracle_est.value(x, y)).abs();
                let sigma = est.std_error(x, y).max(1e-12);
                worst_z = worst_z.max(diff / sigma);
            }
        }
        assert!(worst_z < 4.0, "worst z-score {worst_z}");
        // Trace consistent with 1 within error.
        let trace_err: f64 = (0..8).map(|i| est.std_error(i, i) / 8.0).sum();
        assert!((est.trace() - 1.0).abs() < 4.0 * trace_err.max(1e-6));
    }
}
