//! Consistency checks for the loop-ensemble Gibbs measures: conditional
//! densities against the joint (DLR consistency), partial-trace
//! compatibility across nested windows, and free-ensemble partition ratios.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cdlt::DistanceOracle;
use crate::fk::brute::{
    grid_point, step_matrix, BruteParams, EstimateMethod, FkError, RdmKernelEstimate,
    BRUTE_STATE_GUARD,
};
use crate::fk::config::LoopConfiguration;
use crate::fk::metropolis::total_energy;
use crate::interaction::{conditional_energy, InteractionSpec};
use crate::rng::derive_stream;
use crate::torus::{sample_loop, DiscretizedPath, TorusPoint};

/// A grid loop over one vertex, encoded by L grid digits (slice L wraps to
/// slice 0).
fn grid_loop(digits: &[usize], g: usize, beta: f64) -> DiscretizedPath {
    let mut slices: Vec<TorusPoint> = digits.iter().map(|&d| grid_point(d, g)).collect();
    slices.push(slices[0].clone());
    DiscretizedPath {
        slices,
        beta,
        is_loop: true,
    }
}

/// Free weight of a grid loop configuration: the product of normalized
/// transition steps around every loop.
fn free_weight(loops: &[Vec<usize>], step: &[f64], g: usize) -> f64 {
    let mut w = 1.0;
    for digits in loops {
        for k in 0..digits.len() {
            let a = digits[k];
            let b = digits[(k + 1) % digits.len()];
            w *= step[a * g + b];
        }
    }
    w
}

fn decode_digits(mut idx: usize, g: usize, per_loop: usize, loops: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0usize; per_loop]; loops];
    for lp in out.iter_mut() {
        for d in lp.iter_mut() {
            *d = idx % g;
            idx /= g;
        }
    }
    out
}

/// Max deviation between the conditional density of the inner window given
/// the exterior, computed two ways over the full grid configuration space of
/// the window: by direct conditioning of the joint density, and by the
/// conditional-energy formula normalized by the conditional partition sum.
/// The exterior test set is `outer_samples` random grid configurations.
pub fn fkdlr_residual(
    oracle: &DistanceOracle,
    volume: &[usize],
    window: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    params: &BruteParams,
    outer_samples: usize,
    seed: u64,
) -> Result<f64, FkError> {
    if window.is_empty() || window.len() > volume.len() {
        return Err(FkError::WindowTooLarge);
    }
    for v in window {
        if !volume.contains(v) {
            return Err(FkError::WindowTooLarge);
        }
    }
    let g = params.grid;
    let l = params.l_slices;
    let w = window.len();
    let inner_states = (g as f64).powi((l * w) as i32);
    if inner_states > BRUTE_STATE_GUARD {
        return Err(FkError::TooLarge(inner_states, BRUTE_STATE_GUARD));
    }
    let n_inner = g.pow((l * w) as u32);
    let ext: Vec<usize> = volume
        .iter()
        .copied()
        .filter(|v| !window.contains(v))
        .collect();
    let step = step_matrix(g, params.beta / l as f64);

    let mut rng = derive_stream(seed, "fkdlr-outer", 0);
    let mut worst = 0.0f64;
    for _ in 0..outer_samples.max(1) {
        let outer = if ext.is_empty() {
            None
        } else {
            let loops: BTreeMap<usize, DiscretizedPath> = ext
                .iter()
                .map(|&v| {
                    let digits: Vec<usize> =
                        (0..l).map(|_| rng.gen_range(0..g)).collect();
                    (v, grid_loop(&digits, g, params.beta))
                })
                .collect();
            Some(
                LoopConfiguration::new(loops)
                    .map_err(|e| FkError::Geometry(e.to_string()))?,
            )
        };

        let mut joint = vec![0.0f64; n_inner];
        let mut cond = vec![0.0f64; n_inner];
        for idx in 0..n_inner {
            let digit_loops = decode_digits(idx, g, l, w);
            let wf = free_weight(&digit_loops, &step, g);
            let inner_loops: BTreeMap<usize, DiscretizedPath> = window
                .iter()
                .zip(&digit_loops)
                .map(|(&v, d)| (v, grid_loop(d, g, params.beta)))
                .collect();
            let inner = LoopConfiguration::new(inner_loops)
                .map_err(|e| FkError::Geometry(e.to_string()))?;

            // Path one: joint density, conditioned directly.
            let mut all = BTreeMap::new();
            for v in inner.vertices() {
                all.insert(v, inner.get(v).unwrap().clone());
            }
            if let Some(out) = &outer {
                for v in out.vertices() {
                    all.insert(v, out.get(v).unwrap().clone());
                }
            }
            let full = LoopConfiguration::new(all)
                .map_err(|e| FkError::Geometry(e.to_string()))?;
            let h_joint = total_energy(&full, boundary, oracle, spec)?;
            joint[idx] = wf * (-h_joint).exp();

            // Path two: conditional energy over the partition sum.
            let h_cond =
                conditional_energy(&inner, outer.as_ref(), boundary, oracle, spec)?;
            cond[idx] = wf * (-h_cond).exp();
        }
        let z_joint: f64 = joint.iter().sum();
        let z_cond: f64 = cond.iter().sum();
        if z_joint <= 0.0 || z_cond <= 0.0 {
            return Err(FkError::DegenerateWeights(0.0));
        }
        for idx in 0..n_inner {
            worst = worst.max((joint[idx] / z_joint - cond[idx] / z_cond).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct CompatibilityReport {
    /// Max absolute deviation between the partially traced wide kernel and
    /// the narrow kernel.
    pub max_deviation: f64,
    /// Max deviation in units of the combined standard error (infinite when
    /// both estimates are exact).
    pub max_sigma_deviation: f64,
}

/// Partially traces the wide-window kernel over its extra coordinates with
/// grid quadrature and compares against the narrow-window kernel pointwise.
/// The narrow window must be a prefix of the wide one, on the same grid.
pub fn compatibility_check(
    wide: &RdmKernelEstimate,
    narrow: &RdmKernelEstimate,
) -> Result<CompatibilityReport, FkError> {
    if wide.grid != narrow.grid || wide.l_slices != narrow.l_slices {
        return Err(FkError::GridMismatch(format!(
            "G {} L {} vs G {} L {}",
            wide.grid, wide.l_slices, narrow.grid, narrow.l_slices
        )));
    }
    if (wide.beta - narrow.beta).abs() > 1e-12 {
        return Err(FkError::GridMismatch("beta mismatch".into()));
    }
    let wn = narrow.window.len();
    if wn >= wide.window.len() || narrow.window != wide.window[..wn] {
        return Err(FkError::GridMismatch(
            "narrow window is not a proper prefix of the wide window".into(),
        ));
    }
    let dn = narrow.window_dim();
    let extra = wide.window_dim() / dn;
    let weight = 1.0 / extra as f64;

    let mut max_dev = 0.0f64;
    let mut max_sig = 0.0f64;
    for x in 0..dn {
        for y in 0..dn {
            let mut traced = 0.0;
            let mut var = 0.0;
            for e in 0..extra {
                traced += wide.value(x + e * dn, y + e * dn) * weight;
                let se = wide.std_error(x + e * dn, y + e * dn) * weight;
                var += se * se;
            }
            let se_n = narrow.std_error(x, y);
            var += se_n * se_n;
            let dev = (traced - narrow.value(x, y)).abs();
            max_dev = max_dev.max(dev);
            let sig = if var > 0.0 { dev / var.sqrt() } else { f64::INFINITY };
            if dev > 0.0 {
                max_sig = max_sig.max(sig);
            }
        }
    }
    // Exact-vs-exact comparisons report deviation only.
    if wide.method == EstimateMethod::Oracle && narrow.method == EstimateMethod::Oracle {
        max_sig = 0.0;
    }
    Ok(CompatibilityReport {
        max_deviation: max_dev,
        max_sigma_deviation: max_sig,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct PartitionRatio {
    pub ratio: f64,
    pub std_error: f64,
    pub effective_samples: f64,
}

/// Xi / Xi_free by free-ensemble importance sampling: the mean of
/// exp(-h) over independent free loop configurations on the volume
/// (conditioned on an optional classical exterior).
pub fn partition_ratio<R: Rng + ?Sized>(
    oracle: &DistanceOracle,
    volume: &[usize],
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    spec: &InteractionSpec,
    beta: f64,
    l_slices: usize,
    dim: usize,
    samples: usize,
    rng: &mut R,
) -> Result<PartitionRatio, FkError> {
    if samples < 2 {
        return Err(FkError::NotEnoughSamples(format!("{samples} free samples")));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let loops: BTreeMap<usize, DiscretizedPath> = volume
            .iter()
            .map(|&v| {
                let x = TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect());
                (v, sample_loop(&x, beta, l_slices, rng).unwrap())
            })
            .collect();
        let config =
            LoopConfiguration::new(loops).map_err(|e| FkError::Geometry(e.to_string()))?;
        let h = total_energy(&config, boundary, oracle, spec)?;
        let w = (-h).exp();
        sum += w;
        sum_sq += w * w;
    }
    let ess = sum * sum / sum_sq;
    if !ess.is_finite() || ess < 10.0 {
        return Err(FkError::DegenerateWeights(ess));
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) / (n - 1.0);
    Ok(PartitionRatio {
        ratio: mean,
        std_error: var.sqrt(),
        effective_samples: ess,
    })
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
    fn fkdlr_free_case_vanishes() {
        let oracle = chain_oracle(1);
        let params = BruteParams {
            grid: 6,
            l_slices: 3,
            beta: 1.0,
        };
        let r = fkdlr_residual(
            &oracle,
            &[0, 1],
            &[0],
            None,
            &InteractionSpec::free(),
            &params,
            4,
            3,
        )
        .unwrap();
        assert!(r < 1e-12, "free residual {r}");
    }

    #[test]
    fn fkdlr_interacting_and_symmetric() {
        let oracle = chain_oracle(1);
        let spec = cos_spec();
        let params = BruteParams {
            grid: 6,
            l_slices: 3,
            beta: 1.0,
        };
        let r0 =
            fkdlr_residual(&oracle, &[0, 1], &[0], None, &spec, &params, 6, 5).unwrap();
        let r1 =
            fkdlr_residual(&oracle, &[0, 1], &[1], None, &spec, &params, 6, 5).unwrap();
        assert!(r0 < 1e-9, "residual with vertex 0 inner: {r0}");
        assert!(r1 < 1e-9, "residual with vertex 1 inner: {r1}");
    }

    #[test]
    fn compatibility_brute_two_to_one() {
        let oracle = chain_oracle(1);
        let spec = cos_spec();
        let params = BruteParams {
            grid: 8,
            l_slices: 3,
            beta: 1.0,
        };
        let wide =
            brute_force_rdmk(&oracle, &[0, 1], &[0, 1], None, &spec, &params).unwrap();
        let narrow =
            brute_force_rdmk(&oracle, &[0, 1], &[0], None, &spec, &params).unwrap();
        let rep = compatibility_check(&wide, &narrow).unwrap();
        assert!(rep.max_deviation < 1e-10, "deviation {}", rep.max_deviation);
    }

    #[test]
    fn compatibility_rejects_grid_mismatch() {
        let oracle = chain_oracle(1);
        let spec = InteractionSpec::free();
        let a = brute_force_rdmk(
            &oracle,
            &[0, 1],
            &[0, 1],
            None,
            &spec,
            &BruteParams {
                grid: 8,
                l_slices: 3,
                beta: 1.0,
            },
        )
        .unwrap();
        let b = brute_force_rdmk(
            &oracle,
            &[0, 1],
            &[0],
            None,
            &spec,
            &BruteParams {
                grid: 6,
                l_slices: 3,
                beta: 1.0,
            },
        )
        .unwrap();
        assert!(matches!(
            compatibility_check(&a, &b),
            Err(FkError::GridMismatch(_))
        ));
    }

    #[test]
    fn partition_ratio_free_is_one() {
        let oracle = chain_oracle(1);
        let mut rng = derive_stream(17, "pr-test", 0);
        let pr = partition_ratio(
            &oracle,
            &[0, 1],
            None,
            &InteractionSpec::free(),
            1.0,
            4,
            1,
            64,
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(pr.ratio, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pr.effective_samples, 64.0, epsilon = 1e-9);
    }

    #[test]
    fn partition_ratio_interacting_in_band() {
        // exp(-h) is bounded between exp(-sum of bounds) and exp(+...).
        let oracle = chain_oracle(1);
        let spec = cos_spec();
        let mut rng = derive_stream(17, "pr-test", 1);
        let pr = partition_ratio(&oracle, &[0, 1], None, &spec, 1.0, 4, 1, 256, &mut rng)
            .unwrap();
        let cap = crate::interaction::energy_bound(1.0, &spec, 2.0, 2).exp();
        assert!(pr.ratio > 1.0 / cap && pr.ratio < cap, "ratio {}", pr.ratio);
        assert!(pr.effective_samples > 10.0);
    }
}
