//! Metropolis sampler for the loop-ensemble Gibbs measure.
//!
//! Proposals are draws from the free conditional law (independence moves),
//! so the Hastings ratio reduces to exp(-dh) with dh the change in the
//! single-vertex conditional energy: a full-loop redraw at a fresh marked
//! point keeps the chain ergodic across winding sectors, and mid-segment
//! bridge redraws keep acceptance high at large beta.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cdlt::DistanceOracle;
use crate::fk::brute::FkError;
use crate::fk::config::LoopConfiguration;
use crate::interaction::{
    classical_pair_energy, config_energy, pair_energy, self_energy, InteractionSpec,
};
use crate::torus::{sample_bridge, sample_loop, DiscretizedPath, TorusPoint};

pub const ENERGY_CACHE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct SamplerParams {
    /// Probability of a whole-loop redraw (vs. a mid-segment move).
    pub full_redraw_prob: f64,
    /// Segment length as a fraction of beta for mid-segment moves.
    pub segment_fraction: f64,
    /// Sweeps between energy-cache revalidations.
    pub revalidate_every: u64,
    /// Optional a-priori bound on the single-vertex conditional energy,
    /// asserted on every accepted step in debug builds.
    pub energy_bound: Option<f64>,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            full_redraw_prob: 0.2,
            segment_fraction: 0.25,
            revalidate_every: 64,
            energy_bound: None,
        }
    }
}

#[derive(Debug)]
pub struct GibbsSamplerState {
    pub config: LoopConfiguration,
    pub boundary: Option<BTreeMap<usize, TorusPoint>>,
    pub sweeps: u64,
    pub proposed: u64,
    pub accepted: u64,
    cached_energy: f64,
}

impl GibbsSamplerState {
    pub fn new(
        config: LoopConfiguration,
        boundary: Option<BTreeMap<usize, TorusPoint>>,
        geometry: &DistanceOracle,
        spec: &InteractionSpec,
    ) -> Result<Self, FkError> {
        let energy = total_energy(&config, boundary.as_ref(), geometry, spec)?;
        Ok(GibbsSamplerState {
            config,
            boundary,
            sweeps: 0,
            proposed: 0,
            accepted: 0,
            cached_energy: energy,
        })
    }

    /// Fresh state with every loop drawn from the free law at a uniform
    /// marked point.
    pub fn free_start<R: Rng + ?Sized>(
        vertices: &[usize],
        beta: f64,
        l_slices: usize,
        d: usize,
        boundary: Option<BTreeMap<usize, TorusPoint>>,
        geometry: &DistanceOracle,
        spec: &InteractionSpec,
        rng: &mut R,
    ) -> Result<Self, FkError> {
        let mut loops = BTreeMap::new();
        for &v in vertices {
            let x = TorusPoint::new((0..d).map(|_| rng.gen::<f64>()).collect());
            loops.insert(v, sample_loop(&x, beta, l_slices, rng).unwrap());
        }
        let config = LoopConfiguration::new(loops)
            .map_err(|e| FkError::NotEnoughSamples(e.to_string()))?;
        GibbsSamplerState::new(config, boundary, geometry, spec)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn cached_energy(&self) -> f64 {
        self.cached_energy
    }
}

/// Total energy including single-direction classical boundary terms.
pub fn total_energy(
    config: &LoopConfiguration,
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
) -> Result<f64, FkError> {
    let mut h = config_energy(config, geometry, spec)?.total;
    if let Some(bdy) = boundary {
        for v in config.vertices().collect::<Vec<_>>() {
            for (&b, point) in bdy {
                let d = geometry
                    .distance(v, b)
                    .map_err(|e| FkError::Geometry(e.to_string()))?;
                h += classical_pair_energy(config.get(v).unwrap(), point, d, spec)?;
            }
        }
    }
    Ok(h)
}

/// Every energy term of the full sum that touches vertex v, evaluated for
/// the candidate path: self term, both orientations of every cross pair,
/// and the classical boundary terms.
pub fn vertex_conditional(
    config: &LoopConfiguration,
    v: usize,
    path: &DiscretizedPath,
    boundary: Option<&BTreeMap<usize, TorusPoint>>,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
) -> Result<f64, FkError> {
    let mut h = self_energy(path, spec);
    for o in config.vertices().collect::<Vec<_>>() {
        if o == v {
            continue;
        }
        let d = geometry
            .distance(v, o)
            .map_err(|e| FkError::Geometry(e.to_string()))?;
        let other = config.get(o).unwrap();
        h += pair_energy(path, other, d, spec)?;
        h += pair_energy(other, path, d, spec)?;
    }
    if let Some(bdy) = boundary {
        for (&b, point) in bdy {
            let d = geometry
                .distance(v, b)
                .map_err(|e| FkError::Geometry(e.to_string()))?;
            h += classical_pair_energy(path, point, d, spec)?;
        }
    }
    Ok(h)
}

/// Redraws an interior arc of a loop between two of its slices, from the
/// free bridge law on the segment.
fn propose_segment<R: Rng + ?Sized>(
    path: &DiscretizedPath,
    segment_fraction: f64,
    rng: &mut R,
) -> DiscretizedPath {
    let l = path.steps();
    let seg = ((l as f64 * segment_fraction).round() as usize).clamp(2, l.saturating_sub(1).max(2));
    if seg >= l {
        // Too few slices for a proper sub-bridge; fall back to a fresh loop.
        let x = TorusPoint::new(
            (0..path.dim()).map(|_| rng.gen::<f64>()).collect(),
        );
        return sample_loop(&x, path.beta, l, rng).unwrap();
    }
    let s0 = rng.gen_range(0..l);
    let a = path.slices[s0].clone();
    let b = path.slices[(s0 + seg) % l].clone();
    let piece = sample_bridge(&a, &b, path.beta * seg as f64 / l as f64, seg, rng).unwrap();
    let mut slices = path.slices.clone();
    for (k, slice) in piece.slices.iter().enumerate().take(seg).skip(1) {
        slices[(s0 + k) % l] = slice.clone();
    }
    slices[l] = slices[0].clone();
    DiscretizedPath {
        slices,
        beta: path.beta,
        is_loop: true,
    }
}

/// One Metropolis sweep: one proposal per vertex in id order.
pub fn metropolis_sweep<R: Rng + ?Sized>(
    state: &mut GibbsSamplerState,
    geometry: &DistanceOracle,
    spec: &InteractionSpec,
    params: &SamplerParams,
    rng: &mut R,
) -> Result<(), FkError> {
    let vertices: Vec<usize> = state.config.vertices().collect();
    let beta = state.config.beta();
    let l = state.config.steps();
    let d = state.config.get(vertices[0]).unwrap().dim();
    for &v in &vertices {
        let old = state.config.get(v).unwrap().clone();
        let candidate = if rng.gen::<f64>() < params.full_redraw_prob || l < 4 {
            let x = TorusPoint::new((0..d).map(|_| rng.gen::<f64>()).collect());
            sample_loop(&x, beta, l, rng).unwrap()
        } else {
            propose_segment(&old, params.segment_fraction, rng)
        };
        let h_old =
            vertex_conditional(&state.config, v, &old, state.boundary.as_ref(), geometry, spec)?;
        let h_new = vertex_conditional(
            &state.config,
            v,
            &candidate,
            state.boundary.as_ref(),
            geometry,
            spec,
        )?;
        if let Some(bound) = params.energy_bound {
            debug_assert!(
                h_new.abs() <= bound && h_old.abs() <= bound,
                "conditional energy outside the a-priori bound: {h_new} vs {bound}"
            );
        }
        state.proposed += 1;
        let dh = h_new - h_old;
        if dh <= 0.0 || rng.gen::<f64>() < (-dh).exp() {
            state
                .config
                .replace(v, candidate)
                .map_err(|e| FkError::NotEnoughSamples(e.to_string()))?;
            state.accepted += 1;
            state.cached_energy += dh;
        }
    }
    state.sweeps += 1;
    if state.sweeps % params.revalidate_every == 0 {
        let fresh = total_energy(&state.config, state.boundary.as_ref(), geometry, spec)?;
        debug_assert!(
            (fresh - state.cached_energy).abs() <= ENERGY_CACHE_TOL * (1.0 + fresh.abs()),
            "energy cache drifted: cached {} vs fresh {fresh}",
            state.cached_energy
        );
        state.cached_energy = fresh;
    }
    Ok(())
}
