//! Loop configurations: one closed time-length-beta path per vertex of a
//! finite volume.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::torus::DiscretizedPath;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("loop at vertex {0} is not closed")]
    OpenLoop(usize),
    #[error("loop at vertex {0} has beta {1} (expected {2})")]
    MixedBeta(usize, f64, f64),
    #[error("loop at vertex {0} has {1} steps (expected {2})")]
    MixedSlices(usize, usize, usize),
    #[error("configuration is empty")]
    Empty,
}

/// One loop per vertex; all loops share beta and the slice count.
#[derive(Clone, Debug)]
pub struct LoopConfiguration {
    loops: BTreeMap<usize, DiscretizedPath>,
    beta: f64,
    steps: usize,
}

impl LoopConfiguration {
    pub fn new(loops: BTreeMap<usize, DiscretizedPath>) -> Result<Self, ConfigError> {
        let (&first, proto) = loops.iter().next().ok_or(ConfigError::Empty)?;
        let beta = proto.beta;
        let steps = proto.steps();
        let _ = first;
        for (&v, p) in &loops {
            if !p.is_loop || p.slices.first() != p.slices.last() {
                return Err(ConfigError::OpenLoop(v));
            }
            if p.beta != beta {
                return Err(ConfigError::MixedBeta(v, p.beta, beta));
            }
            if p.steps() != steps {
                return Err(ConfigError::MixedSlices(v, p.steps(), steps));
            }
        }
        Ok(LoopConfiguration { loops, beta, steps })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        self.loops.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.loops.contains_key(&v)
    }

    pub fn get(&self, v: usize) -> Option<&DiscretizedPath> {
        self.loops.get(&v)
    }

    pub fn loops(&self) -> &BTreeMap<usize, DiscretizedPath> {
        &self.loops
    }

    /// Replaces one vertex's loop; the shape contract is revalidated.
    pub fn replace(&mut self, v: usize, p: DiscretizedPath) -> Result<(), ConfigError> {
        if !p.is_loop || p.slices.first() != p.slices.last() {
            return Err(ConfigError::OpenLoop(v));
        }
        if p.beta != self.beta {
            return Err(ConfigError::MixedBeta(v, p.beta, self.beta));
        }
        if p.steps() != self.steps {
            return Err(ConfigError::MixedSlices(v, p.steps(), self.steps));
        }
        self.loops.insert(v, p);
        Ok(())
    }
}
