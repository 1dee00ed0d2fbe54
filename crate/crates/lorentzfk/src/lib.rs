//! Simulator and verification suite for quantum bosonic systems on random
//! critical causal Lorentzian triangulations: random-geometry sampling,
//! loop-ensemble Gibbs measures in Feynman-Kac form, reduced-density-matrix
//! kernel estimation, and the tuned-action symmetry verifier.

pub mod cdlt;
pub mod fk;
pub mod gw;
pub mod harness;
pub mod interaction;
pub mod mw;
pub mod rng;
pub mod torus;
