//! Linearly edge-reinforced random walks on critical Galton-Watson trees.
//!
//! The crate is organised bottom-up:
//!
//! * [`offspring`]: critical offspring laws in a stable domain of attraction.
//! * [`trees`]: plane trees, size-conditioned and Kesten samplers, codings.
//! * [`environment`]: initial weights, Dirichlet parameters, Gamma-sampled
//!   environments and the potential/resistance/measure they induce.
//! * [`walkers`]: reinforced, quenched and continuous-time walkers.
//! * [`oracle`]: exact small-instance computations.
//! * [`snake`]: the tree-indexed Gaussian field and distorted metric/measure.
//! * [`experiments`]: declarative Monte Carlo scenarios.

pub mod environment;
pub mod experiments;
pub mod offspring;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod snake;
pub mod trees;
pub mod walkers;

pub use rng::RandomSource;
