//! Shared numerical kernels: special functions, quadrature rules, seeded RNG
//! plumbing, derivative-free and quasi-Newton optimisers, finite differences
//! and small-sample statistics.

pub mod fd;
pub mod gh;
pub mod optim;
pub mod rng;
pub mod special;
pub mod stats;
