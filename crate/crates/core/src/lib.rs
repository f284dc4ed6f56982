//! Distributional optimization toolbox: isotropic Gaussian random-function
//! models, Random Function Descent step sizes, covariance estimation from
//! mini-batch losses, Bayesian optimization, and an exact dimension-free
//! simulator for gradient span algorithms.

pub mod gaussian;
pub mod kernels;
pub mod numerics;
pub mod bayesopt;
pub mod estimation;
pub mod rfd;
pub mod simulator;
