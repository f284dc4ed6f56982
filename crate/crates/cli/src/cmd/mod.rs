pub mod bayesopt;
pub mod estimate;
pub mod gridsearch;
pub mod simulate;
pub mod stepsize;
