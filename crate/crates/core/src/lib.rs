pub mod analysis;
pub mod baselines;
pub mod data;
pub mod experiment;
pub mod graph;
pub mod learner;
pub mod plot;
pub mod protocol;
pub mod quantizer;
pub mod rf_kernel;
pub mod rng;
