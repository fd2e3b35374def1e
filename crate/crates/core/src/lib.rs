pub mod corpus;
pub mod denoise;
pub mod java;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tokenizer;
pub mod train;
