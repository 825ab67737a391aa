pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod linalg;
pub mod manifold;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod rng;
