pub mod agent;
pub mod cli;
pub mod data;
pub mod env;
pub mod eval;
pub mod feature_client;
pub mod features;
pub mod geometry;
pub mod qnet;
pub mod saliency;
pub mod train;
