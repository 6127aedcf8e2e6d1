pub mod config;
pub mod experiment;
pub mod pipeline;
pub mod sim;
