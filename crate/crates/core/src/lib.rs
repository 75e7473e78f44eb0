pub mod cli;
pub mod config;
pub mod coverage;
pub mod driver;
pub mod eval;
pub mod isolation;
pub mod model;
pub mod scoring;
pub mod testbed;
