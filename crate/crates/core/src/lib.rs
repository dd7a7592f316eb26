pub mod cli;
pub mod dmaps;
pub mod embedding;
pub mod error;
pub mod generators;
pub mod interp;
pub mod model;
pub mod timeseries;
pub mod validate;
