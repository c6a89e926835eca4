//! Command-line front end for the `khm-core` experiments.

pub mod app;
pub mod plot;

pub use app::{run, Cli};
