//! Configuration-driven experiment runner for elastography reconstructions.
//!
//! A TOML file describes the mesh, phantom, noise, solver and optional sweep. Runs write
//! CSV fields, PNG rasters and a JSON manifest holding every resolved setting.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod raster;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiment::{run_single, run_sweep, SolverKind, SweepReport, SweepRow};
