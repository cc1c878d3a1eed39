//! Reduced-order modeling of wind-driven quasi-geostrophic ocean turbulence.
//!
//! The crate covers the whole offline/online pipeline: a full-order
//! barotropic vorticity solver that generates snapshots, proper orthogonal
//! decomposition by the method of snapshots, an intrusive Galerkin-projection
//! ROM, a from-scratch stacked LSTM that forecasts modal coefficients in
//! closed loop, and the post-processing used to compare them.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod field;
pub mod fom;
pub mod gp;
pub mod io;
pub mod lstm;
pub mod pod;
pub mod poisson;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use field::{Field2D, Grid};
pub use fom::{FomConfig, SnapshotSet};
pub use gp::{GalerkinTensors, RomTrajectory};
pub use lstm::{LstmModel, TrainConfig};
pub use pod::PodBasis;
