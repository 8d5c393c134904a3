//! Loading-rate model for ablation-loaded surface-electrode ion traps.
//!
//! The crate computes the radial fields of a gapless five-wire trap, nested
//! trapping cross-sections on a grid, the velocity-integrated relative loading
//! probability, closed-form regime estimates, uncertainty bands and the
//! time-of-flight plume model used to calibrate the source.

pub mod analytic_estimates;
pub mod config;
pub mod error;
pub mod field_model;
pub mod loading_model;
pub mod species;
pub mod spline;
pub mod tof_analysis;
pub mod trajectory;
pub mod uncertainty;
pub mod volumes;

pub use error::{Error, Result};
