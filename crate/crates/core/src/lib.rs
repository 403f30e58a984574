//! Turntable calibration of a MEMS gyroscope's z-axis scale factor and bias.
//!
//! * [`sensor_model`] simulates up/down turntable recordings from a reduced
//!   error model.
//! * [`calibration`] is the model-based baseline: single-axis closed form and
//!   the six-position least-squares solve.
//! * [`nn`] is a small reverse-mode autodiff engine and the multi-head CNN
//!   that estimates both terms from two seconds of data.
//! * [`pipeline`] turns labeled scenarios into training windows.
//! * [`eval`] computes absolute error, improvement, and convergence time.
//! * [`cli`] and [`config`] wire everything into reproducible runs.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod sensor_model;

pub use error::{Error, Result};
