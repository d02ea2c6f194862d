//! Closed-loop co-optimization of vehicle speed and front/rear torque split
//! for a dual-motor electric vehicle driving through a signalized corridor.
//!
//! The crate is organized bottom-up:
//!
//! - [`vehicle`] — longitudinal dynamics and kinematic relations
//! - [`powertrain`] — motor efficiency maps, polynomial power models, envelopes
//! - [`battery`] — equivalent-resistance battery model and SOC integration
//! - [`scenario`] — corridor scenarios: preceding vehicle, signals, grade
//! - [`prediction`] — preceding-vehicle prediction and uncertainty injection
//! - [`ocp`] — transcription of the finite-horizon optimal control problem
//! - [`nlp`] / [`solver`] — general sparse NLP interface and interior-point solver
//! - [`mpc`] — receding-horizon closed loop and plant integration
//! - [`baseline`] — rule-based torque split, baseline replay, benefit metrics
//! - [`config`] — run configuration file format and defaults

pub mod baseline;
pub mod battery;
pub mod config;
pub mod error;
pub mod model;
pub mod mpc;
pub mod nlp;
pub mod ocp;
pub mod powertrain;
pub mod prediction;
pub mod scenario;
pub mod solver;
pub mod vehicle;

pub use error::{Error, Result};
