//! Integrated powertrain and thermal management (IPTM) simulation of a
//! connected battery-electric vehicle, with a multi-rate model predictive
//! controller that trades off tracking, energy use and cell degradation.

pub mod battery;
pub mod btms;
pub mod error;
pub mod mpc;
pub mod plant;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
