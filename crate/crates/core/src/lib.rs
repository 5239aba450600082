//! Simulation and control workbench for a two-wheeled self-balancing robot.
//!
//! The crate models the robot as a cart-pole ([`plant`]), measures it with four
//! downward IR range sensors and two wheel encoders ([`sensors`]), reconstructs
//! travel, wheel speed, tilt and tilt rate with a leaky differentiator
//! ([`estimation`]), and closes the loop with a PD summing junction, state
//! feedback or an LQR design ([`control`]). [`simloop`] runs the fixed-tick
//! closed loop and records traces; [`config`], [`trace`] and [`telemetry`]
//! cover the file and wire formats.

pub mod config;
pub mod control;
pub mod error;
pub mod estimation;
pub mod plant;
pub mod sensors;
pub mod simloop;
pub mod telemetry;
pub mod trace;

pub use error::{Error, Result};
