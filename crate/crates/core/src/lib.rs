//! Planar five-link floating-base exoskeleton dynamics library and
//! closed-loop interaction-torque control simulator.
//!
//! The crate provides:
//!
//! * whole-body dynamics of a hip-knee exoskeleton with a pinned-ankle
//!   stance model, a floating-base flight model, a GRF-interpolated
//!   double-stance model and a simplified per-leg double-pendulum baseline
//!   ([`model`]);
//! * a gait state machine over ground reaction forces ([`gait`]);
//! * drivetrain friction identification from chirp excitation ([`friction`]);
//! * interaction-torque estimation for single and double stance
//!   ([`estimation`]);
//! * a small dense QP solver with warm starting and KKT certification
//!   ([`qp`]);
//! * the whole-body admittance controller and the simplified per-leg
//!   baseline controller ([`control`]);
//! * a deterministic coupled human-exoskeleton plant simulation ([`sim`]);
//! * phase-windowed interaction-torque metrics ([`metrics`]).

pub mod checks;
pub mod control;
pub mod error;
pub mod estimation;
pub mod friction;
pub mod gait;
pub mod metrics;
pub mod model;
pub mod qp;
pub mod sim;

pub use error::{ExoError, Result};
