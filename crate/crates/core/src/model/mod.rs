//! Kinematics and dynamics of the five-link planar exoskeleton in flight,
//! single-stance, interpolated double-stance and simplified per-leg
//! parameterizations.

pub mod coords;
pub mod dynamics;
pub mod kinematics;
pub mod params;

pub use coords::{ExoState, GenCoords, LegCoords, Parameterization, Side, SupportModel};
pub use dynamics::{dynamics_terms, interpolate_ds, stance_terms_for, total_energy, DynamicsTerms};
pub use kinematics::{
    ankle_jacobian, ankle_jacobian_dot, ankle_position, com_kinematics, constraint_matrix,
    ComKinematics,
};
pub use params::{ExoModel, FrictionParams, LinkParams, ModelOverrides, GRAVITY};
