//! Generalized coordinates and support models.
//!
//! Coordinate conventions (fixed once for the whole crate):
//!
//! * World frame: x forward (walking direction), y up.
//! * Stance parameterization (5 coordinates):
//!   `q = [theta0, theta1, theta2, theta3, theta4]`
//!   = [backpack pitch, left hip, left knee, right hip, right knee].
//! * Flight parameterization (7): `[x0, y0, theta0..theta4]` where
//!   `(x0, y0)` is the hip junction (base of the backpack link).
//! * Backpack pitch is measured CCW from the +y axis; at `theta0 = 0` the
//!   trunk points straight up.
//! * Hip angles are relative to the trunk's downward extension, flexion
//!   (thigh forward) positive. Knee angles are relative to the thigh,
//!   flexion negative (knee angle <= 0 in normal gait, e.g. -45 deg neutral).
//! * All absolute link angles are CCW-positive, so a rigid rotation of the
//!   whole mechanism adds the same increment to every absolute angle.

use nalgebra::DVector;

use crate::error::{ExoError, Result};

/// Which leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Coordinate indices (hip, knee) of this leg in the stance
    /// parameterization.
    pub fn stance_indices(self) -> (usize, usize) {
        match self {
            Side::Left => (1, 2),
            Side::Right => (3, 4),
        }
    }
}

/// Dimension tag for a coordinate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// 5-dim single/double stance coordinates, pinned ankle.
    Stance5,
    /// 7-dim floating-base coordinates.
    Flight7,
    /// 2-dim single-leg (hip, knee) slice used by the simplified model.
    Leg2,
}

impl Parameterization {
    pub fn dim(self) -> usize {
        match self {
            Parameterization::Stance5 => 5,
            Parameterization::Flight7 => 7,
            Parameterization::Leg2 => 2,
        }
    }
}

/// Generalized positions and velocities for one of the parameterizations.
#[derive(Debug, Clone, PartialEq)]
pub struct GenCoords {
    pub param: Parameterization,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl GenCoords {
    fn checked(param: Parameterization, q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        let n = param.dim();
        if q.len() != n {
            return Err(ExoError::DimensionMismatch {
                what: "generalized positions",
                expected: n,
                got: q.len(),
            });
        }
        if qdot.len() != n {
            return Err(ExoError::DimensionMismatch {
                what: "generalized velocities",
                expected: n,
                got: qdot.len(),
            });
        }
        if !q.iter().chain(qdot.iter()).all(|v| v.is_finite()) {
            return Err(ExoError::NonFinite("generalized coordinates"));
        }
        Ok(Self { param, q, qdot })
    }

    pub fn stance(q: [f64; 5], qdot: [f64; 5]) -> Result<Self> {
        Self::checked(
            Parameterization::Stance5,
            DVector::from_row_slice(&q),
            DVector::from_row_slice(&qdot),
        )
    }

    pub fn flight(q: [f64; 7], qdot: [f64; 7]) -> Result<Self> {
        Self::checked(
            Parameterization::Flight7,
            DVector::from_row_slice(&q),
            DVector::from_row_slice(&qdot),
        )
    }

    pub fn leg(q: [f64; 2], qdot: [f64; 2]) -> Result<Self> {
        Self::checked(
            Parameterization::Leg2,
            DVector::from_row_slice(&q),
            DVector::from_row_slice(&qdot),
        )
    }

    pub fn from_vectors(
        param: Parameterization,
        q: DVector<f64>,
        qdot: DVector<f64>,
    ) -> Result<Self> {
        Self::checked(param, q, qdot)
    }

    pub fn dim(&self) -> usize {
        self.param.dim()
    }

    /// Stance-parameterization view of flight coordinates (drops x0, y0),
    /// or a clone for stance coordinates.
    pub fn to_stance(&self) -> Result<GenCoords> {
        match self.param {
            Parameterization::Stance5 => Ok(self.clone()),
            Parameterization::Flight7 => GenCoords::from_vectors(
                Parameterization::Stance5,
                self.q.rows(2, 5).into_owned(),
                self.qdot.rows(2, 5).into_owned(),
            ),
            Parameterization::Leg2 => Err(ExoError::DimensionMismatch {
                what: "stance view of leg coordinates",
                expected: 5,
                got: 2,
            }),
        }
    }

    /// Per-leg (hip, knee) slice of stance coordinates together with the
    /// backpack pitch, as used by the simplified per-leg model.
    pub fn leg_slice(&self, side: Side) -> Result<LegCoords> {
        if self.param != Parameterization::Stance5 {
            return Err(ExoError::DimensionMismatch {
                what: "leg slice source",
                expected: 5,
                got: self.dim(),
            });
        }
        let (h, k) = side.stance_indices();
        Ok(LegCoords {
            side,
            trunk_pitch: self.q[0],
            coords: GenCoords::leg([self.q[h], self.q[k]], [self.qdot[h], self.qdot[k]])?,
        })
    }
}

/// One leg's coordinates for the simplified (independent double pendulum)
/// model. `trunk_pitch` anchors the leg's absolute orientation; on hardware
/// it comes from the trunk IMU.
#[derive(Debug, Clone, PartialEq)]
pub struct LegCoords {
    pub side: Side,
    pub trunk_pitch: f64,
    pub coords: GenCoords,
}

/// Support model selecting which constrained dynamics apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportModel {
    /// No ground contact; 7-dim floating-base coordinates.
    Flight,
    /// Left ankle pinned; 5-dim coordinates.
    LeftStance,
    /// Right ankle pinned; 5-dim coordinates.
    RightStance,
    /// Both feet loaded; dynamics interpolated between left and right
    /// stance with factor `alpha` in [0, 1] (1 = pure left stance).
    DoubleStance { alpha: f64 },
    /// Simplified model, stance leg: ankle pinned, 2-dim (hip, knee).
    SimplifiedStance { side: Side, trunk_pitch: f64 },
    /// Simplified model, swing leg: hip pinned, 2-dim (hip, knee).
    SimplifiedSwing { side: Side, trunk_pitch: f64 },
}

impl SupportModel {
    pub fn expected_param(&self) -> Parameterization {
        match self {
            SupportModel::Flight => Parameterization::Flight7,
            SupportModel::LeftStance
            | SupportModel::RightStance
            | SupportModel::DoubleStance { .. } => Parameterization::Stance5,
            SupportModel::SimplifiedStance { .. } | SupportModel::SimplifiedSwing { .. } => {
                Parameterization::Leg2
            }
        }
    }

    pub fn check_coords(&self, coords: &GenCoords) -> Result<()> {
        let expected = self.expected_param();
        if coords.param != expected {
            return Err(ExoError::DimensionMismatch {
                what: "coordinates for support model",
                expected: expected.dim(),
                got: coords.dim(),
            });
        }
        if let SupportModel::DoubleStance { alpha } = self {
            if !(0.0..=1.0).contains(alpha) {
                return Err(ExoError::InvalidAlpha {
                    alpha: *alpha,
                    range: "[0, 1]",
                });
            }
        }
        Ok(())
    }
}

/// Coordinates plus timestamp, the controller-facing state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoState {
    pub coords: GenCoords,
    /// Time, s.
    pub t: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_checks() {
        assert!(GenCoords::stance([0.0; 5], [0.0; 5]).is_ok());
        let bad = GenCoords::from_vectors(
            Parameterization::Stance5,
            DVector::zeros(4),
            DVector::zeros(5),
        );
        assert!(matches!(bad, Err(ExoError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let bad = GenCoords::stance([f64::NAN, 0.0, 0.0, 0.0, 0.0], [0.0; 5]);
        assert!(matches!(bad, Err(ExoError::NonFinite(_))));
    }

    #[test]
    fn leg_slice_extracts_hip_knee() {
        let c = GenCoords::stance([0.1, 0.2, -0.3, 0.4, -0.5], [1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let left = c.leg_slice(Side::Left).unwrap();
        assert_eq!(left.trunk_pitch, 0.1);
        assert_eq!(left.coords.q[0], 0.2);
        assert_eq!(left.coords.q[1], -0.3);
        let right = c.leg_slice(Side::Right).unwrap();
        assert_eq!(right.coords.qdot[0], 4.0);
    }

    #[test]
    fn support_coord_consistency() {
        let stance = GenCoords::stance([0.0; 5], [0.0; 5]).unwrap();
        assert!(SupportModel::Flight.check_coords(&stance).is_err());
        assert!(SupportModel::LeftStance.check_coords(&stance).is_ok());
        assert!(SupportModel::DoubleStance { alpha: 1.5 }
            .check_coords(&stance)
            .is_err());
    }
}
