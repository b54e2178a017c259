//! Physical parameters of the five-link planar exoskeleton.
//!
//! The dynamic model uses five rigid bodies: backpack (trunk), left thigh,
//! left shank+foot, right thigh, right shank+foot. The ankle is passive, so
//! the foot is merged into the shank body (mass and inertia composed at the
//! correct offset). Upper/lower thigh and upper/lower shank segments are
//! likewise composed into single bodies.
//!
//! Nominal masses and inertias correspond to a ~20.7 kg hip-knee exoskeleton
//! with a 10.3 kg backpack and 1.87 kg m^2 of apparent rotor inertia per
//! actuated joint (rotor inertia reflected through the 122.5:1 gear ratio).

use serde::{Deserialize, Serialize};

use crate::error::{ExoError, Result};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Mass properties and geometry of one rigid body of the model.
///
/// `com_offset` locates the center of mass along the link axis measured from
/// the link's reference joint:
/// * backpack: from the hip junction, up the trunk;
/// * thigh: from the hip, toward the knee;
/// * shank+foot: from the **ankle**, toward the knee (the foot mass sits at
///   the ankle end, so the composite CoM is naturally referenced there).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Link mass, kg.
    pub mass: f64,
    /// Moment of inertia about the CoM, sagittal axis, kg m^2.
    pub com_inertia: f64,
    /// CoM distance from the reference joint, m.
    pub com_offset: f64,
    /// Joint-to-joint link length, m.
    pub length: f64,
}

impl LinkParams {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.mass.is_finite()
            && self.com_inertia.is_finite()
            && self.com_offset.is_finite()
            && self.length.is_finite())
        {
            return Err(ExoError::NonFinite("link parameters"));
        }
        if self.mass < 0.0 || self.com_inertia < 0.0 {
            return Err(ExoError::Config(format!(
                "{name}: mass and inertia must be nonnegative"
            )));
        }
        if self.com_offset < 0.0 || self.com_offset > self.length {
            return Err(ExoError::Config(format!(
                "{name}: com_offset must lie within [0, length]"
            )));
        }
        Ok(())
    }
}

/// A raw mass/inertia segment used when composing links from CAD-style data.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    /// Segment mass, kg.
    pub mass: f64,
    /// Inertia about the segment's own CoM, kg m^2.
    pub com_inertia: f64,
    /// CoM position along the composite link axis, m (same reference joint
    /// as the resulting `LinkParams`).
    pub com_position: f64,
}

/// Compose several segments rigidly attached along one axis into a single
/// body, using the parallel axis theorem.
pub fn compose_segments(segments: &[Segment], length: f64) -> LinkParams {
    let mass: f64 = segments.iter().map(|s| s.mass).sum();
    let com = if mass > 0.0 {
        segments.iter().map(|s| s.mass * s.com_position).sum::<f64>() / mass
    } else {
        0.0
    };
    let inertia: f64 = segments
        .iter()
        .map(|s| s.com_inertia + s.mass * (s.com_position - com).powi(2))
        .sum();
    LinkParams {
        mass,
        com_inertia: inertia,
        com_offset: com,
        length,
    }
}

/// Coulomb + viscous friction coefficients for the four actuated joints,
/// ordered [left hip, left knee, right hip, right knee].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    /// Coulomb level per joint, N m.
    pub c0: [f64; 4],
    /// Viscous coefficient per joint, N m s.
    pub c1: [f64; 4],
}

impl FrictionParams {
    /// Nominal identified coefficients (hip/knee drivetrains with harmonic
    /// gearing; R^2 of the fits was 0.94-0.96).
    pub fn nominal() -> Self {
        Self {
            c0: [5.01, 4.30, 3.26, 4.45],
            c1: [4.58, 3.25, 4.67, 5.16],
        }
    }

    pub fn zero() -> Self {
        Self {
            c0: [0.0; 4],
            c1: [0.0; 4],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            c0: self.c0.map(|c| c * factor),
            c1: self.c1.map(|c| c * factor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.c0.iter().chain(self.c1.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(ExoError::Config(
                    "friction coefficients must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Index of a dynamic body in the five-link model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkId {
    Backpack = 0,
    LeftThigh = 1,
    LeftShank = 2,
    RightThigh = 3,
    RightShank = 4,
}

/// Complete physical parameterization of the exoskeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoModel {
    pub backpack: LinkParams,
    pub left_thigh: LinkParams,
    pub left_shank: LinkParams,
    pub right_thigh: LinkParams,
    pub right_shank: LinkParams,
    /// Motor rotor inertia reflected through the gear ratio squared, added to
    /// the diagonal mass-matrix entry of each actuated coordinate. Zero for
    /// the passive (no-drive) variant.
    pub rotor_apparent_inertia: f64,
    pub friction: FrictionParams,
}

impl ExoModel {
    /// Nominal model: composed from the per-segment masses and inertias of
    /// the target hardware (backpack 10.3 kg, upper/lower thigh 0.7/2.14 kg,
    /// upper/lower shank 0.64/0.47 kg, foot 1.25 kg) with CoM positions
    /// estimated from the assembly geometry. Rotor apparent inertia
    /// 1.246e-4 * 122.5^2 = 1.87 kg m^2.
    pub fn nominal() -> Self {
        let thigh_len = 0.44;
        let shank_len = 0.42;
        // Backpack CoM estimated 0.25 m above the hip junction.
        let backpack = LinkParams {
            mass: 10.3,
            com_inertia: 0.201,
            com_offset: 0.25,
            length: 0.50,
        };
        // Upper thigh near the hip, lower thigh (with knee drive) near the
        // knee; positions measured from the hip.
        let thigh = compose_segments(
            &[
                Segment {
                    mass: 0.7,
                    com_inertia: 0.002197,
                    com_position: 0.25 * thigh_len,
                },
                Segment {
                    mass: 2.14,
                    com_inertia: 0.005901,
                    com_position: 0.75 * thigh_len,
                },
            ],
            thigh_len,
        );
        // Shank segments + foot, positions measured from the ankle: the foot
        // sits at the ankle (0), lower shank just above it, upper shank near
        // the knee.
        let shank = compose_segments(
            &[
                Segment {
                    mass: 1.25,
                    com_inertia: 0.004441,
                    com_position: 0.0,
                },
                Segment {
                    mass: 0.47,
                    com_inertia: 0.0007941,
                    com_position: 0.25 * shank_len,
                },
                Segment {
                    mass: 0.64,
                    com_inertia: 0.002346,
                    com_position: 0.75 * shank_len,
                },
            ],
            shank_len,
        );
        Self {
            backpack,
            left_thigh: thigh,
            left_shank: shank,
            right_thigh: thigh,
            right_shank: shank,
            rotor_apparent_inertia: 1.246e-4 * 122.5 * 122.5,
            friction: FrictionParams::nominal(),
        }
    }

    /// Passive variant with disassembled drives: no rotor inertia and a
    /// fraction of the drivetrain friction (bearings and linkage remain).
    pub fn no_drive(&self, friction_scale: f64) -> Self {
        let mut m = self.clone();
        m.rotor_apparent_inertia = 0.0;
        m.friction = self.friction.scaled(friction_scale);
        m
    }

    /// Variant with all link masses and inertias scaled by `factor`
    /// (plant-vs-controller mismatch studies).
    pub fn with_mass_scale(&self, factor: f64) -> Self {
        let scale = |l: &LinkParams| LinkParams {
            mass: l.mass * factor,
            com_inertia: l.com_inertia * factor,
            ..*l
        };
        Self {
            backpack: scale(&self.backpack),
            left_thigh: scale(&self.left_thigh),
            left_shank: scale(&self.left_shank),
            right_thigh: scale(&self.right_thigh),
            right_shank: scale(&self.right_shank),
            rotor_apparent_inertia: self.rotor_apparent_inertia,
            friction: self.friction,
        }
    }

    pub fn links(&self) -> [&LinkParams; 5] {
        [
            &self.backpack,
            &self.left_thigh,
            &self.left_shank,
            &self.right_thigh,
            &self.right_shank,
        ]
    }

    /// Total mass of all links, kg.
    pub fn total_mass(&self) -> f64 {
        self.links().iter().map(|l| l.mass).sum()
    }

    /// Total weight m_exo * g, N.
    pub fn total_weight(&self) -> f64 {
        self.total_mass() * GRAVITY
    }

    pub fn validate(&self) -> Result<()> {
        self.backpack.validate("backpack")?;
        self.left_thigh.validate("left_thigh")?;
        self.left_shank.validate("left_shank")?;
        self.right_thigh.validate("right_thigh")?;
        self.right_shank.validate("right_shank")?;
        if !self.rotor_apparent_inertia.is_finite() || self.rotor_apparent_inertia < 0.0 {
            return Err(ExoError::Config(
                "rotor_apparent_inertia must be finite and nonnegative".into(),
            ));
        }
        self.friction.validate()
    }

    /// Load a model from a TOML file. Fields not present fall back to the
    /// nominal model (see `docs` in the repository README for the schema).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overrides: ModelOverrides =
            toml::from_str(text).map_err(|e| ExoError::Config(e.to_string()))?;
        let model = overrides.apply(&Self::nominal());
        model.validate()?;
        Ok(model)
    }
}

impl Default for ExoModel {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Partial model description for configuration files; unspecified fields
/// keep their nominal values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub backpack: Option<LinkParams>,
    pub left_thigh: Option<LinkParams>,
    pub left_shank: Option<LinkParams>,
    pub right_thigh: Option<LinkParams>,
    pub right_shank: Option<LinkParams>,
    pub rotor_apparent_inertia: Option<f64>,
    pub friction: Option<FrictionParams>,
}

impl ModelOverrides {
    pub fn apply(&self, base: &ExoModel) -> ExoModel {
        ExoModel {
            backpack: self.backpack.unwrap_or(base.backpack),
            left_thigh: self.left_thigh.unwrap_or(base.left_thigh),
            left_shank: self.left_shank.unwrap_or(base.left_shank),
            right_thigh: self.right_thigh.unwrap_or(base.right_thigh),
            right_shank: self.right_shank.unwrap_or(base.right_shank),
            rotor_apparent_inertia: self
                .rotor_apparent_inertia
                .unwrap_or(base.rotor_apparent_inertia),
            friction: self.friction.unwrap_or(base.friction),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nominal_masses_match_segment_sums() {
        let m = ExoModel::nominal();
        assert_relative_eq!(m.backpack.mass, 10.3);
        assert_relative_eq!(m.left_thigh.mass, 0.7 + 2.14);
        assert_relative_eq!(m.left_shank.mass, 0.64 + 0.47 + 1.25);
        assert_relative_eq!(m.total_mass(), 10.3 + 2.0 * (2.84 + 2.36));
        assert_relative_eq!(m.rotor_apparent_inertia, 1.87, max_relative = 1e-3);
    }

    #[test]
    fn total_weight_is_g_times_mass() {
        let m = ExoModel::nominal();
        assert!((m.total_weight() - GRAVITY * m.total_mass()).abs() <= 1e-12);
    }

    #[test]
    fn composition_parallel_axis() {
        // Two point masses 1 kg at 0 and 1 m: CoM at 0.5, inertia 2*(0.5^2).
        let link = compose_segments(
            &[
                Segment {
                    mass: 1.0,
                    com_inertia: 0.0,
                    com_position: 0.0,
                },
                Segment {
                    mass: 1.0,
                    com_inertia: 0.0,
                    com_position: 1.0,
                },
            ],
            1.0,
        );
        assert_relative_eq!(link.com_offset, 0.5);
        assert_relative_eq!(link.com_inertia, 0.5);
    }

    #[test]
    fn overrides_partial_toml() {
        let m = ExoModel::from_toml_str(
            r#"
            rotor_apparent_inertia = 0.0
            [friction]
            c0 = [1.0, 1.0, 1.0, 1.0]
            c1 = [2.0, 2.0, 2.0, 2.0]
            "#,
        )
        .unwrap();
        assert_eq!(m.rotor_apparent_inertia, 0.0);
        assert_eq!(m.friction.c0, [1.0; 4]);
        assert_eq!(m.backpack, ExoModel::nominal().backpack);
    }

    #[test]
    fn invalid_com_offset_rejected() {
        let bad = ExoModel::from_toml_str(
            r#"
            [backpack]
            mass = 1.0
            com_inertia = 0.1
            com_offset = 2.0
            length = 0.5
            "#,
        );
        assert!(bad.is_err());
    }
}
