//! Interaction-torque estimation from joint torque measurements.
//!
//! The user's effect on the exoskeleton appears as a generalized torque
//! `tau_int` in the equations of motion. During stance the
//! acceleration-dependent inertial terms are deliberately neglected (the
//! apparent rotor inertia does not load the link-side torque sensors, and
//! walking accelerations are small), so single stance reduces to
//!
//! ```text
//!   tau_int = -S^T tau_joint + b_i + g_i,    i in {ls, rs}
//! ```
//!
//! In double stance the left- and right-stance forms are stacked with the
//! unknown ankle contact forces and closed with two GRF ratio constraints
//! (vertical share alpha, direction gamma), giving an overdetermined linear
//! system in nine unknowns.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{ExoError, Result};
use crate::model::{
    ankle_jacobian, dynamics_terms, ExoModel, GenCoords, LegCoords, Side, SupportModel,
};

/// Which estimator produced an interaction-torque vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Whole-body, 5-dim (backpack + four joints).
    WholeBody,
    /// Simplified per-leg, 2-dim (hip, knee).
    SimplifiedLeg,
}

/// Estimated interaction torque, tagged with its estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTorque {
    pub kind: EstimatorKind,
    pub values: DVector<f64>,
}

impl InteractionTorque {
    fn whole_body(values: DVector<f64>) -> Self {
        Self {
            kind: EstimatorKind::WholeBody,
            values,
        }
    }
}

/// Solution of the double-stance estimation system.
#[derive(Debug, Clone)]
pub struct DsSolution {
    /// Interaction torques, 5-dim, N m.
    pub tau_int: DVector<f64>,
    /// Estimated left ankle contact force (Fx, Fy), N.
    pub f_left: Vector2<f64>,
    /// Estimated right ankle contact force (Fx, Fy), N.
    pub f_right: Vector2<f64>,
    /// Two-norm of the least-squares residual K xi - m.
    pub residual_norm: f64,
    /// Set when a vertical force came out below -1 N (the solve does not
    /// enforce unilateral contact; large violations indicate bad inputs).
    pub negative_vertical_force: bool,
}

fn check_tau_joint(tau_joint: &[f64; 4]) -> Result<()> {
    if !tau_joint.iter().all(|v| v.is_finite()) {
        return Err(ExoError::NonFinite("joint torques"));
    }
    Ok(())
}

/// `-S^T tau_joint` for the stance parameterization: the backpack row is
/// unactuated.
fn minus_s_transpose(tau_joint: &[f64; 4]) -> DVector<f64> {
    DVector::from_row_slice(&[
        0.0,
        -tau_joint[0],
        -tau_joint[1],
        -tau_joint[2],
        -tau_joint[3],
    ])
}

/// Single-stance interaction torque: gravity and Coriolis forces minus the
/// joint torque readings. 5-dim; the backpack row is the unactuated trunk
/// coordinate.
pub fn estimate_single_stance(
    model: &ExoModel,
    coords: &GenCoords,
    tau_joint: &[f64; 4],
    side: Side,
) -> Result<InteractionTorque> {
    check_tau_joint(tau_joint)?;
    let support = match side {
        Side::Left => SupportModel::LeftStance,
        Side::Right => SupportModel::RightStance,
    };
    let terms = dynamics_terms(model, coords, &support)?;
    let tau = minus_s_transpose(tau_joint) + terms.b + terms.g;
    Ok(InteractionTorque::whole_body(tau))
}

/// Build the double-stance estimation system `K xi = m` with
/// `xi = [F_rx, F_ry, F_lx, F_ly, tau_int^T]^T`.
///
/// Rows 0-4: left-stance EOM with the right-ankle wrench; rows 5-9:
/// right-stance EOM with the left-ankle wrench; row 10: vertical-force
/// ratio `(1 - alpha) F_ly - alpha F_ry = 0` (the division-free equivalent
/// of `alpha = F_ly / (F_ly + F_ry)`); row 11: direction constraint
/// `F_lx - gamma F_ly = 0`.
pub fn build_ds_system(
    model: &ExoModel,
    coords: &GenCoords,
    tau_joint: &[f64; 4],
    alpha: f64,
    gamma: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_tau_joint(tau_joint)?;
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(ExoError::InvalidAlpha {
            alpha,
            range: "(0, 1) - use the single-stance estimator at the boundaries",
        });
    }
    if !gamma.is_finite() {
        return Err(ExoError::NonFinite("gamma"));
    }
    let ls = dynamics_terms(model, coords, &SupportModel::LeftStance)?;
    let rs = dynamics_terms(model, coords, &SupportModel::RightStance)?;
    let j_r = ankle_jacobian(model, coords, Side::Right, &SupportModel::LeftStance)?;
    let j_l = ankle_jacobian(model, coords, Side::Left, &SupportModel::RightStance)?;

    let mut k = DMatrix::zeros(12, 9);
    let mut m = DVector::zeros(12);

    // Rows 0-4: J_r^T F_r + tau_int = -S^T tau_joint + b_ls + g_ls.
    k.view_mut((0, 0), (5, 2)).copy_from(&j_r.transpose());
    k.view_mut((0, 4), (5, 5))
        .copy_from(&DMatrix::identity(5, 5));
    m.rows_mut(0, 5)
        .copy_from(&(minus_s_transpose(tau_joint) + &ls.b + &ls.g));

    // Rows 5-9: J_l^T F_l + tau_int = -S^T tau_joint + b_rs + g_rs.
    k.view_mut((5, 2), (5, 2)).copy_from(&j_l.transpose());
    k.view_mut((5, 4), (5, 5))
        .copy_from(&DMatrix::identity(5, 5));
    m.rows_mut(5, 5)
        .copy_from(&(minus_s_transpose(tau_joint) + &rs.b + &rs.g));

    // Row 10: (1 - alpha) F_ly - alpha F_ry = 0.
    k[(10, 1)] = -alpha;
    k[(10, 3)] = 1.0 - alpha;

    // Row 11: F_lx - gamma F_ly = 0.
    k[(11, 2)] = 1.0;
    k[(11, 3)] = -gamma;

    Ok((k, m))
}

/// Least-squares solve of the double-stance system with column scaling
/// (the unknowns mix N and N m units).
pub fn estimate_double_stance(
    model: &ExoModel,
    coords: &GenCoords,
    tau_joint: &[f64; 4],
    alpha: f64,
    gamma: f64,
) -> Result<DsSolution> {
    let (k, m) = build_ds_system(model, coords, tau_joint, alpha, gamma)?;

    // Scale each column to unit norm before the orthogonal solve.
    let mut scales = [0.0f64; 9];
    let mut ks = k.clone();
    for c in 0..9 {
        let norm = k.column(c).norm();
        scales[c] = if norm > 1e-12 { norm } else { 1.0 };
        let mut col = ks.column_mut(c);
        col /= scales[c];
    }
    let svd = ks.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(ExoError::DegenerateConfiguration(format!(
            "double-stance system rank-deficient (sigma_min/sigma_max = {:.3e})",
            smin / smax
        )));
    }
    let mut xi = svd
        .solve(&m, 1e-12)
        .map_err(|e| ExoError::DegenerateConfiguration(e.to_string()))?;
    for c in 0..9 {
        xi[c] /= scales[c];
    }
    let residual_norm = (&k * &xi - &m).norm();

    let f_right = Vector2::new(xi[0], xi[1]);
    let f_left = Vector2::new(xi[2], xi[3]);
    let tau_int = xi.rows(4, 5).into_owned();
    Ok(DsSolution {
        negative_vertical_force: f_left.y < -1.0 || f_right.y < -1.0,
        tau_int,
        f_left,
        f_right,
        residual_norm,
    })
}

/// Leg phase for the simplified estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegPhase {
    Stance,
    Swing,
}

/// Simplified per-leg interaction torque `tau_int = tau_joint + b_i + g_i`
/// on the independent double-pendulum model.
///
/// Note the torque sign convention: this estimator follows the per-leg
/// model's published form, in which the measured joint torque enters with
/// the opposite sign of the whole-body estimator's `-S^T tau_joint`. A
/// caller holding whole-body-convention measurements must negate them (see
/// `control::simplified_step`).
pub fn estimate_simplified(
    model: &ExoModel,
    leg: &LegCoords,
    tau_joint_leg: &[f64; 2],
    phase: LegPhase,
) -> Result<InteractionTorque> {
    if !tau_joint_leg.iter().all(|v| v.is_finite()) {
        return Err(ExoError::NonFinite("leg joint torques"));
    }
    let support = match phase {
        LegPhase::Stance => SupportModel::SimplifiedStance {
            side: leg.side,
            trunk_pitch: leg.trunk_pitch,
        },
        LegPhase::Swing => SupportModel::SimplifiedSwing {
            side: leg.side,
            trunk_pitch: leg.trunk_pitch,
        },
    };
    let terms = dynamics_terms(model, &leg.coords, &support)?;
    let tau = DVector::from_row_slice(tau_joint_leg) + terms.b + terms.g;
    Ok(InteractionTorque {
        kind: EstimatorKind::SimplifiedLeg,
        values: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{com_kinematics, GRAVITY};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_stance(rng: &mut ChaCha8Rng) -> GenCoords {
        let mut q = [0.0; 5];
        for v in q.iter_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
        q[2] = -rng.random_range(0.2..1.0);
        q[4] = -rng.random_range(0.2..1.0);
        GenCoords::stance(q, [0.0; 5]).unwrap()
    }

    /// Build a statically consistent double-stance scene: GRFs that balance
    /// the total weight, a horizontal force pair, and the interaction
    /// torque / joint torques that satisfy both stance EOM forms exactly.
    fn consistent_ds_statics(
        model: &ExoModel,
        coords: &GenCoords,
        alpha: f64,
        gamma: f64,
        tau_int_joints: &[f64; 4],
    ) -> (DVector<f64>, [f64; 4], Vector2<f64>, Vector2<f64>) {
        let w = model.total_weight();
        let f_ly = alpha * w;
        let f_ry = (1.0 - alpha) * w;
        let f_lx = gamma * f_ly;
        let f_rx = -f_lx;
        let f_l = Vector2::new(f_lx, f_ly);
        let f_r = Vector2::new(f_rx, f_ry);

        let ls = dynamics_terms(model, coords, &SupportModel::LeftStance).unwrap();
        let j_r = ankle_jacobian(model, coords, Side::Right, &SupportModel::LeftStance).unwrap();
        // Left-stance static EOM with the right-ankle wrench:
        //   g_ls = S^T tau_joint + tau_int + J_r^T F_r.
        let rhs = &ls.g - j_r.transpose() * f_r;
        // The backpack row fixes tau_int[0]; the joint rows then fix
        // tau_joint given the chosen joint interaction torques.
        let tau_int0 = rhs[0];
        let mut tau_joint = [0.0; 4];
        for j in 0..4 {
            tau_joint[j] = rhs[1 + j] - tau_int_joints[j];
        }
        let tau_int = DVector::from_row_slice(&[
            tau_int0,
            tau_int_joints[0],
            tau_int_joints[1],
            tau_int_joints[2],
            tau_int_joints[3],
        ]);
        (tau_int, tau_joint, f_l, f_r)
    }

    #[test]
    fn single_stance_statics_decomposition() {
        // With gravity-compensating joint torques and zero velocity, the
        // estimate is the gravity vector's backpack row and zero at joints.
        let model = ExoModel::nominal();
        let coords = GenCoords::stance([0.1, 0.4, -0.5, -0.2, -0.4], [0.0; 5]).unwrap();
        let terms = dynamics_terms(&model, &coords, &SupportModel::LeftStance).unwrap();
        let tau_joint = [terms.g[1], terms.g[2], terms.g[3], terms.g[4]];
        let est = estimate_single_stance(&model, &coords, &tau_joint, Side::Left).unwrap();
        assert_relative_eq!(est.values[0], terms.g[0], epsilon = 1e-12);
        for j in 1..5 {
            assert_relative_eq!(est.values[j], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_stance_velocity_adds_coriolis_exactly() {
        let model = ExoModel::nominal();
        let coords =
            GenCoords::stance([0.1, 0.4, -0.5, -0.2, -0.4], [0.3, -0.8, 0.5, 0.9, -0.2]).unwrap();
        let terms = dynamics_terms(&model, &coords, &SupportModel::LeftStance).unwrap();
        let tau_joint = [1.0, -2.0, 3.0, -4.0];
        let est = estimate_single_stance(&model, &coords, &tau_joint, Side::Left).unwrap();
        let static_part = minus_s_transpose(&tau_joint) + &terms.g;
        let diff = &est.values - static_part;
        for j in 0..5 {
            assert_relative_eq!(diff[j], terms.b[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn ds_system_shape_and_rank() {
        let model = ExoModel::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let coords = random_stance(&mut rng);
            let (k, m) =
                build_ds_system(&model, &coords, &[1.0, 2.0, 3.0, 4.0], 0.4, 0.05).unwrap();
            assert_eq!(k.shape(), (12, 9));
            assert_eq!(m.len(), 12);
            let rank = k.svd(false, false).rank(1e-9);
            assert_eq!(rank, 9);
        }
    }

    #[test]
    fn ds_system_boundary_rows() {
        let model = ExoModel::nominal();
        let coords = GenCoords::stance([0.0, 0.3, -0.5, -0.1, -0.4], [0.0; 5]).unwrap();
        // alpha = 0.5: ratio row reduces to F_ly = F_ry.
        let (k, _) = build_ds_system(&model, &coords, &[0.0; 4], 0.5, 0.0).unwrap();
        assert_relative_eq!(k[(10, 3)], 0.5);
        assert_relative_eq!(k[(10, 1)], -0.5);
        // gamma = 0: direction row reduces to F_lx = 0.
        assert_relative_eq!(k[(11, 2)], 1.0);
        assert_relative_eq!(k[(11, 3)], 0.0);
        // Boundary alphas are rejected.
        assert!(build_ds_system(&model, &coords, &[0.0; 4], 0.0, 0.0).is_err());
        assert!(build_ds_system(&model, &coords, &[0.0; 4], 1.0, 0.0).is_err());
    }

    #[test]
    fn ds_statics_round_trip() {
        let model = ExoModel::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let coords = random_stance(&mut rng);
            let alpha = rng.random_range(0.1..0.9);
            let gamma = rng.random_range(-0.1..0.1);
            let tau_int_joints = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ];
            let (tau_int, tau_joint, f_l, f_r) =
                consistent_ds_statics(&model, &coords, alpha, gamma, &tau_int_joints);
            let sol = estimate_double_stance(&model, &coords, &tau_joint, alpha, gamma).unwrap();
            for j in 0..5 {
                assert_relative_eq!(sol.tau_int[j], tau_int[j], epsilon = 1e-6);
            }
            assert_relative_eq!(sol.f_left.x, f_l.x, epsilon = 1e-6);
            assert_relative_eq!(sol.f_left.y, f_l.y, epsilon = 1e-6);
            assert_relative_eq!(sol.f_right.x, f_r.x, epsilon = 1e-6);
            assert_relative_eq!(sol.f_right.y, f_r.y, epsilon = 1e-6);
            assert!(sol.residual_norm <= 1e-7);
            // The ratio row is satisfied exactly relative to the force scale.
            let ratio = ((1.0 - alpha) * sol.f_left.y - alpha * sol.f_right.y).abs();
            assert!(ratio <= 1e-8 * (sol.f_left.y + sol.f_right.y));
        }
    }

    #[test]
    fn ds_alpha_perturbation_grows_continuously() {
        let model = ExoModel::nominal();
        let coords = GenCoords::stance([0.05, 0.35, -0.55, -0.15, -0.45], [0.0; 5]).unwrap();
        let alpha = 0.5;
        let (_, tau_joint, _, _) =
            consistent_ds_statics(&model, &coords, alpha, 0.0, &[1.0, -2.0, 0.5, 1.5]);
        let exact = estimate_double_stance(&model, &coords, &tau_joint, alpha, 0.0).unwrap();
        let mut last = 0.0;
        for (i, da) in [0.0, 0.01, 0.03, 0.05].iter().enumerate() {
            let sol =
                estimate_double_stance(&model, &coords, &tau_joint, alpha + da, 0.0).unwrap();
            let err = (&sol.tau_int - &exact.tau_int).norm();
            if i == 0 {
                assert!(err <= 1e-9);
            } else {
                assert!(err > last);
            }
            last = err;
        }
    }

    #[test]
    fn ds_continuity_toward_single_stance() {
        // As alpha -> 1 with single-stance-consistent data, the double-stance
        // estimate approaches the single-stance estimate.
        let model = ExoModel::nominal();
        let coords = GenCoords::stance([0.02, 0.3, -0.5, -0.25, -0.35], [0.0; 5]).unwrap();
        let tau_joint = [3.0, -1.0, 2.0, 0.5];
        let ss = estimate_single_stance(&model, &coords, &tau_joint, Side::Left).unwrap();
        let ds = estimate_double_stance(&model, &coords, &tau_joint, 1.0 - 1e-6, 0.0).unwrap();
        for j in 0..5 {
            assert!((ds.tau_int[j] - ss.values[j]).abs() <= 1e-3);
        }
    }

    #[test]
    fn simplified_swing_matches_whole_body_rows_static() {
        // Appendix-style equivalence: in a static configuration the
        // simplified swing estimate equals the whole-body estimate's
        // swing-leg rows once the torque sign conventions are aligned.
        let model = ExoModel::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let coords = random_stance(&mut rng);
            let tau_joint = [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ];
            let wb = estimate_single_stance(&model, &coords, &tau_joint, Side::Left).unwrap();
            let leg = coords.leg_slice(Side::Right).unwrap();
            let simp = estimate_simplified(
                &model,
                &leg,
                &[-tau_joint[2], -tau_joint[3]],
                LegPhase::Swing,
            )
            .unwrap();
            assert_relative_eq!(simp.values[0], wb.values[3], epsilon = 1e-9);
            assert_relative_eq!(simp.values[1], wb.values[4], epsilon = 1e-9);
        }
    }

    #[test]
    fn simplified_stance_gap_is_backpack_plus_swing_weight() {
        // The stance-leg rows differ from the simplified estimate by the
        // gravity torque of the bodies the simplified model ignores
        // (backpack and swing leg), computed here from the whole-body CoM
        // Jacobians.
        let model = ExoModel::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let coords = random_stance(&mut rng);
            let tau_joint = [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ];
            let wb = estimate_single_stance(&model, &coords, &tau_joint, Side::Left).unwrap();
            let leg = coords.leg_slice(Side::Left).unwrap();
            let simp = estimate_simplified(
                &model,
                &leg,
                &[-tau_joint[0], -tau_joint[1]],
                LegPhase::Stance,
            )
            .unwrap();
            let kin = com_kinematics(&model, &coords, &SupportModel::LeftStance).unwrap();
            // Ignored bodies: backpack (0), swing thigh (3), swing shank (4);
            // stance-leg coordinate rows are (1, 2).
            for (row, out) in [(1usize, 0usize), (2, 1)] {
                let mut gap = 0.0;
                for n in [0usize, 3, 4] {
                    gap += kin.j_trans[n][(1, row)] * kin.masses[n] * GRAVITY;
                }
                assert_relative_eq!(wb.values[row] - simp.values[out], gap, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn simplified_zero_case() {
        // Swing leg hanging straight down with zero torque and velocity:
        // the gravity vector vanishes and so does the estimate.
        let model = ExoModel::nominal();
        let leg = LegCoords {
            side: Side::Left,
            trunk_pitch: 0.0,
            coords: GenCoords::leg([0.0, 0.0], [0.0, 0.0]).unwrap(),
        };
        let est = estimate_simplified(&model, &leg, &[0.0, 0.0], LegPhase::Swing).unwrap();
        assert_relative_eq!(est.values[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(est.values[1], 0.0, epsilon = 1e-14);
    }
}
