//! Interaction-torque controllers.
//!
//! The whole-body controller turns the interaction-torque error into a
//! desired generalized acceleration through a diagonal virtual mass,
//! then solves a constrained QP for the acceleration/motor-torque pair that
//! best tracks it subject to the equation of motion of the current gait
//! state and the motor torque, power and velocity limits.
//!
//! The simplified baseline runs each leg as an independent double pendulum
//! with a pure feedforward inverse-dynamics law and no limit handling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ExoError, Result};
use crate::estimation::{
    estimate_double_stance, estimate_simplified, estimate_single_stance, LegPhase,
};
use crate::friction::friction_torque;
use crate::gait::{self, GaitContext, GaitState, Grf, LoadThreshold};
use crate::model::{stance_terms_for, ExoModel, ExoState, Side, SupportModel};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus, WarmStart};

/// Velocity floor in the power constraint denominator: keeps the bound
/// finite (and inactive) at rest, rad/s.
pub const EPS_VEL: f64 = 1e-3;

/// Default torque-measurement conditioning cutoff, Hz. Gait content stays
/// below ~4 Hz; the cutoff mainly sets how hard the tick-rate loop between
/// commanded torque and measured link torque is attenuated.
pub const DEFAULT_TAU_FILTER_HZ: f64 = 10.0;

/// One pole of first-order conditioning on a 4-vector measurement.
fn condition_measurement(
    state: &mut Option<[f64; 4]>,
    raw: &[f64; 4],
    cutoff_hz: Option<f64>,
    dt: f64,
) -> [f64; 4] {
    match cutoff_hz {
        None => *raw,
        Some(fc) => {
            let a = 1.0 - (-2.0 * std::f64::consts::PI * fc * dt).exp();
            let prev = state.unwrap_or(*raw);
            let mut out = [0.0; 4];
            for j in 0..4 {
                out[j] = prev[j] + a * (raw[j] - prev[j]);
            }
            *state = Some(out);
            out
        }
    }
}

/// Diagonal virtual inertia per generalized coordinate, kg m^2, with
/// separate single- and double-stance sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualMass {
    pub single: [f64; 5],
    pub double: [f64; 5],
}

impl Default for VirtualMass {
    /// Tuned values: backpack 2 / 3.5, thighs 0.7 / 1.2, shanks 0.5 / 0.87
    /// (single / double stance).
    fn default() -> Self {
        Self {
            single: [2.0, 0.7, 0.5, 0.7, 0.5],
            double: [3.5, 1.2, 0.87, 1.2, 0.87],
        }
    }
}

impl VirtualMass {
    pub fn for_state(&self, state: GaitState) -> &[f64; 5] {
        match state {
            GaitState::DoubleStance => &self.double,
            _ => &self.single,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .single
            .iter()
            .chain(self.double.iter())
            .any(|m| !m.is_finite() || *m <= 0.0)
        {
            return Err(ExoError::InvalidArgument(
                "virtual masses must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Desired generalized acceleration of the virtual-mass admittance law:
/// element-wise `(tau_int - tau_int_des) / m_virt` with the set selected by
/// the gait state.
pub fn virtual_mass_accel(
    tau_int: &DVector<f64>,
    tau_int_des: &DVector<f64>,
    m_virt: &VirtualMass,
    state: GaitState,
) -> Result<DVector<f64>> {
    m_virt.validate()?;
    if tau_int.len() != 5 || tau_int_des.len() != 5 {
        return Err(ExoError::DimensionMismatch {
            what: "virtual mass inputs",
            expected: 5,
            got: tau_int.len().min(tau_int_des.len()),
        });
    }
    let m = m_virt.for_state(state);
    Ok(DVector::from_fn(5, |i, _| {
        (tau_int[i] - tau_int_des[i]) / m[i]
    }))
}

/// Spring-damper haptic parameters per joint, with stance/swing gain sets.
/// The backpack coordinate is never rendered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HapticParams {
    /// (stiffness N m/rad, damping N m s/rad) for a hip in stance / swing.
    pub hip_stance: (f64, f64),
    pub hip_swing: (f64, f64),
    pub knee_stance: (f64, f64),
    pub knee_swing: (f64, f64),
    /// Neutral angles, rad (hip, knee).
    pub neutral: (f64, f64),
    /// First-order low-pass cutoff on the reference, Hz.
    pub cutoff_hz: f64,
}

impl Default for HapticParams {
    /// Rendering gains: hips 50/10 (stance) and 30/6 (swing), knees 30/6
    /// and 25/5, neutral angles +25 deg hip / -45 deg knee, 5 Hz filter.
    fn default() -> Self {
        Self {
            hip_stance: (50.0, 10.0),
            hip_swing: (30.0, 6.0),
            knee_stance: (30.0, 6.0),
            knee_swing: (25.0, 5.0),
            neutral: (25.0_f64.to_radians(), -45.0_f64.to_radians()),
            cutoff_hz: 5.0,
        }
    }
}

/// Stateful generator of the desired interaction torque
/// `tau* = K (q - q*) + C qdot`, low-pass filtered with a causal first-order
/// stage so stance/swing gain switches do not command torque jumps.
#[derive(Debug, Clone)]
pub struct HapticReference {
    pub params: HapticParams,
    state: Option<DVector<f64>>,
}

impl HapticReference {
    pub fn new(params: HapticParams) -> Self {
        Self {
            params,
            state: None,
        }
    }

    /// Raw (unfiltered) spring-damper torque for the current posture.
    pub fn raw(&self, coords: &crate::model::GenCoords, phases: [LegPhase; 2]) -> DVector<f64> {
        let p = &self.params;
        let mut tau = DVector::zeros(5);
        for (leg, phase) in [(Side::Left, phases[0]), (Side::Right, phases[1])] {
            let (h, k) = leg.stance_indices();
            let (hip_gain, knee_gain) = match phase {
                LegPhase::Stance => (p.hip_stance, p.knee_stance),
                LegPhase::Swing => (p.hip_swing, p.knee_swing),
            };
            tau[h] = hip_gain.0 * (coords.q[h] - p.neutral.0) + hip_gain.1 * coords.qdot[h];
            tau[k] = knee_gain.0 * (coords.q[k] - p.neutral.1) + knee_gain.1 * coords.qdot[k];
        }
        tau
    }

    /// Advance the filter by one control period and return the filtered
    /// desired interaction torque.
    pub fn update(
        &mut self,
        coords: &crate::model::GenCoords,
        phases: [LegPhase; 2],
        dt: f64,
    ) -> DVector<f64> {
        let raw = self.raw(coords, phases);
        let a = 1.0 - (-2.0 * std::f64::consts::PI * self.params.cutoff_hz * dt).exp();
        let out = match &self.state {
            None => raw,
            Some(prev) => prev + (raw - prev) * a,
        };
        self.state = Some(out.clone());
        out
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Motor torque, power and velocity limits plus the control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    /// Peak motor torque, N m.
    pub tau_max: f64,
    /// Peak motor power, W.
    pub p_max: f64,
    /// Joint velocity limit, rad/s.
    pub qdot_max: f64,
    /// Control period, s.
    pub dt: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            tau_max: 80.0,
            p_max: 100.0,
            qdot_max: 3.0,
            dt: 0.003,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if [self.tau_max, self.p_max, self.qdot_max, self.dt]
            .iter()
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err(ExoError::InvalidArgument("limits must be positive".into()));
        }
        Ok(())
    }
}

/// Assemble the acceleration-tracking QP for the current gait state over
/// `x = [qddot; tau_motor] in R^9`.
///
/// * objective: `||[I 0] x - qddot_star||`
/// * equality: `M qddot - S^T tau = -b - g + tau_int - S^T fric(qdot)`
///   (the commanded torque includes friction compensation, so the friction
///   loss between command and link appears on the right-hand side)
/// * inequalities (stacked in this order): torque box, power box
///   `|tau_j| <= P_max / max(|qdot_j|, EPS_VEL)`, and the velocity-derived
///   acceleration box `(qdot_max -/+ qdot_j) / dt`.
pub fn assemble_tracking_qp(
    model: &ExoModel,
    state: &ExoState,
    support: &SupportModel,
    tau_int: &DVector<f64>,
    qddot_star: &DVector<f64>,
    limits: &Limits,
) -> Result<QpProblem> {
    limits.validate()?;
    if matches!(support, SupportModel::Flight) {
        return Err(ExoError::UnsupportedGaitState("flight"));
    }
    let coords = &state.coords;
    support.check_coords(coords)?;
    if tau_int.len() != 5 || qddot_star.len() != 5 {
        return Err(ExoError::DimensionMismatch {
            what: "tracking QP inputs",
            expected: 5,
            got: tau_int.len().min(qddot_star.len()),
        });
    }
    let terms = stance_terms_for(model, coords, support)?;
    let qd = [coords.qdot[1], coords.qdot[2], coords.qdot[3], coords.qdot[4]];
    let fric = friction_torque(&model.friction, &qd);

    let mut c = DMatrix::zeros(5, 9);
    c.view_mut((0, 0), (5, 5))
        .copy_from(&DMatrix::identity(5, 5));
    let d = qddot_star.clone();

    let mut a = DMatrix::zeros(5, 9);
    a.view_mut((0, 0), (5, 5)).copy_from(&terms.m);
    for j in 0..4 {
        a[(1 + j, 5 + j)] = -1.0;
    }
    let mut b = -&terms.b - &terms.g + tau_int;
    for j in 0..4 {
        b[1 + j] -= fric[j];
    }

    let mut dmat = DMatrix::zeros(24, 9);
    let mut f = DVector::zeros(24);
    for j in 0..4 {
        // Torque box.
        dmat[(j, 5 + j)] = 1.0;
        f[j] = limits.tau_max;
        dmat[(4 + j, 5 + j)] = -1.0;
        f[4 + j] = limits.tau_max;
        // Power box.
        let speed = qd[j].abs().max(EPS_VEL);
        dmat[(8 + j, 5 + j)] = 1.0;
        f[8 + j] = limits.p_max / speed;
        dmat[(12 + j, 5 + j)] = -1.0;
        f[12 + j] = limits.p_max / speed;
        // Velocity-derived acceleration box on the actuated coordinates.
        dmat[(16 + j, 1 + j)] = 1.0;
        f[16 + j] = (limits.qdot_max - qd[j]) / limits.dt;
        dmat[(20 + j, 1 + j)] = -1.0;
        f[20 + j] = (limits.qdot_max + qd[j]) / limits.dt;
    }

    Ok(QpProblem::least_squares(c, d)
        .with_eq(a, b)
        .with_ineq(dmat, f))
}

/// Per-step diagnostics of the whole-body controller.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub gait: GaitContext,
    /// Interaction-torque estimate used by the admittance law, 5-dim.
    pub tau_int_est: DVector<f64>,
    pub qddot_star: DVector<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub qp_kkt_max: f64,
    /// Double-stance estimator residual when that path ran.
    pub ds_residual: Option<f64>,
    /// Command came from the infeasibility fallback rather than the QP.
    pub fallback: bool,
}

/// Whole-body closed-loop interaction-torque controller.
///
/// Owns the gait context, the QP warm start and the safety fallback state;
/// intended to live on a single control thread.
#[derive(Debug, Clone)]
pub struct WholeBodyController {
    pub model: ExoModel,
    pub limits: Limits,
    pub m_virt: VirtualMass,
    pub threshold: LoadThreshold,
    pub solver: QpSolver,
    /// First-order conditioning cutoff on the joint-torque measurements,
    /// Hz. Strain-gauge signals are filtered before use; this also breaks
    /// the tick-rate algebraic loop between commanded torque and measured
    /// link torque. None disables.
    pub tau_filter_hz: Option<f64>,
    gait: GaitContext,
    tau_filt: Option<[f64; 4]>,
    warm: Option<WarmStart>,
    last_command: [f64; 4],
    consecutive_failures: u32,
}

impl WholeBodyController {
    pub fn new(model: ExoModel, initial_state: GaitState, start_time: f64) -> Self {
        Self {
            model,
            limits: Limits::default(),
            m_virt: VirtualMass::default(),
            threshold: LoadThreshold::default(),
            solver: QpSolver::default(),
            tau_filter_hz: Some(DEFAULT_TAU_FILTER_HZ),
            gait: GaitContext::new(initial_state, start_time),
            tau_filt: None,
            warm: None,
            last_command: [0.0; 4],
            consecutive_failures: 0,
        }
    }

    pub fn gait(&self) -> &GaitContext {
        &self.gait
    }

    /// One control step: update the gait context from the GRFs, estimate the
    /// interaction torque, run the virtual-mass law, and solve the tracking
    /// QP. On an unsolved QP the previous command is held, and after three
    /// consecutive failures the command decays to zero.
    pub fn step(
        &mut self,
        state: &ExoState,
        grf: &Grf,
        tau_joint: &[f64; 4],
        tau_int_des: &DVector<f64>,
    ) -> Result<([f64; 4], StepDiagnostics)> {
        self.gait = gait::update(&self.gait, grf, self.threshold, state.t)?;
        if self.gait.state == GaitState::Flight {
            return Err(ExoError::UnsupportedGaitState("flight"));
        }
        let tau_joint =
            &condition_measurement(&mut self.tau_filt, tau_joint, self.tau_filter_hz, self.limits.dt);

        // Estimator branch: the double-stance path needs alpha strictly
        // inside (0, 1); at the boundary the single-stance form applies.
        let alpha = self.gait.alpha;
        let mut ds_residual = None;
        let (tau_int_est, support) = match self.gait.state {
            GaitState::LeftStance => (
                estimate_single_stance(&self.model, &state.coords, tau_joint, Side::Left)?.values,
                SupportModel::LeftStance,
            ),
            GaitState::RightStance => (
                estimate_single_stance(&self.model, &state.coords, tau_joint, Side::Right)?.values,
                SupportModel::RightStance,
            ),
            GaitState::DoubleStance => {
                if alpha > 0.0 && alpha < 1.0 {
                    let sol = estimate_double_stance(
                        &self.model,
                        &state.coords,
                        tau_joint,
                        alpha,
                        self.gait.gamma,
                    )?;
                    ds_residual = Some(sol.residual_norm);
                    (sol.tau_int, SupportModel::DoubleStance { alpha })
                } else {
                    let side = if alpha >= 0.5 { Side::Left } else { Side::Right };
                    (
                        estimate_single_stance(&self.model, &state.coords, tau_joint, side)?.values,
                        SupportModel::DoubleStance { alpha },
                    )
                }
            }
            GaitState::Flight => unreachable!(),
        };

        let qddot_star =
            virtual_mass_accel(&tau_int_est, tau_int_des, &self.m_virt, self.gait.state)?;
        let problem = assemble_tracking_qp(
            &self.model,
            state,
            &support,
            &tau_int_est,
            &qddot_star,
            &self.limits,
        )?;
        let sol = self.solver.solve(&problem, self.warm.as_ref())?;

        let (command, fallback) = if sol.status == QpStatus::Optimal {
            self.warm = Some(WarmStart::from(&sol));
            self.consecutive_failures = 0;
            ([sol.x[5], sol.x[6], sol.x[7], sol.x[8]], false)
        } else {
            self.consecutive_failures += 1;
            if self.consecutive_failures >= 3 {
                ([0.0; 4], true)
            } else {
                (self.last_command, true)
            }
        };
        self.last_command = command;

        Ok((
            command,
            StepDiagnostics {
                gait: self.gait,
                tau_int_est,
                qddot_star,
                qp_status: sol.status,
                qp_iterations: sol.iterations,
                qp_kkt_max: sol.kkt.max(),
                ds_residual,
                fallback,
            },
        ))
    }

    /// Solve the same QP cold (no warm start); used by regression tests to
    /// compare warm and cold iteration counts.
    pub fn last_warm_start(&self) -> Option<&WarmStart> {
        self.warm.as_ref()
    }
}

/// Per-leg phases implied by a gait state (flight counts as double swing).
pub fn leg_phases(state: GaitState) -> [LegPhase; 2] {
    [
        if state.left_loaded() {
            LegPhase::Stance
        } else {
            LegPhase::Swing
        },
        if state.right_loaded() {
            LegPhase::Stance
        } else {
            LegPhase::Swing
        },
    ]
}

/// Simplified per-leg feedforward controller: independent double pendulums,
/// no backpack, no optimization and no limit handling. Uses the
/// single-stance thigh/shank virtual masses for both phases.
#[derive(Debug, Clone)]
pub struct SimplifiedController {
    pub model: ExoModel,
    pub m_virt: VirtualMass,
    pub threshold: LoadThreshold,
    /// Measurement conditioning cutoff, Hz (as in the whole-body
    /// controller). None disables.
    pub tau_filter_hz: Option<f64>,
    /// Control period, s.
    pub dt: f64,
    gait: GaitContext,
    tau_filt: Option<[f64; 4]>,
}

/// Diagnostics of one simplified-controller step.
#[derive(Debug, Clone)]
pub struct SimplifiedDiagnostics {
    pub gait: GaitContext,
    /// Per-leg estimates in the whole-body sign convention, rows
    /// [L hip, L knee, R hip, R knee].
    pub tau_int_est: [f64; 4],
}

impl SimplifiedController {
    pub fn new(model: ExoModel, initial_state: GaitState, start_time: f64) -> Self {
        Self {
            model,
            m_virt: VirtualMass::default(),
            threshold: LoadThreshold::default(),
            tau_filter_hz: Some(DEFAULT_TAU_FILTER_HZ),
            dt: 0.003,
            gait: GaitContext::new(initial_state, start_time),
            tau_filt: None,
        }
    }

    pub fn gait(&self) -> &GaitContext {
        &self.gait
    }

    /// One control step. `tau_joint` and the returned command follow the
    /// whole-body sign convention; the per-leg estimator's flipped torque
    /// convention is handled internally.
    pub fn step(
        &mut self,
        state: &ExoState,
        grf: &Grf,
        tau_joint: &[f64; 4],
        tau_int_des: &DVector<f64>,
    ) -> Result<([f64; 4], SimplifiedDiagnostics)> {
        self.gait = gait::update(&self.gait, grf, self.threshold, state.t)?;
        let tau_joint =
            &condition_measurement(&mut self.tau_filt, tau_joint, self.tau_filter_hz, self.dt);
        let phases = leg_phases(self.gait.state);
        let mut command = [0.0; 4];
        let mut est_out = [0.0; 4];
        for (idx, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let leg = state.coords.leg_slice(side)?;
            let (h, k) = side.stance_indices();
            let phase = phases[idx];
            let est = estimate_simplified(
                &self.model,
                &leg,
                &[-tau_joint[2 * idx], -tau_joint[2 * idx + 1]],
                phase,
            )?
            .values;
            est_out[2 * idx] = est[0];
            est_out[2 * idx + 1] = est[1];

            // Virtual-mass law on the leg's thigh/shank coordinates.
            let m = &self.m_virt.single;
            let qddot_star = [
                (est[0] - tau_int_des[h]) / m[1],
                (est[1] - tau_int_des[k]) / m[2],
            ];

            // Feedforward inverse dynamics of the two-link model.
            let support = match phase {
                LegPhase::Stance => SupportModel::SimplifiedStance {
                    side,
                    trunk_pitch: leg.trunk_pitch,
                },
                LegPhase::Swing => SupportModel::SimplifiedSwing {
                    side,
                    trunk_pitch: leg.trunk_pitch,
                },
            };
            let terms = crate::model::dynamics_terms(&self.model, &leg.coords, &support)?;
            let qdd = DVector::from_row_slice(&qddot_star);
            let tau_link = &terms.m * qdd + &terms.b + &terms.g - &est;

            // Friction compensation on this leg's joints.
            let mut qd4 = [0.0; 4];
            qd4[2 * idx] = leg.coords.qdot[0];
            qd4[2 * idx + 1] = leg.coords.qdot[1];
            let fric = friction_torque(&self.model.friction, &qd4);
            command[2 * idx] = tau_link[0] + fric[2 * idx];
            command[2 * idx + 1] = tau_link[1] + fric[2 * idx + 1];
        }
        Ok((
            command,
            SimplifiedDiagnostics {
                gait: self.gait,
                tau_int_est: est_out,
            },
        ))
    }
}
