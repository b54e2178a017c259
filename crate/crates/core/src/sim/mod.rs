//! Deterministic coupled human-exoskeleton plant.
//!
//! The plant integrates the whole-body stance dynamics under motor torques
//! and a synthetic human acting as a joint-space impedance toward a
//! reference gait. Gait states, the interpolation factor and the ground
//! reaction forces are scheduled rather than solved from contact dynamics:
//! the controller consumes GRF ratios exactly as it would from force
//! plates, and scheduling sidesteps unilateral-contact simulation.
//!
//! The five stance coordinates are shared by the left-stance, right-stance
//! and interpolated double-stance models, so support switches need no
//! re-parameterization.

pub mod log;
pub mod scenario;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ExoError, Result};
use crate::friction::friction_torque;
use crate::gait::{FootForce, GaitState, Grf};
use crate::model::{stance_terms_for, ExoModel, FrictionParams, GenCoords, SupportModel};

pub use log::{LogRow, SimLog};
pub use scenario::{
    run_scenario, ControllerKind, DesiredMode, PlantConfig, ScenarioConfig, WalkParams,
};

/// Synthetic human: joint-space impedance toward a periodic reference gait,
/// plus the limb inertia that rides on the exoskeleton. This stands in for
/// the real user so transparency claims are testable; the emitted torque is
/// the ground truth the estimators must recover.
///
/// The limb inertia enters the coupled plant's mass matrix (the user's body
/// accelerates with the structure); its reaction `-M_h qddot` is part of
/// the interaction torque at the straps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanModel {
    /// Joint stiffness per generalized coordinate, N m/rad.
    pub stiffness: [f64; 5],
    /// Joint damping per generalized coordinate, N m s/rad.
    pub damping: [f64; 5],
    /// Diagonal limb inertia per generalized coordinate, kg m^2.
    pub limb_inertia: [f64; 5],
    /// Impedance multiplier on a leg's channels when that leg is loaded,
    /// blended by the vertical-force share. A loaded human leg is much
    /// stiffer than a swinging one and anchors the pelvis.
    pub stance_scale: f64,
}

impl Default for HumanModel {
    fn default() -> Self {
        // The trunk channel must stabilize the whole-robot inverted
        // pendulum about the stance ankle (gravity gradient on the order of
        // 150 N m/rad for a ~20 kg device), which a standing user does
        // easily; the leg channels are ordinary limb impedances.
        Self {
            stiffness: [800.0, 200.0, 200.0, 200.0, 200.0],
            damping: [200.0, 10.0, 10.0, 10.0, 10.0],
            limb_inertia: [8.0, 2.0, 0.5, 2.0, 0.5],
            stance_scale: 10.0,
        }
    }
}

impl HumanModel {
    pub fn validate(&self) -> Result<()> {
        if self
            .stiffness
            .iter()
            .chain(self.damping.iter())
            .chain(self.limb_inertia.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(ExoError::Config(
                "human impedance must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Per-coordinate impedance multipliers for a left vertical-force share
    /// `alpha`: each leg's channels stiffen toward `stance_scale` as it
    /// takes load (continuous in alpha, so the torque stays continuous
    /// through double stance).
    pub fn load_scales(&self, alpha: f64) -> [f64; 5] {
        let s = self.stance_scale.max(1.0);
        let left = 1.0 + (s - 1.0) * alpha;
        let right = 1.0 + (s - 1.0) * (1.0 - alpha);
        [1.0, left, left, right, right]
    }

    /// Impedance part of the interaction torque,
    /// `K (q_ref - q) + C (qd_ref - qd)` per coordinate, with the
    /// load-dependent scaling for the given vertical-force share.
    pub fn impedance_torque(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        q_ref: &DVector<f64>,
        qd_ref: &DVector<f64>,
        alpha: f64,
    ) -> DVector<f64> {
        let scale = self.load_scales(alpha);
        DVector::from_fn(5, |i, _| {
            scale[i]
                * (self.stiffness[i] * (q_ref[i] - q[i])
                    + self.damping[i] * (qd_ref[i] - qd[i]))
        })
    }

    /// Full interaction torque including the limb-inertia reaction at a
    /// known acceleration.
    pub fn torque(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        q_ref: &DVector<f64>,
        qd_ref: &DVector<f64>,
        alpha: f64,
        qddot: &DVector<f64>,
    ) -> DVector<f64> {
        let mut tau = self.impedance_torque(q, qd, q_ref, qd_ref, alpha);
        for i in 0..5 {
            tau[i] -= self.limb_inertia[i] * qddot[i];
        }
        tau
    }
}

/// Scheduled gait: state, interpolation factor and synthesized GRFs as
/// smooth functions of time. Phase 0 is the left heel strike; each cycle is
/// two steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSchedule {
    /// One step (half cycle), s.
    pub step_period: f64,
    /// Fraction of the cycle spent in each double-stance episode, in
    /// (0, 0.5).
    pub ds_fraction: f64,
    /// Scheduled GRF direction ratio on the loaded left foot.
    pub gamma: f64,
    /// Total vertical force: exoskeleton weight plus any extra share the
    /// user transfers through the structure, N.
    pub total_vertical: f64,
}

impl GaitSchedule {
    pub fn cycle_period(&self) -> f64 {
        2.0 * self.step_period
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_period.is_finite() && self.step_period > 0.0) {
            return Err(ExoError::Config("step period must be positive".into()));
        }
        if !(0.0 < self.ds_fraction && self.ds_fraction < 0.5) {
            return Err(ExoError::Config(
                "double-stance fraction must lie in (0, 0.5)".into(),
            ));
        }
        if !(self.total_vertical.is_finite() && self.total_vertical > 0.0) {
            return Err(ExoError::Config("total vertical force must be positive".into()));
        }
        Ok(())
    }

    /// Cycle phase in [0, 1).
    pub fn phase(&self, t: f64) -> f64 {
        (t / self.cycle_period()).rem_euclid(1.0)
    }

    /// Left vertical-force share at time t: cosine ramps through double
    /// stance, continuous, hitting exactly 0 and 1 at the single-stance
    /// boundaries.
    pub fn alpha(&self, t: f64) -> f64 {
        let p = self.phase(t);
        let d = self.ds_fraction;
        if p < d {
            0.5 * (1.0 - (std::f64::consts::PI * p / d).cos())
        } else if p < 0.5 {
            1.0
        } else if p < 0.5 + d {
            1.0 - 0.5 * (1.0 - (std::f64::consts::PI * (p - 0.5) / d).cos())
        } else {
            0.0
        }
    }

    pub fn state(&self, t: f64) -> GaitState {
        let p = self.phase(t);
        let d = self.ds_fraction;
        if p < d || (p >= 0.5 && p < 0.5 + d) {
            GaitState::DoubleStance
        } else if p < 0.5 {
            GaitState::LeftStance
        } else {
            GaitState::RightStance
        }
    }

    pub fn support(&self, t: f64) -> SupportModel {
        match self.state(t) {
            GaitState::LeftStance => SupportModel::LeftStance,
            GaitState::RightStance => SupportModel::RightStance,
            GaitState::DoubleStance => SupportModel::DoubleStance {
                alpha: self.alpha(t),
            },
            GaitState::Flight => SupportModel::Flight,
        }
    }

    /// Synthesized ground reaction forces: the total vertical force split by
    /// alpha, the left horizontal component from the gamma profile, and the
    /// right horizontal balancing it.
    pub fn grf(&self, t: f64) -> Grf {
        let alpha = self.alpha(t);
        let f_ly = alpha * self.total_vertical;
        let f_ry = (1.0 - alpha) * self.total_vertical;
        let f_lx = self.gamma * f_ly;
        Grf {
            left: FootForce { fx: f_lx, fy: f_ly },
            right: FootForce {
                fx: -f_lx,
                fy: f_ry,
            },
        }
    }
}

/// Periodic joint-space reference gait built from smooth primitives; both
/// the human impedance and the schedule share its timing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGait {
    pub cycle_period: f64,
    pub trunk_amplitude: f64,
    pub hip_neutral: f64,
    pub hip_amplitude: f64,
    pub knee_neutral: f64,
    pub knee_amplitude: f64,
}

impl ReferenceGait {
    /// Smooth swing bump: (0.5 - 0.5 cos(2 pi x))^2, period 1, peak 1 at
    /// x = 0.5.
    fn bump(x: f64) -> f64 {
        let u = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos());
        u * u
    }

    fn bump_dot(x: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI;
        let u = 0.5 * (1.0 - (w * x).cos());
        2.0 * u * 0.5 * w * (w * x).sin()
    }

    /// Reference positions at time t (phase 0 = left heel strike).
    pub fn position(&self, t: f64) -> DVector<f64> {
        let p = (t / self.cycle_period).rem_euclid(1.0);
        let w = 2.0 * std::f64::consts::PI;
        DVector::from_row_slice(&[
            self.trunk_amplitude * (2.0 * w * p).sin(),
            self.hip_neutral + self.hip_amplitude * (w * p).cos(),
            self.knee_neutral - self.knee_amplitude * Self::bump(p - 0.25),
            self.hip_neutral - self.hip_amplitude * (w * p).cos(),
            self.knee_neutral - self.knee_amplitude * Self::bump(p - 0.75),
        ])
    }

    /// Reference velocities at time t.
    pub fn velocity(&self, t: f64) -> DVector<f64> {
        let p = (t / self.cycle_period).rem_euclid(1.0);
        let w = 2.0 * std::f64::consts::PI;
        let dp = 1.0 / self.cycle_period;
        DVector::from_row_slice(&[
            self.trunk_amplitude * 2.0 * w * (2.0 * w * p).cos() * dp,
            -self.hip_amplitude * w * (w * p).sin() * dp,
            -self.knee_amplitude * Self::bump_dot(p - 0.25) * dp,
            self.hip_amplitude * w * (w * p).sin() * dp,
            -self.knee_amplitude * Self::bump_dot(p - 0.75) * dp,
        ])
    }
}

/// The simulated plant: whole-body dynamics of the (possibly mismatched)
/// physical exoskeleton, drivetrain friction, the synthetic human and the
/// gait schedule.
#[derive(Debug, Clone)]
pub struct Plant {
    /// Physical parameters of the plant (may differ from the controller's
    /// model by the configured mismatch factors).
    pub model: ExoModel,
    /// Actual drivetrain friction acting in the plant.
    pub friction: FrictionParams,
    pub human: HumanModel,
    pub reference: ReferenceGait,
    pub schedule: GaitSchedule,
}

/// Ground truth produced alongside a plant step.
#[derive(Debug, Clone)]
pub struct PlantInfo {
    /// Acceleration at the step start.
    pub qddot: DVector<f64>,
    /// Human interaction torque at the step start.
    pub tau_int: DVector<f64>,
    /// Link-side joint torque (command minus actual friction) at the step
    /// start.
    pub tau_joint: [f64; 4],
}

enum TorqueSource<'a, F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>> {
    /// Coupled human: impedance toward the reference plus limb inertia
    /// folded into the mass matrix.
    Human,
    /// Explicit interaction torque (test injection); the limb inertia is
    /// not applied.
    Explicit(&'a F),
}

impl Plant {
    /// Instantaneous plant acceleration under a held command.
    pub fn acceleration(
        &self,
        coords: &GenCoords,
        t: f64,
        tau_cmd: &[f64; 4],
    ) -> Result<DVector<f64>> {
        let (qdd, _, _) = self.accel(
            &coords.q,
            &coords.qdot,
            t,
            tau_cmd,
            &TorqueSource::<fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>>::Human,
        )?;
        Ok(qdd)
    }

    /// Link-side strain-gauge reading under a held command.
    pub fn gauge_torque(
        &self,
        coords: &GenCoords,
        t: f64,
        tau_cmd: &[f64; 4],
    ) -> Result<[f64; 4]> {
        let (_, _, tau_joint) = self.accel(
            &coords.q,
            &coords.qdot,
            t,
            tau_cmd,
            &TorqueSource::<fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>>::Human,
        )?;
        Ok(tau_joint)
    }

    /// Forward dynamics of the scheduled support model.
    ///
    /// With the coupled human, the plant solves
    /// `(M_exo + diag(M_h)) qddot = S^T (cmd - fric) + imp - b - g` and the
    /// reported interaction torque is `imp - M_h qddot`.
    fn accel<F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>>(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        t: f64,
        tau_cmd: &[f64; 4],
        source: &TorqueSource<'_, F>,
    ) -> Result<(DVector<f64>, DVector<f64>, [f64; 4])> {
        let coords = GenCoords::from_vectors(
            crate::model::Parameterization::Stance5,
            q.clone(),
            qd.clone(),
        )?;
        let support = self.schedule.support(t);
        let terms = stance_terms_for(&self.model, &coords, &support)?;
        let qd4 = [qd[1], qd[2], qd[3], qd[4]];
        let fric = friction_torque(&self.friction, &qd4);

        let mut m = terms.m;
        let applied = match source {
            TorqueSource::Human => {
                let q_ref = self.reference.position(t);
                let qd_ref = self.reference.velocity(t);
                for i in 0..5 {
                    m[(i, i)] += self.human.limb_inertia[i];
                }
                self.human
                    .impedance_torque(q, qd, &q_ref, &qd_ref, self.schedule.alpha(t))
            }
            TorqueSource::Explicit(f) => f(q, qd, t),
        };
        let mut rhs = applied.clone() - &terms.b - &terms.g;
        for j in 0..4 {
            rhs[1 + j] += tau_cmd[j] - fric[j];
        }
        let qdd = m
            .cholesky()
            .ok_or_else(|| ExoError::DegenerateConfiguration("plant mass matrix not PD".into()))?
            .solve(&rhs);
        let tau_int = match source {
            TorqueSource::Human => {
                let mut v = applied;
                for i in 0..5 {
                    v[i] -= self.human.limb_inertia[i] * qdd[i];
                }
                v
            }
            TorqueSource::Explicit(_) => applied,
        };
        // Strain gauges sit distal to the motor and gearbox: the reading is
        // the command minus friction minus the apparent rotor inertia
        // torque spent accelerating the rotor.
        let mut tau_joint = [0.0; 4];
        for j in 0..4 {
            tau_joint[j] = tau_cmd[j] - fric[j] - self.model.rotor_apparent_inertia * qdd[1 + j];
        }
        Ok((qdd, tau_int, tau_joint))
    }

    /// One RK4 step of the plant under a zero-order-hold motor command.
    /// The schedule (support model, alpha) is evaluated at each stage time,
    /// so double-stance interpolation stays smooth within the step.
    pub fn step(
        &self,
        coords: &GenCoords,
        t: f64,
        tau_cmd: &[f64; 4],
        dt: f64,
    ) -> Result<(GenCoords, PlantInfo)> {
        self.rk4(
            coords,
            t,
            tau_cmd,
            dt,
            &TorqueSource::<fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>>::Human,
        )
    }

    /// RK4 step with an explicit interaction-torque source (used by the
    /// quiet-plant tests to inject known torques).
    pub fn step_with(
        &self,
        coords: &GenCoords,
        t: f64,
        tau_cmd: &[f64; 4],
        dt: f64,
        tau_int_at: &impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>,
    ) -> Result<(GenCoords, PlantInfo)> {
        self.rk4(coords, t, tau_cmd, dt, &TorqueSource::Explicit(tau_int_at))
    }

    fn rk4<F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>>(
        &self,
        coords: &GenCoords,
        t: f64,
        tau_cmd: &[f64; 4],
        dt: f64,
        source: &TorqueSource<'_, F>,
    ) -> Result<(GenCoords, PlantInfo)> {
        let (q, qd) = (&coords.q, &coords.qdot);
        let (k1v, tau_int, tau_joint) = self.accel(q, qd, t, tau_cmd, source)?;
        let k1q = qd.clone();
        let h2 = dt / 2.0;
        let (k2v, _, _) = self.accel(&(q + &k1q * h2), &(qd + &k1v * h2), t + h2, tau_cmd, source)?;
        let k2q = qd + &k1v * h2;
        let (k3v, _, _) = self.accel(&(q + &k2q * h2), &(qd + &k2v * h2), t + h2, tau_cmd, source)?;
        let k3q = qd + &k2v * h2;
        let (k4v, _, _) = self.accel(&(q + &k3q * dt), &(qd + &k3v * dt), t + dt, tau_cmd, source)?;
        let k4q = qd + &k3v * dt;
        let q_next = q + (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (dt / 6.0);
        let qd_next = qd + (&k1v + &k2v * 2.0 + &k3v * 2.0 + &k4v) * (dt / 6.0);
        if !q_next.iter().chain(qd_next.iter()).all(|v| v.is_finite()) {
            return Err(ExoError::SimulationAborted {
                t,
                reason: "plant state became non-finite".into(),
            });
        }
        let next = GenCoords::from_vectors(coords.param, q_next, qd_next)?;
        Ok((
            next,
            PlantInfo {
                qddot: k1v,
                tau_int,
                tau_joint,
            },
        ))
    }
}
