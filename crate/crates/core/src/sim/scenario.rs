//! Scenario configuration and the closed-loop runner.
//!
//! A scenario couples the plant (1 kHz RK4) with one of three conditions at
//! the 333 Hz control rate under zero-order hold: the whole-body
//! controller, the simplified per-leg controller, or the passive no-drive
//! exoskeleton. The whole-body interaction-torque estimate is logged in
//! every condition so the conditions can be compared on the same channel.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    leg_phases, HapticParams, HapticReference, Limits, SimplifiedController, WholeBodyController,
};
use crate::error::{ExoError, Result};
use crate::estimation::{estimate_double_stance, estimate_single_stance};
use crate::friction::friction_torque;
use crate::gait::{self, GaitState, Grf};
use crate::model::{ExoModel, ExoState, GenCoords, ModelOverrides, Side};
use crate::qp::QpStatus;
use crate::sim::log::{LogRow, SimLog};
use crate::sim::{GaitSchedule, HumanModel, Plant, ReferenceGait};

/// Plant integration step, s.
pub const DT_PLANT: f64 = 0.001;
/// Control period, s (one controller tick every third plant step).
pub const DT_CONTROL: f64 = 0.003;

/// Which controller drives the exoskeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    WholeBody,
    Simplified,
    NoDrive,
}

/// Desired-interaction-torque mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesiredMode {
    /// Zero desired interaction torque.
    Transparency,
    /// Virtual spring-damper rendering at the joints.
    Haptic,
}

/// Shared walking timing and reference-gait shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkParams {
    /// One step (half gait cycle), s. 1.5 s matches a 40 bpm heel-strike
    /// metronome.
    pub step_period_s: f64,
    /// Fraction of the cycle per double-stance episode, in (0, 0.5).
    pub double_stance_fraction: f64,
    /// Scheduled GRF direction ratio on the loaded left foot.
    pub gamma: f64,
    pub trunk_amplitude_rad: f64,
    pub hip_neutral_rad: f64,
    pub hip_amplitude_rad: f64,
    pub knee_neutral_rad: f64,
    pub knee_amplitude_rad: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            step_period_s: 1.5,
            double_stance_fraction: 0.2,
            gamma: 0.0,
            trunk_amplitude_rad: 0.0,
            hip_neutral_rad: 0.2,
            hip_amplitude_rad: 0.35,
            knee_neutral_rad: -0.15,
            knee_amplitude_rad: 0.7,
        }
    }
}

/// Plant-side mismatch and loading knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Scale on all plant link masses/inertias relative to the controller's
    /// model.
    pub mass_scale: f64,
    /// Scale on the actual drivetrain friction relative to the identified
    /// coefficients.
    pub friction_scale: f64,
    /// Extra vertical force carried through the structure (user share), N.
    pub extra_vertical_load_n: f64,
    /// Residual friction fraction in the no-drive condition.
    pub no_drive_friction_scale: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            mass_scale: 1.0,
            friction_scale: 1.0,
            extra_vertical_load_n: 0.0,
            no_drive_friction_scale: 0.2,
        }
    }
}

/// Measurement noise injected into the controller's inputs (the plant and
/// the log always see clean signals).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementNoise {
    pub grf_std_n: f64,
    pub tau_std_nm: f64,
}

/// Complete scenario description, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub controller: ControllerKind,
    pub desired: DesiredMode,
    pub duration_s: f64,
    /// Seed for the measurement-noise streams.
    pub seed: u64,
    pub walk: WalkParams,
    pub human: HumanModel,
    pub plant: PlantConfig,
    pub noise: MeasurementNoise,
    pub limits: Limits,
    pub haptic: HapticParams,
    /// Optional overrides on the nominal controller model.
    pub model: ModelOverrides,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::WholeBody,
            desired: DesiredMode::Transparency,
            duration_s: 60.0,
            seed: 0,
            walk: WalkParams::default(),
            human: HumanModel::default(),
            plant: PlantConfig::default(),
            noise: MeasurementNoise::default(),
            limits: Limits::default(),
            haptic: HapticParams::default(),
            model: ModelOverrides::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ExoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ExoError::Config("duration must be positive".into()));
        }
        if !(0.0 < self.walk.double_stance_fraction && self.walk.double_stance_fraction < 0.5) {
            return Err(ExoError::Config(
                "double-stance fraction must lie in (0, 0.5)".into(),
            ));
        }
        if self.walk.step_period_s <= 0.0 {
            return Err(ExoError::Config("step period must be positive".into()));
        }
        if self.plant.mass_scale <= 0.0 || self.plant.friction_scale < 0.0 {
            return Err(ExoError::Config("invalid plant mismatch factors".into()));
        }
        self.human.validate()?;
        self.limits.validate()?;
        self.model.apply(&ExoModel::nominal()).validate()?;
        Ok(())
    }

    /// Controller-side model (nominal plus overrides).
    pub fn controller_model(&self) -> ExoModel {
        self.model.apply(&ExoModel::nominal())
    }

    /// Plant-side model after mismatch factors (and drive removal for the
    /// no-drive condition).
    pub fn plant_model(&self) -> ExoModel {
        let m = self.controller_model().with_mass_scale(self.plant.mass_scale);
        match self.controller {
            ControllerKind::NoDrive => m.no_drive(self.plant.no_drive_friction_scale),
            _ => m,
        }
    }

    pub fn reference(&self) -> ReferenceGait {
        ReferenceGait {
            cycle_period: 2.0 * self.walk.step_period_s,
            trunk_amplitude: self.walk.trunk_amplitude_rad,
            hip_neutral: self.walk.hip_neutral_rad,
            hip_amplitude: self.walk.hip_amplitude_rad,
            knee_neutral: self.walk.knee_neutral_rad,
            knee_amplitude: self.walk.knee_amplitude_rad,
        }
    }

    pub fn schedule(&self) -> GaitSchedule {
        GaitSchedule {
            step_period: self.walk.step_period_s,
            ds_fraction: self.walk.double_stance_fraction,
            gamma: self.walk.gamma,
            total_vertical: self.plant_model().total_weight() + self.plant.extra_vertical_load_n,
        }
    }
}

enum Driver {
    WholeBody(WholeBodyController),
    Simplified(SimplifiedController),
    Passive,
}

/// Run a scenario to completion and return the plant-rate log.
///
/// Deterministic: a given configuration (including the seed) produces a
/// bit-identical log.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimLog> {
    config.validate()?;
    let ctrl_model = config.controller_model();
    let plant_model = config.plant_model();
    let schedule = config.schedule();
    schedule.validate()?;
    let reference = config.reference();
    let plant = Plant {
        friction: plant_model.friction.scaled(match config.controller {
            // The no-drive friction scale is already applied by no_drive().
            ControllerKind::NoDrive => 1.0,
            _ => config.plant.friction_scale,
        }),
        model: plant_model,
        human: config.human.clone(),
        reference: reference.clone(),
        schedule: schedule.clone(),
    };

    let init_state = schedule.state(0.0);
    let mut driver = match config.controller {
        ControllerKind::WholeBody => {
            let mut c = WholeBodyController::new(ctrl_model.clone(), init_state, 0.0);
            c.limits = config.limits;
            Driver::WholeBody(c)
        }
        ControllerKind::Simplified => {
            Driver::Simplified(SimplifiedController::new(ctrl_model.clone(), init_state, 0.0))
        }
        ControllerKind::NoDrive => Driver::Passive,
    };
    let mut haptic = HapticReference::new(config.haptic);
    // Shadow gait context validating the state machine against the
    // synthesized GRFs; also drives the logged whole-body estimate.
    let mut shadow = gait::GaitContext::new(init_state, 0.0);
    let shadow_threshold = gait::LoadThreshold::default();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise = |std: f64, rng: &mut ChaCha8Rng| -> f64 {
        if std > 0.0 {
            // Box-Muller; drawn pairwise deterministic.
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        } else {
            0.0
        }
    };

    let n_steps = (config.duration_s / DT_PLANT).round() as usize;
    let mut coords = GenCoords::from_vectors(
        crate::model::Parameterization::Stance5,
        reference.position(0.0),
        reference.velocity(0.0),
    )?;
    let mut log = SimLog {
        rows: Vec::with_capacity(n_steps),
    };

    let mut cmd_held = [0.0; 4];
    let mut des_held = [0.0; 5];
    let mut est_held = [0.0; 5];
    let mut qp_status_held: i8 = -1;
    let mut qp_iters_held: u32 = 0;
    let mut fallback_held = false;

    for i in 0..n_steps {
        let t = i as f64 * DT_PLANT;
        let grf = schedule.grf(t);
        let sched_state = schedule.state(t);
        let alpha = schedule.alpha(t);
        shadow = gait::update(&shadow, &grf, shadow_threshold, t)?;

        let ctrl_tick = i % 3 == 0;
        if ctrl_tick {
            let state = ExoState {
                coords: coords.clone(),
                t,
            };
            // Link-side strain-gauge reading under the currently held
            // command.
            let gauge = plant.gauge_torque(&coords, t, &cmd_held)?;
            let mut tau_meas = [0.0; 4];
            for j in 0..4 {
                tau_meas[j] = gauge[j] + noise(config.noise.tau_std_nm, &mut rng);
            }
            let mut grf_meas = grf;
            if config.noise.grf_std_n > 0.0 {
                grf_meas.left.fx += noise(config.noise.grf_std_n, &mut rng);
                grf_meas.left.fy =
                    (grf_meas.left.fy + noise(config.noise.grf_std_n, &mut rng)).max(0.0);
                grf_meas.right.fx += noise(config.noise.grf_std_n, &mut rng);
                grf_meas.right.fy =
                    (grf_meas.right.fy + noise(config.noise.grf_std_n, &mut rng)).max(0.0);
            }

            // Desired interaction torque from the current condition.
            let phases = leg_phases(match &driver {
                Driver::WholeBody(c) => c.gait().state,
                Driver::Simplified(c) => c.gait().state,
                Driver::Passive => sched_state,
            });
            let tau_des = match config.desired {
                DesiredMode::Transparency => DVector::zeros(5),
                DesiredMode::Haptic => haptic.update(&coords, phases, DT_CONTROL),
            };
            for j in 0..5 {
                des_held[j] = tau_des[j];
            }

            // Whole-body estimate logged in every condition (the per-leg
            // controller still uses its own internal estimator).
            let logged_est = match sched_state {
                GaitState::DoubleStance if alpha > 0.0 && alpha < 1.0 => {
                    estimate_double_stance(&ctrl_model, &coords, &tau_meas, alpha, shadow.gamma)?
                        .tau_int
                }
                GaitState::RightStance => {
                    estimate_single_stance(&ctrl_model, &coords, &tau_meas, Side::Right)?.values
                }
                GaitState::DoubleStance if alpha < 0.5 => {
                    estimate_single_stance(&ctrl_model, &coords, &tau_meas, Side::Right)?.values
                }
                _ => estimate_single_stance(&ctrl_model, &coords, &tau_meas, Side::Left)?.values,
            };
            for j in 0..5 {
                est_held[j] = logged_est[j];
            }

            match &mut driver {
                Driver::WholeBody(c) => {
                    let (cmd, diag) = c.step(&state, &grf_meas, &tau_meas, &tau_des)?;
                    cmd_held = cmd;
                    qp_status_held = match diag.qp_status {
                        QpStatus::Optimal => 0,
                        QpStatus::MaxIter => 1,
                        QpStatus::Infeasible => 2,
                    };
                    qp_iters_held = diag.qp_iterations as u32;
                    fallback_held = diag.fallback;
                }
                Driver::Simplified(c) => {
                    let (cmd, _diag) = c.step(&state, &grf_meas, &tau_meas, &tau_des)?;
                    cmd_held = cmd;
                    qp_status_held = -1;
                    qp_iters_held = 0;
                    fallback_held = false;
                }
                Driver::Passive => {
                    cmd_held = [0.0; 4];
                    qp_status_held = -1;
                    qp_iters_held = 0;
                    fallback_held = false;
                }
            }
        }

        let (next, info) = plant.step(&coords, t, &cmd_held, DT_PLANT)?;
        log.rows.push(LogRow {
            t,
            ctrl_tick,
            state: sched_state,
            alpha,
            gamma: gait::gamma(&grf).0,
            q: [coords.q[0], coords.q[1], coords.q[2], coords.q[3], coords.q[4]],
            qd: [
                coords.qdot[0],
                coords.qdot[1],
                coords.qdot[2],
                coords.qdot[3],
                coords.qdot[4],
            ],
            qdd: [
                info.qddot[0],
                info.qddot[1],
                info.qddot[2],
                info.qddot[3],
                info.qddot[4],
            ],
            tau_cmd: cmd_held,
            tau_joint: info.tau_joint,
            tau_int_true: [
                info.tau_int[0],
                info.tau_int[1],
                info.tau_int[2],
                info.tau_int[3],
                info.tau_int[4],
            ],
            tau_int_est: est_held,
            tau_des: des_held,
            grf,
            qp_status: qp_status_held,
            qp_iterations: qp_iters_held,
            fallback: fallback_held,
        });
        coords = next;
    }
    Ok(log)
}
