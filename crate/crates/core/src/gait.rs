//! Gait state machine over ground reaction forces.
//!
//! Four states (left stance, right stance, double stance, flight) with
//! transitions triggered by the vertical force under each foot crossing a
//! load threshold. For robustness to sensor noise, states are not allowed
//! to change more than once every 150 ms.
//!
//! The threshold can be an absolute force or a fraction of the total
//! vertical force; the fractional form is robot-mass independent and is the
//! default (3% of the total).

use serde::{Deserialize, Serialize};

use crate::error::{ExoError, Result};

/// Planar ground reaction force under one foot, N.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootForce {
    pub fx: f64,
    pub fy: f64,
}

/// Ground reaction forces under both feet.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grf {
    pub left: FootForce,
    pub right: FootForce,
}

impl Grf {
    pub fn new(left: (f64, f64), right: (f64, f64)) -> Result<Self> {
        let g = Self {
            left: FootForce {
                fx: left.0,
                fy: left.1,
            },
            right: FootForce {
                fx: right.0,
                fy: right.1,
            },
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.left.fx, self.left.fy, self.right.fx, self.right.fy];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(ExoError::NonFinite("ground reaction force"));
        }
        if self.left.fy < 0.0 || self.right.fy < 0.0 {
            return Err(ExoError::InvalidArgument(
                "vertical GRF cannot be negative (ground cannot pull)".into(),
            ));
        }
        Ok(())
    }

    pub fn total_vertical(&self) -> f64 {
        self.left.fy + self.right.fy
    }
}

/// Discrete gait state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaitState {
    LeftStance,
    RightStance,
    DoubleStance,
    Flight,
}

impl GaitState {
    pub fn name(&self) -> &'static str {
        match self {
            GaitState::LeftStance => "left_stance",
            GaitState::RightStance => "right_stance",
            GaitState::DoubleStance => "double_stance",
            GaitState::Flight => "flight",
        }
    }

    /// Integer code used in log files.
    pub fn code(&self) -> u8 {
        match self {
            GaitState::Flight => 0,
            GaitState::LeftStance => 1,
            GaitState::RightStance => 2,
            GaitState::DoubleStance => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => GaitState::Flight,
            1 => GaitState::LeftStance,
            2 => GaitState::RightStance,
            3 => GaitState::DoubleStance,
            _ => return Err(ExoError::InvalidArgument(format!("bad gait code {code}"))),
        })
    }

    pub fn left_loaded(&self) -> bool {
        matches!(self, GaitState::LeftStance | GaitState::DoubleStance)
    }

    pub fn right_loaded(&self) -> bool {
        matches!(self, GaitState::RightStance | GaitState::DoubleStance)
    }
}

/// Load-threshold specification for the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoadThreshold {
    /// Absolute vertical force, N.
    Absolute(f64),
    /// Fraction of the instantaneous total vertical force.
    FractionOfTotal(f64),
}

impl Default for LoadThreshold {
    fn default() -> Self {
        LoadThreshold::FractionOfTotal(0.03)
    }
}

/// Minimum time between state transitions, s.
pub const DEBOUNCE_S: f64 = 0.150;

/// Guard for the GRF direction ratio: below this vertical force the ratio is
/// meaningless and gamma falls back to zero. Gamma only matters in double
/// stance where the left vertical force is large.
pub const GAMMA_FORCE_GUARD_N: f64 = 1.0;

/// Discrete gait state plus the continuous quantities derived from the GRFs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitContext {
    pub state: GaitState,
    /// Left vertical GRF share of the total, in [0, 1].
    pub alpha: f64,
    /// Ratio of horizontal to vertical force on the left foot.
    pub gamma: f64,
    /// True when gamma was forced to zero by the low-force guard.
    pub gamma_fallback: bool,
    /// Time of the last state transition, s.
    pub last_transition: f64,
}

impl GaitContext {
    pub fn new(state: GaitState, now: f64) -> Self {
        Self {
            state,
            alpha: match state {
                GaitState::LeftStance => 1.0,
                GaitState::RightStance => 0.0,
                _ => 0.5,
            },
            gamma: 0.0,
            gamma_fallback: false,
            last_transition: now,
        }
    }
}

/// Interpolation factor: left vertical GRF share of the total vertical GRF,
/// clamped to [0, 1]. Errors when both vertical forces are zero (the ratio
/// is undefined).
pub fn alpha(grf: &Grf) -> Result<f64> {
    grf.validate()?;
    let total = grf.total_vertical();
    if total <= 0.0 {
        return Err(ExoError::InvalidArgument(
            "alpha undefined: both vertical GRFs are zero".into(),
        ));
    }
    Ok((grf.left.fy / total).clamp(0.0, 1.0))
}

/// GRF direction ratio gamma = F_l,x / F_l,y with a zero fallback when the
/// left vertical force is below the guard. Returns (gamma, fallback).
pub fn gamma(grf: &Grf) -> (f64, bool) {
    if grf.left.fy <= GAMMA_FORCE_GUARD_N {
        (0.0, true)
    } else {
        (grf.left.fx / grf.left.fy, false)
    }
}

fn next_state(state: GaitState, left_loaded: bool, right_loaded: bool) -> GaitState {
    // Loading the opposite foot takes priority over unloading the current
    // one, matching the walking sequence LS -> DS -> RS -> DS -> ...
    match state {
        GaitState::LeftStance => {
            if right_loaded {
                GaitState::DoubleStance
            } else if !left_loaded {
                GaitState::Flight
            } else {
                GaitState::LeftStance
            }
        }
        GaitState::RightStance => {
            if left_loaded {
                GaitState::DoubleStance
            } else if !right_loaded {
                GaitState::Flight
            } else {
                GaitState::RightStance
            }
        }
        GaitState::DoubleStance => {
            if !right_loaded {
                GaitState::LeftStance
            } else if !left_loaded {
                GaitState::RightStance
            } else {
                GaitState::DoubleStance
            }
        }
        GaitState::Flight => {
            if left_loaded {
                GaitState::LeftStance
            } else if right_loaded {
                GaitState::RightStance
            } else {
                GaitState::Flight
            }
        }
    }
}

/// Advance the gait context by one GRF sample.
///
/// Transitions are those of the four-state machine with the loaded/unloaded
/// predicates `F_i >= F_lim`; a transition is suppressed if less than 150 ms
/// have elapsed since the previous one. Alpha and gamma are refreshed from
/// the forces whenever they are defined.
pub fn update(
    ctx: &GaitContext,
    grf: &Grf,
    threshold: LoadThreshold,
    now: f64,
) -> Result<GaitContext> {
    grf.validate()?;
    if now < ctx.last_transition {
        return Err(ExoError::InvalidArgument(format!(
            "time went backwards: now = {now} < last transition = {}",
            ctx.last_transition
        )));
    }
    let f_lim = match threshold {
        LoadThreshold::Absolute(f) => f,
        LoadThreshold::FractionOfTotal(r) => r * grf.total_vertical(),
    };
    if f_lim < 0.0 || !f_lim.is_finite() {
        return Err(ExoError::InvalidArgument(format!(
            "load threshold must be finite and nonnegative, got {f_lim}"
        )));
    }
    // A foot carrying no force is never "loaded", even when the threshold
    // degenerates to zero (fraction of a zero total).
    let left_loaded = grf.left.fy >= f_lim && grf.left.fy > 0.0;
    let right_loaded = grf.right.fy >= f_lim && grf.right.fy > 0.0;

    let mut out = *ctx;
    let proposed = if ctx.state == GaitState::Flight && left_loaded && right_loaded {
        // No direct flight -> double-stance edge; land on the more loaded
        // side first.
        if grf.left.fy >= grf.right.fy {
            GaitState::LeftStance
        } else {
            GaitState::RightStance
        }
    } else {
        next_state(ctx.state, left_loaded, right_loaded)
    };
    if proposed != ctx.state && now - ctx.last_transition >= DEBOUNCE_S {
        out.state = proposed;
        out.last_transition = now;
    }
    if grf.total_vertical() > 0.0 {
        out.alpha = alpha(grf)?;
    }
    let (g, fb) = gamma(grf);
    out.gamma = g;
    out.gamma_fallback = fb;
    Ok(out)
}
