//! Joint friction model, chirp excitation, numerical differentiation and
//! filtering, and least-squares identification of Coulomb/viscous
//! coefficients.
//!
//! Sign conventions: `friction_torque` returns the Coulomb + viscous
//! magnitude *along the motion direction* (positive when the joint moves in
//! the positive direction, `sign(0) = 0`). The physical friction torque on
//! the link opposes motion, so the torque delivered at the link is
//!
//! ```text
//!   tau_joint = tau_motor - friction_torque(qdot)
//! ```
//!
//! and a controller compensates by commanding `tau + friction_torque(qdot)`.

use nalgebra::{DVector, Vector2};

use crate::error::{ExoError, Result};
use crate::model::{dynamics_terms, ExoModel, FrictionParams, GenCoords, SupportModel};

/// Names of the actuated joints in coordinate order.
pub const JOINT_NAMES: [&str; 4] = ["left_hip", "left_knee", "right_hip", "right_knee"];

/// Element-wise Coulomb + viscous friction torque, N m, with sign(0) = 0.
pub fn friction_torque(params: &FrictionParams, qdot: &[f64; 4]) -> [f64; 4] {
    let mut tau = [0.0; 4];
    for j in 0..4 {
        tau[j] = params.c0[j] * sign(qdot[j]) + params.c1[j] * qdot[j];
    }
    tau
}

/// Sign with a zero dead value (avoids chattering torque at rest).
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Chirp excitation torque `A sin(6 pi t^2 / T)`, N m. The instantaneous
/// frequency is `6 t / T` Hz, sweeping linearly through 3 Hz at t = T/2.
pub fn chirp_torque(amplitude: f64, period: f64, t: f64) -> Result<f64> {
    if !(0.0..=period).contains(&t) {
        return Err(ExoError::InvalidArgument(format!(
            "chirp time {t} outside sweep [0, {period}]"
        )));
    }
    Ok(amplitude * (6.0 * std::f64::consts::PI * t * t / period).sin())
}

/// First derivative of a uniformly sampled series by the nine-point central
/// difference (order 8, exact for polynomials of degree <= 8 on interior
/// points). Near the boundaries the stencil radius shrinks; the end samples
/// use one-sided second-order formulas so the output length matches the
/// input.
pub fn differentiate9(signal: &[f64], dt: f64) -> Result<Vec<f64>> {
    if signal.len() < 9 {
        return Err(ExoError::InvalidArgument(format!(
            "differentiate9 needs at least 9 samples, got {}",
            signal.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ExoError::InvalidArgument("sample period must be positive".into()));
    }
    let n = signal.len();
    let mut out = vec![0.0; n];
    // Antisymmetric central coefficients for radii 1..4.
    const C1: [f64; 1] = [0.5];
    const C2: [f64; 2] = [2.0 / 3.0, -1.0 / 12.0];
    const C3: [f64; 3] = [0.75, -0.15, 1.0 / 60.0];
    const C4: [f64; 4] = [0.8, -0.2, 4.0 / 105.0, -1.0 / 280.0];
    for i in 0..n {
        let r = i.min(n - 1 - i).min(4);
        out[i] = match r {
            0 => {
                // One-sided second order at the very ends.
                if i == 0 {
                    (-1.5 * signal[0] + 2.0 * signal[1] - 0.5 * signal[2]) / dt
                } else {
                    (1.5 * signal[n - 1] - 2.0 * signal[n - 2] + 0.5 * signal[n - 3]) / dt
                }
            }
            _ => {
                let c: &[f64] = match r {
                    1 => &C1,
                    2 => &C2,
                    3 => &C3,
                    _ => &C4,
                };
                let mut acc = 0.0;
                for (k, ck) in c.iter().enumerate() {
                    acc += ck * (signal[i + k + 1] - signal[i - k - 1]);
                }
                acc / dt
            }
        };
    }
    Ok(out)
}

/// Forward-backward second-order Butterworth low-pass (zero net phase,
/// unit DC gain). Initial filter states are set to the steady-state response
/// of the first/last sample, so constant signals pass through unchanged.
pub fn lowpass_zero_phase(signal: &[f64], fc: f64, fs: f64) -> Result<Vec<f64>> {
    if !(fc > 0.0 && fs > 0.0 && fc.is_finite() && fs.is_finite()) {
        return Err(ExoError::InvalidArgument(
            "cutoff and sample rate must be positive".into(),
        ));
    }
    if fc >= fs / 2.0 {
        return Err(ExoError::InvalidArgument(format!(
            "cutoff {fc} Hz at or above Nyquist {} Hz",
            fs / 2.0
        )));
    }
    let coeffs = butter2(fc, fs);
    let mut fwd = signal.to_vec();
    filt(&coeffs, &mut fwd);
    fwd.reverse();
    filt(&coeffs, &mut fwd);
    fwd.reverse();
    Ok(fwd)
}

/// Biquad coefficients (b0, b1, b2, a1, a2) of a second-order Butterworth
/// low-pass via the bilinear transform.
fn butter2(fc: f64, fs: f64) -> [f64; 5] {
    let wc = (std::f64::consts::PI * fc / fs).tan();
    let k = std::f64::consts::SQRT_2;
    let d = 1.0 + k * wc + wc * wc;
    let b0 = wc * wc / d;
    [b0, 2.0 * b0, b0, 2.0 * (wc * wc - 1.0) / d, (1.0 - k * wc + wc * wc) / d]
}

/// In-place direct-form-II-transposed filtering with steady-state
/// initialization on the first sample.
fn filt(c: &[f64; 5], x: &mut [f64]) {
    let [b0, b1, b2, a1, a2] = *c;
    let x0 = x[0];
    // States such that a constant input x0 yields a constant output x0.
    let mut z2 = (b2 - a2) * x0;
    let mut z1 = (b1 - a1) * x0 + z2;
    for v in x.iter_mut() {
        let xin = *v;
        let y = b0 * xin + z1;
        z1 = b1 * xin - a1 * y + z2;
        z2 = b2 * xin - a2 * y;
        *v = y;
    }
}

/// Recorded identification run: the exoskeleton hung by the backpack,
/// chirp torques on the joints, positions logged at a uniform rate.
#[derive(Debug, Clone)]
pub struct IdDataset {
    /// Sample times, s (uniform).
    pub time: Vec<f64>,
    /// Flight coordinates per sample: [x0, y0, theta0..theta4].
    pub q_fly: Vec<[f64; 7]>,
    /// Motor torque commands per sample, [LH, LK, RH, RK], N m.
    pub motor_torque: Vec<[f64; 4]>,
}

impl IdDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.time.len();
        if self.q_fly.len() != n || self.motor_torque.len() != n {
            return Err(ExoError::DimensionMismatch {
                what: "identification series lengths",
                expected: n,
                got: self.q_fly.len().min(self.motor_torque.len()),
            });
        }
        if n < 9 {
            return Err(ExoError::InvalidArgument(
                "identification dataset too short".into(),
            ));
        }
        let dt0 = self.time[1] - self.time[0];
        for w in self.time.windows(2) {
            if ((w[1] - w[0]) - dt0).abs() > 1e-9 {
                return Err(ExoError::InvalidArgument(
                    "identification dataset must be uniformly sampled".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.time[1] - self.time[0]
    }

    /// Write as CSV with the documented header
    /// `t,x0,y0,pitch,hip_l,knee_l,hip_r,knee_r,tau_hip_l,tau_knee_l,tau_hip_r,tau_knee_r`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "t", "x0", "y0", "pitch", "hip_l", "knee_l", "hip_r", "knee_r", "tau_hip_l",
            "tau_knee_l", "tau_hip_r", "tau_knee_r",
        ])?;
        for i in 0..self.time.len() {
            let mut rec: Vec<String> = Vec::with_capacity(12);
            rec.push(fmt_f64(self.time[i]));
            rec.extend(self.q_fly[i].iter().map(|v| fmt_f64(*v)));
            rec.extend(self.motor_torque[i].iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut out = IdDataset {
            time: vec![],
            q_fly: vec![],
            motor_torque: vec![],
        };
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 12 {
                return Err(ExoError::InvalidArgument(format!(
                    "identification CSV rows need 12 columns, got {}",
                    rec.len()
                )));
            }
            let f = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| {
                    ExoError::InvalidArgument(format!("bad number in column {i}: {e}"))
                })
            };
            out.time.push(f(0)?);
            let mut q = [0.0; 7];
            for (k, qv) in q.iter_mut().enumerate() {
                *qv = f(1 + k)?;
            }
            out.q_fly.push(q);
            let mut tau = [0.0; 4];
            for (k, tv) in tau.iter_mut().enumerate() {
                *tv = f(8 + k)?;
            }
            out.motor_torque.push(tau);
        }
        out.validate()?;
        Ok(out)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation keeps logs reproducible and diffable.
    let mut buf = ryu_fmt(v);
    if buf == "-0.0" {
        buf = "0.0".into();
    }
    buf
}

fn ryu_fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Identification result for one joint.
#[derive(Debug, Clone, Copy)]
pub struct JointFit {
    pub c0: f64,
    pub c1: f64,
    /// Coefficient of determination of the (filtered, masked) fit.
    pub r_squared: f64,
    /// Number of samples that survived masking.
    pub samples: usize,
}

/// Options for the identification pipeline.
#[derive(Debug, Clone, Copy)]
pub struct IdOptions {
    /// Low-pass cutoff applied (zero-phase) to the regression target and
    /// regressors, Hz.
    pub lowpass_cutoff_hz: f64,
    /// Samples within this margin of a velocity reversal are excluded from
    /// the regression: the Coulomb jump makes the acceleration
    /// discontinuous, and the difference stencil and smoother support smear
    /// it over a finite window.
    pub reversal_margin_s: f64,
    /// Samples slower than this are excluded (sign ill-conditioned), rad/s.
    pub min_speed: f64,
}

impl Default for IdOptions {
    fn default() -> Self {
        Self {
            lowpass_cutoff_hz: 10.0,
            reversal_margin_s: 0.2,
            min_speed: 0.02,
        }
    }
}

/// Symmetric FIR (windowed-sinc, Hamming) zero-phase low-pass used inside
/// the estimator. Unlike the forward-backward IIR, its support is compact:
/// a bad sample can only contaminate outputs within `half_width` samples,
/// which makes the reversal-exclusion margin exact.
fn fir_smooth(signal: &[f64], fc: f64, fs: f64) -> Vec<f64> {
    let w = (1.2 * fs / fc).ceil() as i64; // half-width, samples
    let mut taps = Vec::with_capacity((2 * w + 1) as usize);
    let x0 = 2.0 * fc / fs;
    for k in -w..=w {
        let sinc = if k == 0 {
            1.0
        } else {
            let a = std::f64::consts::PI * x0 * k as f64;
            a.sin() / a
        };
        let window =
            0.54 + 0.46 * (std::f64::consts::PI * k as f64 / w as f64).cos();
        taps.push(x0 * sinc * window);
    }
    let norm: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= norm;
    }
    let n = signal.len() as i64;
    let reflect = |i: i64| -> f64 {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        signal[j.clamp(0, n - 1) as usize]
    };
    (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, t)| t * reflect(i + k as i64 - w))
                .sum()
        })
        .collect()
}

/// Support half-width of the estimator's smoother, samples.
fn smoother_half_width(fc: f64, fs: f64) -> usize {
    (1.2 * fs / fc).ceil() as usize
}

/// Per-joint accumulators for the stacked least-squares problem.
#[derive(Debug, Clone, Copy, Default)]
struct JointAccum {
    sss: f64,
    ssv: f64,
    svv: f64,
    sy: f64,
    vy: f64,
    yy: f64,
    y_sum: f64,
    count: usize,
}

/// Estimate Coulomb and viscous friction coefficients from hung-exoskeleton
/// chirp data by per-joint linear least squares on the flight-state
/// equations of motion.
///
/// Per sample and actuated joint j the flight EOM gives
///
/// ```text
///   tau_motor_j - (M qddot + b + g)_j = c0_j sign(qdot_j) + c1_j qdot_j
/// ```
///
/// with velocities and accelerations from repeated nine-point numerical
/// differentiation of the recorded positions. The target and the regressors
/// are passed through the same zero-phase low-pass, which leaves the linear
/// relation intact on noiseless data. Samples near velocity reversals (any
/// joint: the mass matrix couples the Coulomb acceleration jump into every
/// row) and samples slower than `min_speed` are excluded.
pub fn estimate_friction(
    model: &ExoModel,
    data: &IdDataset,
    opts: &IdOptions,
) -> Result<(FrictionParams, [JointFit; 4])> {
    estimate_friction_multi(model, std::slice::from_ref(data), opts)
}

/// Joint least-squares estimate over several recordings (one per chirp
/// amplitude in the standard protocol).
pub fn estimate_friction_multi(
    model: &ExoModel,
    datasets: &[IdDataset],
    opts: &IdOptions,
) -> Result<(FrictionParams, [JointFit; 4])> {
    if datasets.is_empty() {
        return Err(ExoError::InvalidArgument(
            "friction identification needs at least one dataset".into(),
        ));
    }
    let mut acc = [JointAccum::default(); 4];
    for data in datasets {
        accumulate_dataset(model, data, opts, &mut acc)?;
    }

    let mut c0 = [0.0; 4];
    let mut c1 = [0.0; 4];
    let mut fits = [JointFit {
        c0: 0.0,
        c1: 0.0,
        r_squared: 0.0,
        samples: 0,
    }; 4];
    for j in 0..4 {
        let a = &acc[j];
        if a.count < 16 {
            return Err(ExoError::Unidentifiable {
                joint: JOINT_NAMES[j].into(),
                reason: format!("only {} usable samples after masking", a.count),
            });
        }
        let gram = nalgebra::Matrix2::new(a.sss, a.ssv, a.ssv, a.svv);
        let scale = a.sss.max(a.svv).max(1e-300);
        if gram.determinant() <= 1e-12 * scale * scale || a.sss <= 1e-12 || a.svv <= 1e-12 {
            return Err(ExoError::Unidentifiable {
                joint: JOINT_NAMES[j].into(),
                reason: "regressor matrix is rank-deficient (velocity never changes sign, \
                         or no motion)"
                    .into(),
            });
        }
        let sol = gram
            .lu()
            .solve(&Vector2::new(a.sy, a.vy))
            .ok_or_else(|| ExoError::Unidentifiable {
                joint: JOINT_NAMES[j].into(),
                reason: "normal equations singular".into(),
            })?;
        c0[j] = sol[0];
        c1[j] = sol[1];
        // R^2 from the accumulated sums:
        // SS_res = yy - 2 c.(sy, vy) + c^T Gram c, SS_tot = yy - n ybar^2.
        let ss_res = a.yy - 2.0 * (sol[0] * a.sy + sol[1] * a.vy)
            + sol[0] * sol[0] * a.sss
            + 2.0 * sol[0] * sol[1] * a.ssv
            + sol[1] * sol[1] * a.svv;
        let ss_tot = a.yy - a.y_sum * a.y_sum / a.count as f64;
        fits[j] = JointFit {
            c0: sol[0],
            c1: sol[1],
            r_squared: if ss_tot > 0.0 {
                1.0 - (ss_res / ss_tot).max(0.0)
            } else {
                1.0
            },
            samples: a.count,
        };
    }
    Ok((FrictionParams { c0, c1 }, fits))
}

fn accumulate_dataset(
    model: &ExoModel,
    data: &IdDataset,
    opts: &IdOptions,
    acc: &mut [JointAccum; 4],
) -> Result<()> {
    data.validate()?;
    let n = data.time.len();
    let dt = data.dt();
    let fs = 1.0 / dt;

    // Differentiate each coordinate twice.
    let mut qdot = vec![[0.0; 7]; n];
    let mut qddot = vec![[0.0; 7]; n];
    for c in 0..7 {
        let pos: Vec<f64> = data.q_fly.iter().map(|q| q[c]).collect();
        let vel = differentiate9(&pos, dt)?;
        let qacc = differentiate9(&vel, dt)?;
        for i in 0..n {
            qdot[i][c] = vel[i];
            qddot[i][c] = qacc[i];
        }
    }

    // Per-sample EOM residual target and regressors for each joint.
    let mut target = vec![[0.0; 4]; n];
    let mut reg_sign = vec![[0.0; 4]; n];
    let mut reg_vel = vec![[0.0; 4]; n];
    for i in 0..n {
        let coords = GenCoords::flight(data.q_fly[i], qdot[i])?;
        let terms = dynamics_terms(model, &coords, &SupportModel::Flight)?;
        let qdd = DVector::from_row_slice(&qddot[i]);
        let eom = &terms.m * qdd + &terms.b + &terms.g;
        for j in 0..4 {
            let row = 3 + j; // actuated coordinates theta1..theta4
            target[i][j] = data.motor_torque[i][j] - eom[row];
            reg_sign[i][j] = sign(qdot[i][row]);
            reg_vel[i][j] = qdot[i][row];
        }
    }

    // The kinetic-friction relation cannot be trusted near velocity
    // reversals (the Coulomb jump is smeared by the difference stencils)
    // nor in low-speed bands, where the joint sticks and chatters below the
    // sample resolution so that the recorded velocity never visibly crosses
    // zero. Both kinds of bad sample contaminate neighbors within the
    // smoother support plus the doubled stencil radius, so the exclusion is
    // dilated by that reach; the mass matrix couples every joint's
    // contamination into every row, so the mask is shared.
    let half_width = smoother_half_width(opts.lowpass_cutoff_hz, fs);
    let reach = half_width + 8;
    let margin = ((opts.reversal_margin_s / dt).ceil() as usize).max(reach + 4);
    let mut keep_common = vec![true; n];
    let mut mask_around = |idx: usize, keep: &mut Vec<bool>, m: usize| {
        let lo = idx.saturating_sub(m);
        let hi = (idx + m).min(n);
        for k in &mut keep[lo..hi] {
            *k = false;
        }
    };
    for i in 1..n {
        for j in 0..4 {
            if sign(qdot[i][3 + j]) != sign(qdot[i - 1][3 + j]) {
                mask_around(i, &mut keep_common, margin);
                break;
            }
        }
    }
    for i in 0..n {
        if (0..4).any(|j| qdot[i][3 + j].abs() < opts.min_speed) {
            mask_around(i, &mut keep_common, reach + 4);
        }
    }
    // Boundary stencils and smoother edges.
    let edge = reach.max(8);
    for i in 0..n {
        if i < edge || i + edge >= n {
            keep_common[i] = false;
        }
    }

    for j in 0..4 {
        let y_raw: Vec<f64> = target.iter().map(|t| t[j]).collect();
        let s_raw: Vec<f64> = reg_sign.iter().map(|t| t[j]).collect();
        let v_raw: Vec<f64> = reg_vel.iter().map(|t| t[j]).collect();
        let y = fir_smooth(&y_raw, opts.lowpass_cutoff_hz, fs);
        let s = fir_smooth(&s_raw, opts.lowpass_cutoff_hz, fs);
        let v = fir_smooth(&v_raw, opts.lowpass_cutoff_hz, fs);
        for i in 0..n {
            if !keep_common[i] {
                continue;
            }
            let a = &mut acc[j];
            a.sss += s[i] * s[i];
            a.ssv += s[i] * v[i];
            a.svv += v[i] * v[i];
            a.sy += s[i] * y[i];
            a.vy += v[i] * y[i];
            a.yy += y[i] * y[i];
            a.y_sum += y[i];
            a.count += 1;
        }
    }
    Ok(())
}

/// Simulate a hung-exoskeleton chirp run and record it at `record_dt`.
///
/// The backpack is rigidly suspended (x0, y0, theta0 fixed), so only the
/// four joint coordinates move; the joints see the commanded chirp minus the
/// dissipative friction of `friction`. Integration substeps keep the
/// recorded trajectory consistent with the continuous dynamics well below
/// the identification tolerance.
pub fn synthesize_chirp_dataset(
    model: &ExoModel,
    friction: &FrictionParams,
    amplitudes: &[f64],
    period: f64,
    record_dt: f64,
    substeps: usize,
) -> Result<IdDataset> {
    let mut data = IdDataset {
        time: vec![],
        q_fly: vec![],
        motor_torque: vec![],
    };
    let hang = [0.0, 0.0, 0.0]; // x0, y0, theta0
    // The sweeps run back to back without resetting the state; the chirp is
    // zero at both sweep ends (sin(6 pi T) = 0 for the standard periods), so
    // the recorded positions and velocities stay continuous.
    let tau_at = |t: f64| -> [f64; 4] {
        let k = ((t / period).floor() as usize).min(amplitudes.len() - 1);
        let local = (t - k as f64 * period).clamp(0.0, period);
        let v = amplitudes[k] * (6.0 * std::f64::consts::PI * local * local / period).sin();
        [v; 4]
    };
    let mut q = [0.15, -0.3, 0.15, -0.3];
    let mut qd = [0.0; 4];
    let steps_per_sweep = (period / record_dt).round() as usize;
    let h = record_dt / substeps as f64;
    for i in 0..steps_per_sweep * amplitudes.len() {
        let t = i as f64 * record_dt;
        data.time.push(t);
        data.q_fly
            .push([hang[0], hang[1], hang[2], q[0], q[1], q[2], q[3]]);
        data.motor_torque.push(tau_at(t));
        for s in 0..substeps {
            let ts = t + s as f64 * h;
            rk4_joint_step(model, friction, &mut q, &mut qd, &tau_at, ts, h)?;
        }
    }
    data.validate()?;
    Ok(data)
}

/// Joint-space accelerations of the hung exoskeleton (backpack pinned).
fn joint_accel(
    model: &ExoModel,
    friction: &FrictionParams,
    q: &[f64; 4],
    qd: &[f64; 4],
    tau_motor: &[f64; 4],
) -> Result<[f64; 4]> {
    let coords = GenCoords::flight(
        [0.0, 0.0, 0.0, q[0], q[1], q[2], q[3]],
        [0.0, 0.0, 0.0, qd[0], qd[1], qd[2], qd[3]],
    )?;
    let terms = dynamics_terms(model, &coords, &SupportModel::Flight)?;
    let fric = friction_torque(friction, qd);
    let msub = terms.m.view((3, 3), (4, 4)).into_owned();
    let mut rhs = DVector::zeros(4);
    for j in 0..4 {
        rhs[j] = tau_motor[j] - fric[j] - terms.b[3 + j] - terms.g[3 + j];
    }
    let acc = msub
        .cholesky()
        .ok_or_else(|| ExoError::DegenerateConfiguration("joint mass matrix not PD".into()))?
        .solve(&rhs);
    Ok([acc[0], acc[1], acc[2], acc[3]])
}

fn rk4_joint_step(
    model: &ExoModel,
    friction: &FrictionParams,
    q: &mut [f64; 4],
    qd: &mut [f64; 4],
    tau_at: &impl Fn(f64) -> [f64; 4],
    t: f64,
    h: f64,
) -> Result<()> {
    let add = |a: &[f64; 4], b: &[f64; 4], s: f64| {
        [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s, a[3] + b[3] * s]
    };
    let (tau0, tau_h2, tau_h) = (tau_at(t), tau_at(t + h / 2.0), tau_at(t + h));
    let k1v = joint_accel(model, friction, q, qd, &tau0)?;
    let k1q = *qd;
    let k2v = joint_accel(
        model,
        friction,
        &add(q, &k1q, h / 2.0),
        &add(qd, &k1v, h / 2.0),
        &tau_h2,
    )?;
    let k2q = add(qd, &k1v, h / 2.0);
    let k3v = joint_accel(
        model,
        friction,
        &add(q, &k2q, h / 2.0),
        &add(qd, &k2v, h / 2.0),
        &tau_h2,
    )?;
    let k3q = add(qd, &k2v, h / 2.0);
    let k4v = joint_accel(model, friction, &add(q, &k3q, h), &add(qd, &k3v, h), &tau_h)?;
    let k4q = add(qd, &k3v, h);
    for j in 0..4 {
        q[j] += h / 6.0 * (k1q[j] + 2.0 * k2q[j] + 2.0 * k3q[j] + k4q[j]);
        qd[j] += h / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn friction_torque_examples() {
        let p = FrictionParams::nominal();
        let tau = friction_torque(&p, &[0.0; 4]);
        assert_eq!(tau, [0.0; 4]);
        // Left hip at 1 rad/s: 5.01 + 4.58.
        let tau = friction_torque(&p, &[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(tau[0], 9.59, epsilon = 1e-12);
        // Left knee at -2 rad/s: -(4.30) + 3.25 * (-2) = -10.80.
        let tau = friction_torque(&p, &[0.0, -2.0, 0.0, 0.0]);
        assert_relative_eq!(tau[1], -10.80, epsilon = 1e-12);
    }

    #[test]
    fn friction_torque_is_odd() {
        let p = FrictionParams::nominal();
        for v in [-3.0, -0.5, 0.0, 0.2, 2.7] {
            let plus = friction_torque(&p, &[v; 4]);
            let minus = friction_torque(&p, &[-v; 4]);
            for j in 0..4 {
                assert_relative_eq!(plus[j], -minus[j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn chirp_values() {
        assert_relative_eq!(chirp_torque(7.5, 60.0, 0.0).unwrap(), 0.0);
        let expected = 7.5 * (6.0 * std::f64::consts::PI / 60.0).sin();
        assert_relative_eq!(chirp_torque(7.5, 60.0, 1.0).unwrap(), expected, epsilon = 1e-12);
        assert!(chirp_torque(7.5, 60.0, 61.0).is_err());
        assert!(chirp_torque(7.5, 60.0, -0.1).is_err());
    }

    #[test]
    fn chirp_instantaneous_frequency_hits_3hz() {
        // Phase is 6 pi t^2 / T, so f(t) = (1/2pi) d(phase)/dt = 6 t / T;
        // at t = 30 s with T = 60 s the sweep reaches 3 Hz. Checked against
        // a numerical phase derivative of the signal.
        let (t, period) = (30.0, 60.0);
        assert_relative_eq!(6.0 * t / period, 3.0, epsilon = 1e-12);
        let h = 1e-6;
        let phase = |t: f64| 6.0 * std::f64::consts::PI * t * t / period;
        let f_num = (phase(t + h) - phase(t - h)) / (2.0 * h) / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(f_num, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn differentiate9_constant_and_polynomial() {
        let dt = 0.01;
        let n = 200;
        let constant: Vec<f64> = vec![3.7; n];
        for d in differentiate9(&constant, dt).unwrap() {
            assert_relative_eq!(d, 0.0, epsilon = 1e-12);
        }
        // t^5 has derivative 5 t^4, exact for the 9-point stencil.
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let sig: Vec<f64> = t.iter().map(|t| t.powi(5)).collect();
        let der = differentiate9(&sig, dt).unwrap();
        for i in 4..n - 4 {
            let exact = 5.0 * t[i].powi(4);
            let err = (der[i] - exact).abs() / exact.abs().max(1.0);
            assert!(err <= 1e-8, "err {err:.2e} at i={i}");
        }
    }

    #[test]
    fn differentiate9_sine() {
        let dt = 0.003;
        let n = 2000;
        let w = 2.0 * std::f64::consts::PI;
        let sig: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).sin()).collect();
        let der = differentiate9(&sig, dt).unwrap();
        let mut max_err = 0.0f64;
        for i in 4..n - 4 {
            let exact = w * (w * i as f64 * dt).cos();
            max_err = max_err.max((der[i] - exact).abs());
        }
        assert!(max_err <= 1e-6, "max interior error {max_err:.2e}");
    }

    #[test]
    fn differentiate9_too_short() {
        assert!(differentiate9(&[0.0; 8], 0.01).is_err());
    }

    #[test]
    fn lowpass_preserves_dc() {
        let sig = vec![2.5; 500];
        let out = lowpass_zero_phase(&sig, 10.0, 333.0).unwrap();
        for v in out {
            assert_relative_eq!(v, 2.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn lowpass_passband_and_stopband() {
        let fs = 333.0;
        let n = 4000;
        let mk = |f: f64| -> Vec<f64> {
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
                .collect()
        };
        // 1 Hz sine: amplitude preserved within 1%, phase shift <= 0.5 deg.
        let inp = mk(1.0);
        let out = lowpass_zero_phase(&inp, 10.0, fs).unwrap();
        // Least-squares fit of out against (sin, cos) of the input phase on
        // the interior.
        let (mut ss, mut sc, mut cs, mut cc) = (0.0, 0.0, 0.0, 0.0);
        let (mut sy, mut cy) = (0.0, 0.0);
        for i in n / 4..3 * n / 4 {
            let ph = 2.0 * std::f64::consts::PI * 1.0 * i as f64 / fs;
            let (s, c) = (ph.sin(), ph.cos());
            ss += s * s;
            sc += s * c;
            cs += s * c;
            cc += c * c;
            sy += s * out[i];
            cy += c * out[i];
        }
        let det = ss * cc - sc * cs;
        let a = (cc * sy - sc * cy) / det;
        let b = (ss * cy - cs * sy) / det;
        let amp = (a * a + b * b).sqrt();
        let phase_deg = b.atan2(a).to_degrees();
        assert!((amp - 1.0).abs() <= 0.01, "amplitude {amp}");
        assert!(phase_deg.abs() <= 0.5, "phase {phase_deg} deg");

        // 100 Hz sine: attenuated by at least 97%.
        let out = lowpass_zero_phase(&mk(100.0), 10.0, fs).unwrap();
        let peak = out[n / 4..3 * n / 4]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 0.03, "stopband leakage {peak}");
    }

    #[test]
    fn lowpass_rejects_cutoff_above_nyquist() {
        assert!(lowpass_zero_phase(&[0.0; 100], 200.0, 333.0).is_err());
    }

    #[test]
    fn zero_velocity_dataset_is_unidentifiable() {
        let model = ExoModel::nominal();
        let n = 400;
        let data = IdDataset {
            time: (0..n).map(|i| i as f64 * 0.003).collect(),
            q_fly: vec![[0.0, 0.0, 0.0, 0.1, -0.2, 0.1, -0.2]; n],
            motor_torque: vec![[1.0; 4]; n],
        };
        let err = estimate_friction(&model, &data, &IdOptions::default());
        assert!(matches!(err, Err(ExoError::Unidentifiable { .. })));
    }

    #[test]
    fn noiseless_round_trip_recovers_friction() {
        let model = ExoModel::nominal();
        let truth = FrictionParams::nominal();
        // Short sweep for the unit test; the acceptance suite runs the full
        // four-amplitude 60 s protocol.
        let data = synthesize_chirp_dataset(&model, &truth, &[10.0], 30.0, 0.003, 6).unwrap();
        let (est, fits) = estimate_friction(&model, &data, &IdOptions::default()).unwrap();
        for j in 0..4 {
            assert_relative_eq!(est.c0[j], truth.c0[j], epsilon = 1e-6);
            assert_relative_eq!(est.c1[j], truth.c1[j], epsilon = 1e-6);
            assert!(fits[j].r_squared > 0.999999);
        }
    }

    #[test]
    fn multi_dataset_estimate_combines_sweeps() {
        let model = ExoModel::nominal();
        let truth = FrictionParams::nominal();
        let a = synthesize_chirp_dataset(&model, &truth, &[7.5], 20.0, 0.003, 6).unwrap();
        let b = synthesize_chirp_dataset(&model, &truth, &[12.5], 20.0, 0.003, 6).unwrap();
        let (est, _) =
            estimate_friction_multi(&model, &[a, b], &IdOptions::default()).unwrap();
        for j in 0..4 {
            assert_relative_eq!(est.c0[j], truth.c0[j], epsilon = 1e-6);
            assert_relative_eq!(est.c1[j], truth.c1[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn csv_round_trip() {
        let model = ExoModel::nominal();
        let data = synthesize_chirp_dataset(
            &model,
            &FrictionParams::nominal(),
            &[7.5],
            1.0,
            0.003,
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = IdDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.time.len(), data.time.len());
        assert_eq!(back.q_fly, data.q_fly);
        assert_eq!(back.motor_torque, data.motor_torque);
    }
}
