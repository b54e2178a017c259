//! Planar kinematics of the five-link mechanism.
//!
//! Every point of interest (link CoM, ankle) is expressed as a chain of
//! segments
//!
//! ```text
//!   p(q) = p_base + sum_k  len_k * d(phi_k),    phi_k = a_k . q + c_k
//! ```
//!
//! with the unit direction `d(phi) = (sin phi, -cos phi)` (phi measured CCW
//! from straight down; the constant `pi` offset flips a segment to point up
//! the chain). Because `d' = (cos, sin)` and `d'' = -d`, translational
//! Jacobians and their time derivatives have closed forms:
//!
//! ```text
//!   J    = sum_k len_k * d'(phi_k) a_k^T
//!   Jdot = sum_k len_k * (-d(phi_k)) (a_k . qdot) a_k^T
//! ```
//!
//! Rotational Jacobians are the constant rows `a_k`, so their time
//! derivative vanishes (planar mechanism).

use nalgebra::{DMatrix, DVector, RowDVector, Vector2};

use crate::error::{ExoError, Result};
use crate::model::coords::{GenCoords, Side, SupportModel};
use crate::model::params::ExoModel;

/// One segment of a kinematic chain.
#[derive(Debug, Clone)]
struct Term {
    len: f64,
    /// Coefficients of the absolute segment angle in the generalized
    /// coordinates.
    coeffs: DVector<f64>,
    /// Constant angle offset, rad.
    offset: f64,
}

/// A point on the mechanism as a chain of rotated segments.
#[derive(Debug, Clone)]
pub struct PointChain {
    n: usize,
    /// Flight chains translate with the floating base (coordinates 0, 1).
    floating_base: bool,
    terms: Vec<Term>,
}

fn dir(phi: f64) -> Vector2<f64> {
    Vector2::new(phi.sin(), -phi.cos())
}

fn dir_prime(phi: f64) -> Vector2<f64> {
    Vector2::new(phi.cos(), phi.sin())
}

impl PointChain {
    fn new(n: usize, floating_base: bool) -> Self {
        Self {
            n,
            floating_base,
            terms: Vec::new(),
        }
    }

    fn push(mut self, len: f64, coeff_indices: &[usize], offset: f64) -> Self {
        let mut coeffs = DVector::zeros(self.n);
        for &i in coeff_indices {
            coeffs[i] = 1.0;
        }
        self.terms.push(Term {
            len,
            coeffs,
            offset,
        });
        self
    }

    pub fn position(&self, q: &DVector<f64>) -> Vector2<f64> {
        let mut p = if self.floating_base {
            Vector2::new(q[0], q[1])
        } else {
            Vector2::zeros()
        };
        for t in &self.terms {
            let phi = t.coeffs.dot(q) + t.offset;
            p += t.len * dir(phi);
        }
        p
    }

    /// Translational Jacobian, 2 x n.
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, self.n);
        if self.floating_base {
            j[(0, 0)] = 1.0;
            j[(1, 1)] = 1.0;
        }
        for t in &self.terms {
            let phi = t.coeffs.dot(q) + t.offset;
            let dp = dir_prime(phi) * t.len;
            for c in 0..self.n {
                if t.coeffs[c] != 0.0 {
                    j[(0, c)] += dp.x * t.coeffs[c];
                    j[(1, c)] += dp.y * t.coeffs[c];
                }
            }
        }
        j
    }

    /// Time derivative of the translational Jacobian (analytic).
    pub fn jacobian_dot(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        let mut jd = DMatrix::zeros(2, self.n);
        for t in &self.terms {
            let phi = t.coeffs.dot(q) + t.offset;
            let phidot = t.coeffs.dot(qdot);
            let dd = -dir(phi) * (t.len * phidot);
            for c in 0..self.n {
                if t.coeffs[c] != 0.0 {
                    jd[(0, c)] += dd.x * t.coeffs[c];
                    jd[(1, c)] += dd.y * t.coeffs[c];
                }
            }
        }
        jd
    }
}

/// CoM kinematics of every body in a support model's link set.
#[derive(Debug, Clone)]
pub struct ComKinematics {
    /// CoM positions, m, relative to the support root (pinned ankle, hip
    /// junction for flight/simplified-swing).
    pub com: Vec<Vector2<f64>>,
    /// Translational CoM Jacobians, 2 x n.
    pub j_trans: Vec<DMatrix<f64>>,
    /// Analytic time derivatives of `j_trans`.
    pub j_trans_dot: Vec<DMatrix<f64>>,
    /// Rotational Jacobian rows (constant in q), 1 x n.
    pub j_rot: Vec<RowDVector<f64>>,
    /// Masses of the bodies, matching the vectors above.
    pub masses: Vec<f64>,
    /// CoM inertias of the bodies.
    pub inertias: Vec<f64>,
}

struct BodyChain {
    chain: PointChain,
    j_rot: RowDVector<f64>,
    mass: f64,
    inertia: f64,
}

fn rot_row(n: usize, idx: &[usize]) -> RowDVector<f64> {
    let mut r = RowDVector::zeros(n);
    for &i in idx {
        r[i] = 1.0;
    }
    r
}

/// Body chains for a whole-body support rooted at one stance ankle.
///
/// Stance coordinate indices: 0 backpack pitch, (1, 2) left hip/knee,
/// (3, 4) right hip/knee.
fn stance_body_chains(model: &ExoModel, stance: Side) -> Vec<BodyChain> {
    let (sh, sk) = stance.stance_indices();
    let (wh, wk) = stance.other().stance_indices();
    let (st, ss, wt, ws) = match stance {
        Side::Left => (
            &model.left_thigh,
            &model.left_shank,
            &model.right_thigh,
            &model.right_shank,
        ),
        Side::Right => (
            &model.right_thigh,
            &model.right_shank,
            &model.left_thigh,
            &model.left_shank,
        ),
    };
    use std::f64::consts::PI;
    let n = 5;
    // Ankle -> knee -> hip along the stance leg (segments point up: +pi).
    let up_shank = (ss.length, vec![0, sh, sk]);
    let up_thigh = (st.length, vec![0, sh]);
    let hip = |c: PointChain| {
        c.push(up_shank.0, &up_shank.1, PI)
            .push(up_thigh.0, &up_thigh.1, PI)
    };

    let backpack = BodyChain {
        chain: hip(PointChain::new(n, false)).push(model.backpack.com_offset, &[0], PI),
        j_rot: rot_row(n, &[0]),
        mass: model.backpack.mass,
        inertia: model.backpack.com_inertia,
    };
    let stance_thigh = BodyChain {
        chain: PointChain::new(n, false)
            .push(ss.length, &[0, sh, sk], PI)
            .push(st.length - st.com_offset, &[0, sh], PI),
        j_rot: rot_row(n, &[0, sh]),
        mass: st.mass,
        inertia: st.com_inertia,
    };
    let stance_shank = BodyChain {
        chain: PointChain::new(n, false).push(ss.com_offset, &[0, sh, sk], PI),
        j_rot: rot_row(n, &[0, sh, sk]),
        mass: ss.mass,
        inertia: ss.com_inertia,
    };
    let swing_thigh = BodyChain {
        chain: hip(PointChain::new(n, false)).push(wt.com_offset, &[0, wh], 0.0),
        j_rot: rot_row(n, &[0, wh]),
        mass: wt.mass,
        inertia: wt.com_inertia,
    };
    let swing_shank = BodyChain {
        chain: hip(PointChain::new(n, false))
            .push(wt.length, &[0, wh], 0.0)
            .push(ws.length - ws.com_offset, &[0, wh, wk], 0.0),
        j_rot: rot_row(n, &[0, wh, wk]),
        mass: ws.mass,
        inertia: ws.com_inertia,
    };

    // Storage order is fixed: backpack, L thigh, L shank, R thigh, R shank.
    match stance {
        Side::Left => vec![
            backpack,
            stance_thigh,
            stance_shank,
            swing_thigh,
            swing_shank,
        ],
        Side::Right => vec![
            backpack,
            swing_thigh,
            swing_shank,
            stance_thigh,
            stance_shank,
        ],
    }
}

/// Body chains in the flight parameterization [x0, y0, theta0..theta4],
/// rooted at the floating hip junction.
fn flight_body_chains(model: &ExoModel) -> Vec<BodyChain> {
    let n = 7;
    let leg = |thigh: &crate::model::params::LinkParams,
               shank: &crate::model::params::LinkParams,
               h: usize,
               k: usize| {
        let t = BodyChain {
            chain: PointChain::new(n, true).push(thigh.com_offset, &[2, h], 0.0),
            j_rot: rot_row(n, &[2, h]),
            mass: thigh.mass,
            inertia: thigh.com_inertia,
        };
        let s = BodyChain {
            chain: PointChain::new(n, true)
                .push(thigh.length, &[2, h], 0.0)
                .push(shank.length - shank.com_offset, &[2, h, k], 0.0),
            j_rot: rot_row(n, &[2, h, k]),
            mass: shank.mass,
            inertia: shank.com_inertia,
        };
        (t, s)
    };
    let backpack = BodyChain {
        chain: PointChain::new(n, true).push(model.backpack.com_offset, &[2], std::f64::consts::PI),
        j_rot: rot_row(n, &[2]),
        mass: model.backpack.mass,
        inertia: model.backpack.com_inertia,
    };
    let (lt, ls) = leg(&model.left_thigh, &model.left_shank, 3, 4);
    let (rt, rs) = leg(&model.right_thigh, &model.right_shank, 5, 6);
    vec![backpack, lt, ls, rt, rs]
}

/// Body chains for the simplified per-leg double pendulum.
///
/// The 2-dim coordinates are that leg's (hip, knee); `trunk_pitch` fixes the
/// absolute orientation reference so the segment angles coincide with the
/// whole-body model's for matched configurations.
fn simplified_body_chains(model: &ExoModel, side: Side, trunk_pitch: f64, stance: bool) -> Vec<BodyChain> {
    use std::f64::consts::PI;
    let (thigh, shank) = match side {
        Side::Left => (&model.left_thigh, &model.left_shank),
        Side::Right => (&model.right_thigh, &model.right_shank),
    };
    let n = 2;
    if stance {
        // Rooted at the ankle; segments point up the chain.
        let t = BodyChain {
            chain: PointChain::new(n, false)
                .push(shank.length, &[0, 1], trunk_pitch + PI)
                .push(thigh.length - thigh.com_offset, &[0], trunk_pitch + PI),
            j_rot: rot_row(n, &[0]),
            mass: thigh.mass,
            inertia: thigh.com_inertia,
        };
        let s = BodyChain {
            chain: PointChain::new(n, false).push(shank.com_offset, &[0, 1], trunk_pitch + PI),
            j_rot: rot_row(n, &[0, 1]),
            mass: shank.mass,
            inertia: shank.com_inertia,
        };
        vec![t, s]
    } else {
        // Rooted at the hip.
        let t = BodyChain {
            chain: PointChain::new(n, false).push(thigh.com_offset, &[0], trunk_pitch),
            j_rot: rot_row(n, &[0]),
            mass: thigh.mass,
            inertia: thigh.com_inertia,
        };
        let s = BodyChain {
            chain: PointChain::new(n, false)
                .push(thigh.length, &[0], trunk_pitch)
                .push(shank.length - shank.com_offset, &[0, 1], trunk_pitch),
            j_rot: rot_row(n, &[0, 1]),
            mass: shank.mass,
            inertia: shank.com_inertia,
        };
        vec![t, s]
    }
}

fn body_chains(model: &ExoModel, support: &SupportModel) -> Result<Vec<BodyChain>> {
    match support {
        SupportModel::LeftStance => Ok(stance_body_chains(model, Side::Left)),
        SupportModel::RightStance => Ok(stance_body_chains(model, Side::Right)),
        SupportModel::Flight => Ok(flight_body_chains(model)),
        SupportModel::SimplifiedStance { side, trunk_pitch } => {
            Ok(simplified_body_chains(model, *side, *trunk_pitch, true))
        }
        SupportModel::SimplifiedSwing { side, trunk_pitch } => {
            Ok(simplified_body_chains(model, *side, *trunk_pitch, false))
        }
        SupportModel::DoubleStance { .. } => Err(ExoError::InvalidArgument(
            "double stance has no single kinematic root; use a stance-side support".into(),
        )),
    }
}

/// CoM positions and Jacobians of every body in the support's link set.
///
/// Whole-body supports return five bodies in the order backpack, left thigh,
/// left shank, right thigh, right shank; simplified supports return the
/// leg's thigh and shank.
pub fn com_kinematics(
    model: &ExoModel,
    coords: &GenCoords,
    support: &SupportModel,
) -> Result<ComKinematics> {
    support.check_coords(coords)?;
    let chains = body_chains(model, support)?;
    let mut out = ComKinematics {
        com: Vec::with_capacity(chains.len()),
        j_trans: Vec::with_capacity(chains.len()),
        j_trans_dot: Vec::with_capacity(chains.len()),
        j_rot: Vec::with_capacity(chains.len()),
        masses: Vec::with_capacity(chains.len()),
        inertias: Vec::with_capacity(chains.len()),
    };
    for b in &chains {
        out.com.push(b.chain.position(&coords.q));
        out.j_trans.push(b.chain.jacobian(&coords.q));
        out.j_trans_dot
            .push(b.chain.jacobian_dot(&coords.q, &coords.qdot));
        out.j_rot.push(b.j_rot.clone());
        out.masses.push(b.mass);
        out.inertias.push(b.inertia);
    }
    Ok(out)
}

fn ankle_chain(model: &ExoModel, support: &SupportModel, side: Side) -> Result<PointChain> {
    let leg = |n: usize, base: bool, hip_idx: usize, knee_idx: usize, trunk_idx: &[usize]| {
        let (thigh, shank) = match side {
            Side::Left => (&model.left_thigh, &model.left_shank),
            Side::Right => (&model.right_thigh, &model.right_shank),
        };
        let mut hip_coeffs = trunk_idx.to_vec();
        hip_coeffs.push(hip_idx);
        let mut knee_coeffs = hip_coeffs.clone();
        knee_coeffs.push(knee_idx);
        PointChain::new(n, base)
            .push(thigh.length, &hip_coeffs, 0.0)
            .push(shank.length, &knee_coeffs, 0.0)
    };
    match support {
        SupportModel::Flight => {
            let (h, k) = match side {
                Side::Left => (3, 4),
                Side::Right => (5, 6),
            };
            Ok(leg(7, true, h, k, &[2]))
        }
        SupportModel::LeftStance | SupportModel::RightStance => {
            let stance = if *support == SupportModel::LeftStance {
                Side::Left
            } else {
                Side::Right
            };
            if side == stance {
                // Pinned point: identically zero Jacobian.
                return Ok(PointChain::new(5, false));
            }
            use std::f64::consts::PI;
            let (sh, sk) = stance.stance_indices();
            let (h, k) = side.stance_indices();
            let (sthigh, sshank) = match stance {
                Side::Left => (&model.left_thigh, &model.left_shank),
                Side::Right => (&model.right_thigh, &model.right_shank),
            };
            let (wthigh, wshank) = match side {
                Side::Left => (&model.left_thigh, &model.left_shank),
                Side::Right => (&model.right_thigh, &model.right_shank),
            };
            Ok(PointChain::new(5, false)
                .push(sshank.length, &[0, sh, sk], PI)
                .push(sthigh.length, &[0, sh], PI)
                .push(wthigh.length, &[0, h], 0.0)
                .push(wshank.length, &[0, h, k], 0.0))
        }
        _ => Err(ExoError::InvalidArgument(
            "ankle Jacobian is defined for flight and single-stance supports".into(),
        )),
    }
}

/// Ankle position relative to the support root, m.
pub fn ankle_position(
    model: &ExoModel,
    coords: &GenCoords,
    side: Side,
    support: &SupportModel,
) -> Result<Vector2<f64>> {
    support.check_coords(coords)?;
    Ok(ankle_chain(model, support, side)?.position(&coords.q))
}

/// Contact Jacobian of an ankle: maps generalized rates to the ankle's
/// linear velocity (2 x n). In single stance the stance-side ankle is pinned
/// and its Jacobian is identically zero.
pub fn ankle_jacobian(
    model: &ExoModel,
    coords: &GenCoords,
    side: Side,
    support: &SupportModel,
) -> Result<DMatrix<f64>> {
    support.check_coords(coords)?;
    Ok(ankle_chain(model, support, side)?.jacobian(&coords.q))
}

/// Analytic time derivative of the ankle contact Jacobian.
pub fn ankle_jacobian_dot(
    model: &ExoModel,
    coords: &GenCoords,
    side: Side,
    support: &SupportModel,
) -> Result<DMatrix<f64>> {
    support.check_coords(coords)?;
    Ok(ankle_chain(model, support, side)?.jacobian_dot(&coords.q, &coords.qdot))
}

/// Orthonormal basis H (5 x 3) of the null space of the swing-ankle contact
/// Jacobian, so that J_swing * H = 0. During double stance, rates of the
/// form `qdot = H z` keep both feet stationary.
///
/// Errors with a degenerate-configuration report when rank(J_swing) < 2
/// (e.g. both legs fully extended and parallel, ankles coincident).
pub fn constraint_matrix(
    model: &ExoModel,
    coords: &GenCoords,
    swing_side: Side,
) -> Result<DMatrix<f64>> {
    let stance_support = match swing_side {
        Side::Right => SupportModel::LeftStance,
        Side::Left => SupportModel::RightStance,
    };
    let j = ankle_jacobian(model, coords, swing_side, &stance_support)?;

    let jjt = &j * j.transpose(); // 2 x 2
    let svals = jjt.clone().symmetric_eigen().eigenvalues;
    let (smax, smin) = (
        svals.max().max(0.0).sqrt(),
        svals.min().max(0.0).sqrt(),
    );
    if smin <= 1e-8 * smax.max(1.0) {
        return Err(ExoError::DegenerateConfiguration(format!(
            "swing-ankle Jacobian rank < 2 (singular values {smax:.3e}, {smin:.3e})"
        )));
    }

    // Projector onto null(J); its unit-eigenvalue eigenvectors give an
    // orthonormal basis.
    let inv = jjt
        .try_inverse()
        .ok_or_else(|| ExoError::DegenerateConfiguration("J J^T not invertible".into()))?;
    let proj = DMatrix::identity(5, 5) - j.transpose() * inv * &j;
    let eig = proj.symmetric_eigen();
    let mut cols: Vec<usize> = (0..5).collect();
    cols.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut h = DMatrix::zeros(5, 3);
    for (k, &c) in cols.iter().take(3).enumerate() {
        h.set_column(k, &eig.eigenvectors.column(c));
    }
    Ok(h)
}
