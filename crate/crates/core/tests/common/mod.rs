//! Shared test oracles, independent of the implementation paths they check.

use exo_core::qp::{kkt_residuals, QpDuals, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// A random feasible least-squares QP: full-column-rank objective, optional
/// equality row, up to `max_ineq` inequalities all satisfied by a known
/// interior point.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, max_ineq: usize) -> QpProblem {
    let n = rng.random_range(2..=4);
    let rows = n + 1;
    let mut c = DMatrix::zeros(rows, n);
    for v in c.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    // Keep the least-squares Hessian well conditioned.
    for i in 0..n {
        c[(i, i)] += 1.5;
    }
    let d = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

    let mut problem = QpProblem::least_squares(c, d);
    if rng.random_bool(0.5) {
        let a = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * &x0;
        problem = problem.with_eq(a, b);
    }
    let m_in = rng.random_range(0..=max_ineq);
    if m_in > 0 {
        let dmat = DMatrix::from_fn(m_in, n, |_, _| rng.random_range(-1.0..1.0));
        let f = &dmat * &x0 + DVector::from_fn(m_in, |_, _| rng.random_range(0.05..1.5));
        problem = problem.with_ineq(dmat, f);
    }
    problem
}

/// Brute-force reference solution: enumerate every subset of inequalities
/// as the active set, solve the equality-constrained KKT system, keep the
/// feasible candidates with nonnegative multipliers, and return the best
/// objective value and its minimizer.
pub fn active_set_oracle(problem: &QpProblem) -> Option<(f64, DVector<f64>)> {
    let n = problem.num_vars();
    let m_eq = problem.a_eq.nrows();
    let m_in = problem.d_ineq.nrows();
    let p = problem.c.transpose() * &problem.c * 2.0;
    let q = -(problem.c.transpose() * &problem.d) * 2.0;

    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u64..(1u64 << m_in) {
        let active: Vec<usize> = (0..m_in).filter(|i| mask >> i & 1 == 1).collect();
        let ma = m_eq + active.len();
        let mut kkt = DMatrix::zeros(n + ma, n + ma);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        let mut rhs = DVector::zeros(n + ma);
        rhs.rows_mut(0, n).copy_from(&(-&q));
        for r in 0..m_eq {
            for c in 0..n {
                kkt[(n + r, c)] = problem.a_eq[(r, c)];
                kkt[(c, n + r)] = problem.a_eq[(r, c)];
            }
            rhs[n + r] = problem.b_eq[r];
        }
        for (k, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + m_eq + k, c)] = problem.d_ineq[(i, c)];
                kkt[(c, n + m_eq + k)] = problem.d_ineq[(i, c)];
            }
            rhs[n + m_eq + k] = problem.f_ineq[i];
        }
        let Some(sol) = kkt.clone().full_piv_lu().solve(&rhs) else {
            continue;
        };
        // Singular systems can "solve" inaccurately; verify.
        if (kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let mut mu = DVector::zeros(m_in);
        let mut ok = true;
        for (k, &i) in active.iter().enumerate() {
            let m = sol[n + m_eq + k];
            if m < -1e-9 {
                ok = false;
                break;
            }
            mu[i] = m.max(0.0);
        }
        if !ok {
            continue;
        }
        let duals = QpDuals {
            lambda: sol.rows(n, m_eq).into_owned(),
            mu,
        };
        let res = kkt_residuals(problem, &x, &duals);
        if res.primal_ineq > 1e-9 || res.primal_eq > 1e-9 || res.dual > 1e-7 {
            continue;
        }
        let obj = (&problem.c * &x - &problem.d).norm_squared();
        if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
            best = Some((obj, x));
        }
    }
    best
}
