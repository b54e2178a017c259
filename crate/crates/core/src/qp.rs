//! Small dense convex QP solver for least-squares objectives with linear
//! equality and inequality constraints.
//!
//! ```text
//!   min ||C x - d||^2   s.t.  A x = b,  D x <= f
//! ```
//!
//! The solver is a first-order operator-splitting (ADMM) iteration on the
//! equivalent form `min 1/2 x'Px + q'x  s.t.  l <= Gx <= u` with
//! `P = C'C`, `G = [A; D]`, equalities as two-sided bounds, and a higher
//! penalty weight on equality rows. Once the iterates are close, an
//! active-set polish solves the reduced KKT system directly, which brings
//! the residuals to machine precision; optimality is only reported when the
//! full KKT residuals meet the tolerance. Everything is deterministic:
//! identical inputs and warm starts produce bit-identical results.
//!
//! Primal infeasibility is declared from the diverging dual direction (the
//! standard splitting-method certificate), with a hard cap on the dual
//! magnitude as a backstop.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ExoError, Result};

/// Least-squares QP with linear equality and inequality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Objective matrix: minimize `||c x - d||^2`.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Equality constraints `a_eq x = b_eq` (may have zero rows).
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Inequality constraints `d_ineq x <= f_ineq` (may have zero rows).
    pub d_ineq: DMatrix<f64>,
    pub f_ineq: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained least-squares problem.
    pub fn least_squares(c: DMatrix<f64>, d: DVector<f64>) -> Self {
        let n = c.ncols();
        Self {
            c,
            d,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            d_ineq: DMatrix::zeros(0, n),
            f_ineq: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, d: DMatrix<f64>, f: DVector<f64>) -> Self {
        self.d_ineq = d;
        self.f_ineq = f;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.c.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let check = |name: &'static str, rows: usize, cols: usize, rhs: usize| -> Result<()> {
            if cols != n {
                return Err(ExoError::DimensionMismatch {
                    what: name,
                    expected: n,
                    got: cols,
                });
            }
            if rows != rhs {
                return Err(ExoError::DimensionMismatch {
                    what: name,
                    expected: rows,
                    got: rhs,
                });
            }
            Ok(())
        };
        check("objective", self.c.nrows(), self.c.ncols(), self.d.len())?;
        check("equality constraints", self.a_eq.nrows(), self.a_eq.ncols(), self.b_eq.len())?;
        check(
            "inequality constraints",
            self.d_ineq.nrows(),
            self.d_ineq.ncols(),
            self.f_ineq.len(),
        )?;
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.d.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.d_ineq.iter().all(|v| v.is_finite())
            && self.f_ineq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ExoError::NonFinite("QP problem data"));
        }
        Ok(())
    }
}

/// Termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// KKT residuals below the solver tolerance.
    Optimal,
    /// Iteration cap reached before the tolerance was met.
    MaxIter,
    /// Primal infeasibility certificate found.
    Infeasible,
}

/// KKT residuals at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// max |A x - b|.
    pub primal_eq: f64,
    /// max(0, max (D x - f)).
    pub primal_ineq: f64,
    /// Stationarity: max |P x + q + A' lambda + D' mu| (plus any negative
    /// part of mu, which a valid multiplier must not have).
    pub dual: f64,
    /// Complementary slackness: max |mu_i (D x - f)_i|.
    pub comp_slack: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.dual)
            .max(self.comp_slack)
    }
}

/// Lagrange multipliers: `lambda` for equalities (free sign), `mu` for
/// inequalities (nonnegative at an optimum).
#[derive(Debug, Clone, PartialEq)]
pub struct QpDuals {
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub duals: QpDuals,
    /// Objective value ||C x - d||^2 at `x`.
    pub objective: f64,
}

/// Solver settings. The penalty is applied 1000x stronger on equality rows.
#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Base ADMM penalty.
    pub rho: f64,
    /// Convergence tolerance on all KKT residuals.
    pub tolerance: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Penalty is rescaled (and polish attempted) every this many iterations.
    pub adapt_interval: usize,
    /// Over-relaxation factor.
    pub relaxation: f64,
    /// Tikhonov term keeping the x-update well posed.
    pub sigma: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            tolerance: 1e-8,
            max_iter: 4000,
            adapt_interval: 25,
            relaxation: 1.6,
            sigma: 1e-6,
        }
    }
}

/// Warm-start data, typically the previous control step's solution.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(s: &QpSolution) -> Self {
        Self {
            x: s.x.clone(),
            lambda: s.duals.lambda.clone(),
            mu: s.duals.mu.clone(),
        }
    }
}

/// KKT residuals of a candidate primal/dual pair.
pub fn kkt_residuals(problem: &QpProblem, x: &DVector<f64>, duals: &QpDuals) -> KktResiduals {
    let p_grad = problem.c.transpose() * (&problem.c * x - &problem.d) * 2.0;
    let mut stat = p_grad;
    if problem.a_eq.nrows() > 0 {
        stat += problem.a_eq.transpose() * &duals.lambda;
    }
    if problem.d_ineq.nrows() > 0 {
        stat += problem.d_ineq.transpose() * &duals.mu;
    }
    let primal_eq = if problem.a_eq.nrows() > 0 {
        (&problem.a_eq * x - &problem.b_eq).amax()
    } else {
        0.0
    };
    let (mut primal_ineq, mut comp) = (0.0f64, 0.0f64);
    if problem.d_ineq.nrows() > 0 {
        let slack = &problem.d_ineq * x - &problem.f_ineq;
        for i in 0..slack.len() {
            primal_ineq = primal_ineq.max(slack[i]);
            comp = comp.max((duals.mu[i] * slack[i]).abs());
        }
    }
    // Fold negative multipliers into the dual residual: a certificate of
    // optimality requires mu >= 0.
    let mu_neg = duals.mu.iter().fold(0.0f64, |m, &v| m.max(-v));
    KktResiduals {
        primal_eq,
        primal_ineq: primal_ineq.max(0.0),
        dual: stat.amax().max(mu_neg),
        comp_slack: comp,
    }
}

/// Dense operator-splitting QP solver; owns no problem state, so one
/// instance can be reused across calls (one instance per thread).
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
        problem.validate()?;
        let n = problem.num_vars();
        let m_eq = problem.a_eq.nrows();
        let m_in = problem.d_ineq.nrows();
        let m = m_eq + m_in;
        let s = &self.settings;

        let p = problem.c.transpose() * &problem.c * 2.0;
        let q = -(problem.c.transpose() * &problem.d) * 2.0;

        // Unconstrained least squares reduces to the normal equations.
        if m == 0 {
            let x = solve_psd_or_pinv(&p, &(-&q));
            let duals = QpDuals {
                lambda: DVector::zeros(0),
                mu: DVector::zeros(0),
            };
            let kkt = kkt_residuals(problem, &x, &duals);
            let objective = (&problem.c * &x - &problem.d).norm_squared();
            let status = if kkt.max() <= s.tolerance {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIter
            };
            return Ok(QpSolution {
                x,
                status,
                iterations: 0,
                kkt,
                duals,
                objective,
            });
        }

        // Stack constraints as l <= Gx <= u.
        let mut g = DMatrix::zeros(m, n);
        g.view_mut((0, 0), (m_eq, n)).copy_from(&problem.a_eq);
        g.view_mut((m_eq, 0), (m_in, n)).copy_from(&problem.d_ineq);
        let mut l = DVector::from_element(m, f64::NEG_INFINITY);
        let mut u = DVector::zeros(m);
        l.rows_mut(0, m_eq).copy_from(&problem.b_eq);
        u.rows_mut(0, m_eq).copy_from(&problem.b_eq);
        u.rows_mut(m_eq, m_in).copy_from(&problem.f_ineq);

        let mut rho = DVector::from_element(m, s.rho);
        for i in 0..m_eq {
            rho[i] = s.rho * 1e3;
        }

        let mut x = warm.map(|w| w.x.clone()).unwrap_or_else(|| DVector::zeros(n));
        if x.len() != n {
            return Err(ExoError::DimensionMismatch {
                what: "warm start",
                expected: n,
                got: x.len(),
            });
        }
        let mut y = DVector::zeros(m);
        if let Some(w) = warm {
            if w.lambda.len() == m_eq && w.mu.len() == m_in {
                y.rows_mut(0, m_eq).copy_from(&w.lambda);
                y.rows_mut(m_eq, m_in).copy_from(&w.mu);
            }
        }
        let mut z = (&g * &x).map(|v| v).zip_zip_map(&l, &u, |v, lo, hi| v.clamp(lo, hi));

        let mut chol = factor(&p, &g, &rho, s.sigma)?;
        let mut best: Option<QpSolution> = None;

        for iter in 1..=s.max_iter {
            // x update.
            let rhs = &x * s.sigma - &q + g.transpose() * (rho.component_mul(&z) - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &g * &x_tilde;
            // Relaxed updates: the projection sees the scaled dual, the dual
            // step does not.
            x = &x_tilde * s.relaxation + &x * (1.0 - s.relaxation);
            let h = &z_tilde * s.relaxation + &z * (1.0 - s.relaxation);
            let mut v = h.clone();
            for i in 0..m {
                v[i] += y[i] / rho[i];
            }
            let z_new = v.zip_zip_map(&l, &u, |vi, lo, hi| vi.clamp(lo, hi));
            let dy = rho.component_mul(&(&h - &z_new));
            y += &dy;
            z = z_new;

            // Infeasibility certificate from the dual direction.
            if is_primal_infeasible(&g, &l, &u, &dy) || y.amax() > 1e10 {
                let duals = split_duals(&y, m_eq, m_in);
                let kkt = kkt_residuals(problem, &x, &duals);
                let objective = (&problem.c * &x - &problem.d).norm_squared();
                return Ok(QpSolution {
                    x,
                    status: QpStatus::Infeasible,
                    iterations: iter,
                    kkt,
                    duals,
                    objective,
                });
            }

            let r_prim = (&g * &x - &z).amax();
            let r_dual = (&p * &x + &q + g.transpose() * &y).amax();
            let near = r_prim <= 1e-4 && r_dual <= 1e-4;
            let at_adapt = iter % s.adapt_interval == 0;

            if near || at_adapt || (r_prim <= s.tolerance && r_dual <= s.tolerance) {
                // Try to finish with an active-set polish.
                if near || (r_prim <= s.tolerance && r_dual <= s.tolerance) {
                    if let Some(sol) =
                        self.polish(problem, &p, &q, &g, &u, m_eq, &x, &y, iter)
                    {
                        if sol.kkt.max() <= s.tolerance {
                            return Ok(sol);
                        }
                        best = Some(sol);
                    }
                }
                if r_prim <= s.tolerance && r_dual <= s.tolerance {
                    let duals = split_duals(&y, m_eq, m_in);
                    let kkt = kkt_residuals(problem, &x, &duals);
                    let objective = (&problem.c * &x - &problem.d).norm_squared();
                    let sol = QpSolution {
                        x: x.clone(),
                        status: if kkt.max() <= s.tolerance {
                            QpStatus::Optimal
                        } else {
                            QpStatus::MaxIter
                        },
                        iterations: iter,
                        kkt,
                        duals,
                        objective,
                    };
                    if sol.status == QpStatus::Optimal {
                        return Ok(sol);
                    }
                    best = Some(sol);
                }
            }

            if at_adapt {
                // Adaptive penalty rescaling.
                let denom = (&p * &x).amax().max(q.amax()).max((g.transpose() * &y).amax());
                let num = (&g * &x).amax().max(z.amax());
                let scaled_p = r_prim / num.max(1e-10);
                let scaled_d = r_dual / denom.max(1e-10);
                let ratio = (scaled_p / scaled_d.max(1e-16)).sqrt().clamp(1e-4, 1e4);
                if ratio > 5.0 || ratio < 0.2 {
                    let base = (rho[m_eq.min(m - 1)] * ratio).clamp(1e-6, 1e6);
                    for i in 0..m {
                        rho[i] = if i < m_eq { base * 1e3 } else { base };
                    }
                    chol = factor(&p, &g, &rho, s.sigma)?;
                }
            }
        }

        if let Some(sol) = best {
            return Ok(sol);
        }
        let duals = split_duals(&y, m_eq, m_in);
        let kkt = kkt_residuals(problem, &x, &duals);
        let objective = (&problem.c * &x - &problem.d).norm_squared();
        Ok(QpSolution {
            x,
            status: QpStatus::MaxIter,
            iterations: s.max_iter,
            kkt,
            duals,
            objective,
        })
    }

    /// Active-set polish: guess the active inequalities from the current
    /// iterates, solve the equality-constrained KKT system exactly, and
    /// accept the result only if it is primal feasible with nonnegative
    /// multipliers.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &self,
        problem: &QpProblem,
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        g: &DMatrix<f64>,
        u: &DVector<f64>,
        m_eq: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        iterations: usize,
    ) -> Option<QpSolution> {
        let n = problem.num_vars();
        let m_in = problem.d_ineq.nrows();
        let gx = g * x;
        let mut active: Vec<usize> = (0..m_eq).collect();
        for i in 0..m_in {
            let row = m_eq + i;
            if y[row] > 1e-10 || gx[row] >= u[row] - 1e-7 * (1.0 + u[row].abs()) {
                active.push(row);
            }
        }
        let ma = active.len();
        let mut kkt = DMatrix::zeros(n + ma, n + ma);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        for (k, &row) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + k, c)] = g[(row, c)];
                kkt[(c, n + k)] = g[(row, c)];
            }
        }
        let mut rhs = DVector::zeros(n + ma);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for (k, &row) in active.iter().enumerate() {
            rhs[n + k] = u[row];
        }
        let lu = kkt.full_piv_lu();
        let sol = lu.solve(&rhs)?;
        let x_pol = sol.rows(0, n).into_owned();
        let mut lambda = DVector::zeros(m_eq);
        let mut mu = DVector::zeros(m_in);
        for (k, &row) in active.iter().enumerate() {
            if row < m_eq {
                lambda[row] = sol[n + k];
            } else {
                // Clamp sub-tolerance negatives from the linear solve.
                mu[row - m_eq] = sol[n + k].max(0.0);
            }
        }
        let duals = QpDuals { lambda, mu };
        let kkt_res = kkt_residuals(problem, &x_pol, &duals);
        let objective = (&problem.c * &x_pol - &problem.d).norm_squared();
        Some(QpSolution {
            x: x_pol,
            status: if kkt_res.max() <= self.settings.tolerance {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIter
            },
            iterations,
            kkt: kkt_res,
            duals,
            objective,
        })
    }
}

fn split_duals(y: &DVector<f64>, m_eq: usize, m_in: usize) -> QpDuals {
    QpDuals {
        lambda: y.rows(0, m_eq).into_owned(),
        mu: y.rows(m_eq, m_in).into_owned(),
    }
}

fn factor(
    p: &DMatrix<f64>,
    g: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> Result<Cholesky<f64, Dyn>> {
    let n = p.ncols();
    let mut h = p.clone();
    for i in 0..n {
        h[(i, i)] += sigma;
    }
    let mut grg = DMatrix::zeros(n, n);
    for r in 0..g.nrows() {
        let row = g.row(r);
        for i in 0..n {
            let ri = rho[r] * row[i];
            if ri != 0.0 {
                for j in 0..n {
                    grg[(i, j)] += ri * row[j];
                }
            }
        }
    }
    h += grg;
    h.cholesky()
        .ok_or_else(|| ExoError::DegenerateConfiguration("ADMM KKT matrix not PD".into()))
}

/// Primal infeasibility certificate from a dual step direction `dy`:
/// `G' dy ~ 0` while the support function `u'[dy]_+ + l'[dy]_-` is negative.
fn is_primal_infeasible(
    g: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
) -> bool {
    let norm = dy.amax();
    if norm <= 1e-12 {
        return false;
    }
    let gt_dy = (g.transpose() * dy).amax();
    if gt_dy > 1e-10 * norm * g.amax().max(1.0) {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if u[i].is_finite() {
                support += u[i] * dy[i];
            } else {
                return false;
            }
        } else if dy[i] < 0.0 {
            if l[i].is_finite() {
                support += l[i] * dy[i];
            } else {
                return false;
            }
        }
    }
    support < -1e-10 * norm
}

/// Solve `P x = rhs` with P symmetric PSD: Cholesky when definite, minimum
/// norm via SVD otherwise.
fn solve_psd_or_pinv(p: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = p.clone().cholesky() {
        return ch.solve(rhs);
    }
    let svd = p.clone().svd(true, true);
    svd.solve(rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(p.ncols()))
}

trait ZipZipMap {
    fn zip_zip_map(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> DVector<f64>;
}

impl ZipZipMap for DVector<f64> {
    fn zip_zip_map(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| f(self[i], a[i], b[i]))
    }
}
