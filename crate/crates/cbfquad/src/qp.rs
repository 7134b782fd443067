//! Small dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    xᵀ H x + fᵀ x
//!     subject to  ℓ ⪯ A x ⪯ μ      (interval rows)
//!                 lo ⪯ x ⪯ hi      (box)
//! ```
//!
//! with H symmetric positive definite, by the dual active-set method of
//! Goldfarb and Idnani (1983): start at the unconstrained minimizer, then
//! repeatedly add the most violated constraint, taking primal/dual steps
//! and dropping blocking constraints until it is satisfied. The method
//! terminates exactly on strictly convex problems and needs no tuning,
//! which suits the 4–13 variable problems the safety filter produces. All
//! tie-breaking is by lowest constraint index, so identical inputs produce
//! identical outputs.
//!
//! Interval rows may have an infinite side; the box may be infinite too.
//! Infeasibility between rows and box surfaces as [`QpError::InfeasibleRows`];
//! [`solve_or_relax`] then retries with penalized slack variables, keeping
//! the box hard.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint-activity tolerance.
const FEAS_TOL: f64 = 1e-9;
/// Dependence/pivot tolerance for step directions.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("box bounds are inconsistent (lower > upper)")]
    InfeasibleBox,
    #[error("interval rows are infeasible within the box")]
    InfeasibleRows,
    #[error("hessian is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("inconsistent problem dimensions: {0}")]
    BadShape(String),
    #[error("numerical failure in QP solve: {0}")]
    Numerical(&'static str),
}

/// One two-sided row ℓ ≤ aᵀx ≤ μ. Either side may be infinite.
#[derive(Debug, Clone)]
pub struct IntervalRow {
    pub coeffs: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite quadratic term (objective xᵀHx + fᵀx).
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: Vec<IntervalRow>,
    pub box_lower: DVector<f64>,
    pub box_upper: DVector<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    /// Least-change problem: minimize (x − target)ᵀ W (x − target) for a
    /// diagonal weight matrix W.
    pub fn least_change(
        weights: &DVector<f64>,
        target: &DVector<f64>,
        rows: Vec<IntervalRow>,
        box_lower: DVector<f64>,
        box_upper: DVector<f64>,
    ) -> Self {
        let h = DMatrix::from_diagonal(weights);
        let f = -2.0 * (&h * target);
        Self { hessian: h, linear: f, rows, box_lower, box_upper }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if n == 0 || n > 16 {
            return Err(QpError::BadShape(format!(
                "{n} variables outside the small dense regime (1..=16)"
            )));
        }
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::BadShape("hessian shape".into()));
        }
        if self.box_lower.len() != n || self.box_upper.len() != n {
            return Err(QpError::BadShape("box shape".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(QpError::BadShape(format!("row {i} shape")));
            }
            if !(row.lower <= row.upper) {
                return Err(QpError::BadShape(format!("row {i} has lower > upper")));
            }
        }
        let sym = (&self.hessian - self.hessian.transpose()).abs().max();
        if !(sym <= 1e-12) {
            return Err(QpError::NotPositiveDefinite);
        }
        for j in 0..n {
            if !(self.box_lower[j] <= self.box_upper[j]) {
                return Err(QpError::InfeasibleBox);
            }
        }
        Ok(())
    }
}

/// Identifies one side of a constraint in [`QpSolution::active_set`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConstraintId {
    RowLower(usize),
    RowUpper(usize),
    BoxLower(usize),
    BoxUpper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// All interval rows and box bounds hold.
    Optimal,
    /// Rows were softened with penalized slacks; box bounds still hold.
    RelaxedOptimal,
    /// The box itself is empty; no solution exists.
    InfeasibleBox,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    /// Per-row violation magnitudes (zero at an optimal solution, the slack
    /// variable values at a relaxed one).
    pub slack: Vec<f64>,
    /// Max of stationarity, primal feasibility, dual feasibility and
    /// complementarity residuals.
    pub kkt_residual: f64,
    pub active_set: Vec<ConstraintId>,
}

/// One-sided view cᵀx ≥ d of the constraints, in deterministic order.
struct OneSided {
    id: ConstraintId,
    normal: DVector<f64>,
    rhs: f64,
}

fn one_sided_constraints(p: &QpProblem) -> Vec<OneSided> {
    let n = p.num_vars();
    let mut cons = Vec::new();
    for (i, row) in p.rows.iter().enumerate() {
        if row.lower.is_finite() {
            cons.push(OneSided {
                id: ConstraintId::RowLower(i),
                normal: row.coeffs.clone(),
                rhs: row.lower,
            });
        }
        if row.upper.is_finite() {
            cons.push(OneSided {
                id: ConstraintId::RowUpper(i),
                normal: -row.coeffs.clone(),
                rhs: -row.upper,
            });
        }
    }
    for j in 0..n {
        if p.box_lower[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            cons.push(OneSided { id: ConstraintId::BoxLower(j), normal: e, rhs: p.box_lower[j] });
        }
        if p.box_upper[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            cons.push(OneSided { id: ConstraintId::BoxUpper(j), normal: e, rhs: -p.box_upper[j] });
        }
    }
    cons
}

pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.num_vars();
    let grad_hessian = &p.hessian * 2.0;

    // Diagonal preconditioner: work in y = Dx with D = diag(G)^(1/2), so the
    // step metric has unit diagonal. Objective weights and slack penalties
    // can differ by many orders of magnitude; without this the dependence
    // test below cannot tell a small legitimate direction from noise.
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let g = grad_hessian[(i, i)];
        if !(g > 0.0) {
            return Err(QpError::NotPositiveDefinite);
        }
        scale[i] = g.sqrt();
    }
    let mut g_scaled = grad_hessian.clone();
    for i in 0..n {
        for j in 0..n {
            g_scaled[(i, j)] /= scale[i] * scale[j];
        }
    }
    let chol = g_scaled.cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut cons = one_sided_constraints(p);
    for c in &mut cons {
        for i in 0..n {
            c.normal[i] /= scale[i];
        }
    }
    let f_scaled = DVector::from_fn(n, |i, _| p.linear[i] / scale[i]);
    // Whitened normals ĉ = L⁻¹c turn the metric projection into a plain
    // orthogonal one: z = L⁻ᵀ(ĉ_p − Q Qᵀ ĉ_p) with Q from a QR of the
    // active ĉ columns. Normal equations would square the conditioning,
    // which matters once slack penalties and range weights coexist.
    let lower = chol.l();
    let whitened: Vec<DVector<f64>> = cons
        .iter()
        .map(|c| {
            lower
                .solve_lower_triangular(&c.normal)
                .expect("Cholesky factor is nonsingular")
        })
        .collect();
    let f_white = lower
        .solve_lower_triangular(&f_scaled)
        .expect("Cholesky factor is nonsingular");

    // Exact minimizer and multipliers for a fixed active set. In whitened
    // coordinates ŷ = Lᵀy the subproblem is min ½‖ŷ‖² + f̂ᵀŷ subject to
    // N̂ᵀŷ = d, whose solution through the thin QR N̂ = QR is
    //     ŷ = Q(Qᵀf̂ + R⁻ᵀd) − f̂,   λ = R⁻¹(Qᵀf̂ + R⁻ᵀd).
    // The active equalities then hold to orthogonality precision; stiff
    // penalty terms make the running iterates drift, so every accepted
    // active set is re-anchored here.
    let eqp_point = |active: &[usize]| -> Result<(DVector<f64>, DVector<f64>), QpError> {
        if active.is_empty() {
            return Ok((chol.solve(&(-&f_scaled)), DVector::zeros(0)));
        }
        let q = active.len();
        let mut nhat = DMatrix::zeros(n, q);
        let mut d_act = DVector::zeros(q);
        for (col, &ai) in active.iter().enumerate() {
            nhat.set_column(col, &whitened[ai]);
            d_act[col] = cons[ai].rhs;
        }
        let qr = nhat.qr();
        let qmat = qr.q();
        let w = qr
            .r()
            .tr_solve_upper_triangular(&d_act)
            .ok_or(QpError::Numerical("rank-deficient active set"))?
            + qmat.transpose() * &f_white;
        let lam = qr
            .r()
            .solve_upper_triangular(&w)
            .ok_or(QpError::Numerical("rank-deficient active set"))?;
        let yhat = &qmat * &w - &f_white;
        let y = lower
            .tr_solve_lower_triangular(&yhat)
            .expect("Cholesky factor is nonsingular");
        Ok((y, lam))
    };

    // Unconstrained minimizer of the (scaled) objective.
    let mut x = chol.solve(&(-&f_scaled));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let max_iter = 50 * (cons.len() + 1);
    let mut iter = 0usize;

    'outer: loop {
        // Most violated inactive constraint, relative tolerance, ties by
        // lowest index.
        let mut chosen: Option<usize> = None;
        let mut worst = -FEAS_TOL;
        for (k, c) in cons.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let viol = (c.normal.dot(&x) - c.rhs) / (1.0 + c.rhs.abs());
            if viol < worst {
                worst = viol;
                chosen = Some(k);
            }
        }
        let p_idx = match chosen {
            Some(k) => k,
            None => break 'outer,
        };
        let cp = cons[p_idx].normal.clone();
        let dp = cons[p_idx].rhs;
        let mut lam_p = 0.0;

        loop {
            iter += 1;
            if iter > max_iter {
                return Err(QpError::Numerical("iteration limit"));
            }
            // Step directions: z moves the primal point toward the new
            // constraint inside the manifold of the active ones, r is the
            // matching change of the active multipliers.
            let chat_p = &whitened[p_idx];
            let q = active.len();
            let (zhat, r) = if q == 0 {
                (chat_p.clone(), DVector::zeros(0))
            } else {
                let mut nhat = DMatrix::zeros(n, q);
                for (col, &ai) in active.iter().enumerate() {
                    nhat.set_column(col, &whitened[ai]);
                }
                let qr = nhat.qr();
                let coords = qr.q().transpose() * chat_p;
                let r = qr
                    .r()
                    .solve_upper_triangular(&coords)
                    .ok_or(QpError::Numerical("rank-deficient active set"))?;
                (chat_p - qr.q() * &coords, r)
            };
            // ‖ẑ‖/‖ĉ_p‖ is the fraction of the new normal outside the span
            // of the active ones, measured in the step metric. A (nearly)
            // dependent normal gives ≈ 0; treat it as a pure dual step so
            // the active set stays well conditioned.
            let independent = zhat.norm() > 1e-10 * chat_p.norm().max(PIVOT_TOL);
            let (z, czp) = if independent {
                let z = lower
                    .tr_solve_lower_triangular(&zhat)
                    .expect("Cholesky factor is nonsingular");
                (z, zhat.norm_squared())
            } else {
                (DVector::zeros(n), 0.0)
            };
            let step_to_feasibility = if independent {
                (dp - cp.dot(&x)) / czp
            } else {
                f64::INFINITY
            };
            let mut dual_limit = f64::INFINITY;
            let mut drop_pos = None;
            for pos in 0..q {
                if r[pos] > PIVOT_TOL {
                    let ratio = lambda[pos] / r[pos];
                    if ratio < dual_limit {
                        dual_limit = ratio;
                        drop_pos = Some(pos);
                    }
                }
            }
            let t = dual_limit.min(step_to_feasibility);
            if !t.is_finite() {
                return Err(QpError::InfeasibleRows);
            }
            if independent {
                x += &z * t;
            }
            for (pos, l) in lambda.iter_mut().enumerate() {
                *l -= t * r[pos];
            }
            lam_p += t;
            if t == step_to_feasibility {
                active.push(p_idx);
                lambda.push(lam_p);
                let (x_eq, _) = eqp_point(&active)?;
                x = x_eq;
                continue 'outer;
            }
            let pos = drop_pos.expect("finite dual step implies a blocking constraint");
            active.remove(pos);
            lambda.remove(pos);
        }
    }

    // Final multipliers from the terminal active set, not the running
    // iterates, so the reported residual reflects the returned point.
    let final_lambda: Vec<f64> = if active.is_empty() {
        Vec::new()
    } else {
        let (_, lam) = eqp_point(&active)?;
        lam.iter().copied().collect()
    };

    // Back to the original variables. The multipliers are unchanged by the
    // diagonal scaling.
    let x = DVector::from_fn(n, |i, _| x[i] / scale[i]);
    let cons = one_sided_constraints(p);
    let slack = row_violations(p, &x);
    let kkt_residual = kkt_residual_from_duals(p, &cons, &x, &active, &final_lambda);
    let mut ids: Vec<ConstraintId> = active.iter().map(|&k| cons[k].id).collect();
    ids.sort();
    Ok(QpSolution { x, status: SolveStatus::Optimal, slack, kkt_residual, active_set: ids })
}

fn row_violations(p: &QpProblem, x: &DVector<f64>) -> Vec<f64> {
    p.rows
        .iter()
        .map(|row| {
            let v = row.coeffs.dot(x);
            (row.lower - v).max(v - row.upper).max(0.0)
        })
        .collect()
}

fn kkt_residual_from_duals(
    p: &QpProblem,
    cons: &[OneSided],
    x: &DVector<f64>,
    active: &[usize],
    lambda: &[f64],
) -> f64 {
    // Stationarity: 2Hx + f = Σ λ_k c_k with λ ≥ 0 on active constraints.
    // Each component is scaled by the magnitudes entering it so the value
    // stays meaningful when penalty terms inflate the gradient.
    let grad0 = &p.hessian * 2.0 * x + &p.linear;
    let mut grad = grad0.clone();
    let mut grad_scale = 1.0 + grad0.amax();
    let mut residual: f64 = 0.0;
    for (&k, &l) in active.iter().zip(lambda.iter()) {
        grad -= &cons[k].normal * l;
        grad_scale = grad_scale.max(l.abs() * cons[k].normal.amax());
        // Dual feasibility and complementarity (active ⇒ equality).
        residual = residual.max((-l).max(0.0) / (1.0 + l.abs()));
        residual = residual
            .max((cons[k].normal.dot(x) - cons[k].rhs).abs() / (1.0 + cons[k].rhs.abs()));
    }
    residual = residual.max(grad.amax() / grad_scale);
    for c in cons {
        residual = residual.max((c.rhs - c.normal.dot(x)) / (1.0 + c.rhs.abs()));
    }
    residual
}

/// Soften every interval row with one slack variable: row i becomes
/// ℓ_i − s_i ≤ aᵀx ≤ μ_i + s_i with s_i ≥ 0 and penalty ρ s_i² added to
/// the objective. The box stays hard, so the result is feasible whenever
/// the box is non-empty.
pub fn relax_with_slacks(p: &QpProblem, rho: f64) -> QpProblem {
    relax_rows(p, rho, &vec![true; p.rows.len()])
}

/// [`relax_with_slacks`] restricted to the rows marked soft; the others
/// stay hard (physical realizability rows, for instance).
pub fn relax_rows(p: &QpProblem, rho: f64, soft: &[bool]) -> QpProblem {
    assert_eq!(soft.len(), p.rows.len(), "one soft flag per row");
    let n = p.num_vars();
    let m = soft.iter().filter(|s| **s).count();
    let mut hessian = DMatrix::zeros(n + m, n + m);
    hessian.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    for i in 0..m {
        hessian[(n + i, n + i)] = rho;
    }
    let mut linear = DVector::zeros(n + m);
    linear.rows_mut(0, n).copy_from(&p.linear);

    let mut rows = Vec::new();
    let mut slack_idx = 0usize;
    for (row, &is_soft) in p.rows.iter().zip(soft) {
        if !is_soft {
            let mut c = DVector::zeros(n + m);
            c.rows_mut(0, n).copy_from(&row.coeffs);
            rows.push(IntervalRow { coeffs: c, lower: row.lower, upper: row.upper });
            continue;
        }
        if row.lower.is_finite() {
            // aᵀx + s ≥ ℓ
            let mut c = DVector::zeros(n + m);
            c.rows_mut(0, n).copy_from(&row.coeffs);
            c[n + slack_idx] = 1.0;
            rows.push(IntervalRow { coeffs: c, lower: row.lower, upper: f64::INFINITY });
        }
        if row.upper.is_finite() {
            // aᵀx − s ≤ μ
            let mut c = DVector::zeros(n + m);
            c.rows_mut(0, n).copy_from(&row.coeffs);
            c[n + slack_idx] = -1.0;
            rows.push(IntervalRow { coeffs: c, lower: f64::NEG_INFINITY, upper: row.upper });
        }
        slack_idx += 1;
    }
    let mut box_lower = DVector::from_element(n + m, 0.0);
    box_lower.rows_mut(0, n).copy_from(&p.box_lower);
    let mut box_upper = DVector::from_element(n + m, f64::INFINITY);
    box_upper.rows_mut(0, n).copy_from(&p.box_upper);
    QpProblem { hessian, linear, rows, box_lower, box_upper }
}

/// Solve, falling back to the slack relaxation when the rows conflict with
/// the box. Rows whose `soft` flag is false stay hard through the
/// relaxation; an empty box still fails.
pub fn solve_or_relax(p: &QpProblem, rho: f64, soft: &[bool]) -> Result<QpSolution, QpError> {
    match solve(p) {
        Ok(sol) => Ok(sol),
        Err(QpError::InfeasibleRows) => {
            let relaxed = relax_rows(p, rho, soft);
            let sol = solve(&relaxed)?;
            let n = p.num_vars();
            let x = sol.x.rows(0, n).into_owned();
            // Slack variables were appended in soft-row order; hard rows
            // report zero slack.
            let mut slack = Vec::with_capacity(p.rows.len());
            let mut slack_idx = 0usize;
            for &is_soft in soft {
                if is_soft {
                    slack.push(sol.x[n + slack_idx].max(0.0));
                    slack_idx += 1;
                } else {
                    slack.push(0.0);
                }
            }
            // Relaxed row k maps back to the original row it was built
            // from; rebuild the mapping the same way relax_rows laid the
            // rows out.
            let mut origin = Vec::new();
            for (i, (row, &is_soft)) in p.rows.iter().zip(soft).enumerate() {
                if !is_soft {
                    origin.push((ConstraintId::RowLower(i), ConstraintId::RowUpper(i)));
                    continue;
                }
                if row.lower.is_finite() {
                    origin.push((ConstraintId::RowLower(i), ConstraintId::RowLower(i)));
                }
                if row.upper.is_finite() {
                    origin.push((ConstraintId::RowUpper(i), ConstraintId::RowUpper(i)));
                }
            }
            let mut ids = Vec::new();
            for id in sol.active_set {
                match id {
                    ConstraintId::RowLower(k) => ids.push(origin[k].0),
                    ConstraintId::RowUpper(k) => ids.push(origin[k].1),
                    ConstraintId::BoxLower(j) if j < n => ids.push(ConstraintId::BoxLower(j)),
                    ConstraintId::BoxUpper(j) if j < n => ids.push(ConstraintId::BoxUpper(j)),
                    _ => {} // slack non-negativity bounds
                }
            }
            ids.sort();
            ids.dedup();
            Ok(QpSolution {
                x,
                status: SolveStatus::RelaxedOptimal,
                slack,
                kkt_residual: sol.kkt_residual,
                active_set: ids,
            })
        }
        Err(e) => Err(e),
    }
}
