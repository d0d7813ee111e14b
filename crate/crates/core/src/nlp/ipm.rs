//! Primal-dual interior-point method with slack variables on inequalities.
//!
//! Each iteration takes a Newton step on the barrier-perturbed KKT system
//!
//! ```text
//! [ M    J_g^T ] [dx]   = - [ N ]
//! [ J_g  0     ] [dlam]     [ g ]
//! ```
//!
//! with `M = H + J_h^T diag(mu / z) J_h`, `N = L_x + J_h^T (mu h + gamma) / z`,
//! followed by fraction-to-boundary step lengths on the slacks `z` and the
//! inequality multipliers `mu`. The barrier parameter is reduced to
//! `sigma * z^T mu / n_ineq` after every step.

use serde::{Deserialize, Serialize};

use super::problem::ProblemSpec;
use crate::linalg::{Lu, Matrix};
use crate::scalar::{max_abs, Real};

#[derive(Clone, Debug, PartialEq)]
pub enum Start<T> {
    /// The problem's own initial values.
    Flat,
    Warm(Vec<T>),
}

#[derive(Clone, Debug)]
pub struct NlpOptions<T> {
    pub feas_tol: T,
    pub opt_tol: T,
    pub max_iter: usize,
    pub start: Start<T>,
    /// Fraction-to-boundary factor.
    pub xi: T,
    /// Centering parameter.
    pub sigma: T,
    /// Initial slack and multiplier level.
    pub z0: T,
}

impl<T: Real> Default for NlpOptions<T> {
    fn default() -> Self {
        NlpOptions {
            feas_tol: T::lit(1e-6),
            opt_tol: T::lit(1e-5),
            max_iter: 300,
            start: Start::Flat,
            xi: T::lit(0.99995),
            sigma: T::lit(0.1),
            z0: T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    InfeasibleDetected,
    IterationLimit,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpSolution<T> {
    pub point: Vec<T>,
    /// Unscaled objective at `point`.
    pub objective_value: T,
    /// `|grad L|_inf / (1 + max multiplier)`.
    pub kkt_stationarity: T,
    /// Largest absolute equality, inequality or bound violation.
    pub feasibility: T,
    /// `z^T mu / (1 + |x|_inf)`.
    pub complementarity: T,
    pub status: NlpStatus,
    pub iterations: usize,
    /// Multipliers of the equalities (for the scaled objective).
    pub lambda_eq: Vec<T>,
    /// Net multiplier per range inequality, upper side minus lower side.
    pub lambda_ineq: Vec<T>,
    /// Net multiplier per variable bound, upper side minus lower side.
    pub lambda_bounds: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
enum Row {
    Upper(usize),
    Lower(usize),
    VarUpper(usize),
    VarLower(usize),
}

struct Eval<T> {
    f: T,
    df: Vec<T>,
    g: Vec<T>,
    jg: Vec<Vec<(usize, T)>>,
    jc: Vec<Vec<(usize, T)>>,
    h: Vec<T>,
}

fn evaluate<T: Real>(ps: &ProblemSpec<T>, rows: &[Row], x: &[T]) -> Eval<T> {
    let s = ps.objective_scale;
    let c = ps.inequality_values(x);
    let h = rows
        .iter()
        .map(|r| match *r {
            Row::Upper(j) => c[j] - ps.inequalities[j].upper,
            Row::Lower(j) => ps.inequalities[j].lower - c[j],
            Row::VarUpper(i) => x[i] - ps.variables[i].upper,
            Row::VarLower(i) => ps.variables[i].lower - x[i],
        })
        .collect();
    Eval {
        f: ps.objective(x) * s,
        df: ps.objective_gradient(x).into_iter().map(|v| v * s).collect(),
        g: ps.equality_values(x),
        jg: ps.equality_jacobian(x),
        jc: ps.inequality_jacobian(x),
        h,
    }
}

/// Calls `f(col, value)` for the gradient of inequality row `r`.
fn row_grad<T: Real>(r: Row, ev: &Eval<T>, mut f: impl FnMut(usize, T)) {
    match r {
        Row::Upper(j) => ev.jc[j].iter().for_each(|&(i, d)| f(i, d)),
        Row::Lower(j) => ev.jc[j].iter().for_each(|&(i, d)| f(i, -d)),
        Row::VarUpper(i) => f(i, T::one()),
        Row::VarLower(i) => f(i, -T::one()),
    }
}

fn lagrangian_gradient<T: Real>(ev: &Eval<T>, rows: &[Row], lam: &[T], mu: &[T]) -> Vec<T> {
    let mut lx = ev.df.clone();
    for (row, &l) in ev.jg.iter().zip(lam) {
        for &(i, d) in row {
            lx[i] += l * d;
        }
    }
    for (&r, &m) in rows.iter().zip(mu) {
        row_grad(r, ev, |i, d| lx[i] += m * d);
    }
    lx
}

/// Solves a [`ProblemSpec`] to first-order KKT tolerance.
///
/// Deterministic for fixed options and start. The returned point always
/// carries its measured feasibility, whatever the status.
pub fn solve_nlp<T: Real>(ps: &ProblemSpec<T>, opts: &NlpOptions<T>) -> NlpSolution<T> {
    let n = ps.n_vars();
    let neq = ps.equalities.len();
    let mut rows = Vec::new();
    for (j, c) in ps.inequalities.iter().enumerate() {
        if c.upper.is_finite() {
            rows.push(Row::Upper(j));
        }
        if c.lower.is_finite() {
            rows.push(Row::Lower(j));
        }
    }
    for (i, v) in ps.variables.iter().enumerate() {
        if v.upper.is_finite() {
            rows.push(Row::VarUpper(i));
        }
        if v.lower.is_finite() {
            rows.push(Row::VarLower(i));
        }
    }
    let niq = rows.len();

    let mut x = match &opts.start {
        Start::Flat => ps.initial_point(),
        Start::Warm(x0) => {
            assert_eq!(x0.len(), n, "warm start has wrong length");
            x0.clone()
        }
    };
    let mut ev = evaluate(ps, &rows, &x);
    let mut gamma = T::one();
    let mut lam = vec![T::zero(); neq];
    let mut z: Vec<T> = ev.h.iter().map(|&h| opts.z0.max(-h)).collect();
    let mut mu: Vec<T> = z
        .iter()
        .map(|&zi| if gamma / zi > opts.z0 { gamma / zi } else { opts.z0 })
        .collect();
    let niq_t = T::from_usize_lossy(niq.max(1));
    if niq > 0 {
        gamma = opts.sigma * z.iter().zip(&mu).map(|(&a, &b)| a * b).sum::<T>() / niq_t;
    }

    let mut lx = lagrangian_gradient(&ev, &rows, &lam, &mu);
    let mut f_prev = ev.f;
    let mut iterations = 0usize;
    let mut status = None;
    let mut conds = conditions(&ev, &x, &z, &lam, &mu, &lx, ev.f, f_prev);
    if converged(&conds, opts) {
        status = Some(NlpStatus::Optimal);
    }

    let big = T::lit(1e12);
    while status.is_none() {
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        // Condensed Newton system.
        let dim = n + neq;
        let mut k = Matrix::zeros(dim, dim);
        let mut lam_in = vec![T::zero(); ps.inequalities.len()];
        for (&r, &m) in rows.iter().zip(&mu) {
            match r {
                Row::Upper(j) => lam_in[j] += m,
                Row::Lower(j) => lam_in[j] -= m,
                _ => {}
            }
        }
        {
            let mut hess = Matrix::zeros(n, n);
            ps.add_lagrangian_hessian(&x, ps.objective_scale, &lam, &lam_in, &mut hess);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = hess[(i, j)];
                }
            }
        }
        let mut rhs = vec![T::zero(); dim];
        for i in 0..n {
            rhs[i] = -lx[i];
        }
        let mut grad_buf: Vec<(usize, T)> = Vec::new();
        for (idx, &r) in rows.iter().enumerate() {
            let w = mu[idx] / z[idx];
            let v = (mu[idx] * ev.h[idx] + gamma) / z[idx];
            grad_buf.clear();
            row_grad(r, &ev, |i, d| grad_buf.push((i, d)));
            for &(i, di) in &grad_buf {
                rhs[i] -= di * v;
                for &(j, dj) in &grad_buf {
                    k[(i, j)] += w * di * dj;
                }
            }
        }
        for (e, row) in ev.jg.iter().enumerate() {
            for &(i, d) in row {
                k[(i, n + e)] += d;
                k[(n + e, i)] += d;
            }
            rhs[n + e] = -ev.g[e];
        }

        let step = factor_with_regularization(k, n);
        let Some(lu) = step else {
            status = Some(NlpStatus::NumericalFailure);
            break;
        };
        let sol = lu.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            status = Some(NlpStatus::NumericalFailure);
            break;
        }
        let (dx, dlam) = sol.split_at(n);

        let mut dz = vec![T::zero(); niq];
        let mut dmu = vec![T::zero(); niq];
        for (idx, &r) in rows.iter().enumerate() {
            let mut dh = T::zero();
            row_grad(r, &ev, |i, d| dh += d * dx[i]);
            dz[idx] = -ev.h[idx] - z[idx] - dh;
            dmu[idx] = -mu[idx] + (gamma - mu[idx] * dz[idx]) / z[idx];
        }
        let alpha_p = step_length(&z, &dz, opts.xi);
        let alpha_d = step_length(&mu, &dmu, opts.xi);

        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for idx in 0..niq {
            z[idx] += alpha_p * dz[idx];
            mu[idx] += alpha_d * dmu[idx];
        }
        for e in 0..neq {
            lam[e] += alpha_d * dlam[e];
        }
        if niq > 0 {
            gamma = opts.sigma * z.iter().zip(&mu).map(|(&a, &b)| a * b).sum::<T>() / niq_t;
        }

        f_prev = ev.f;
        ev = evaluate(ps, &rows, &x);
        lx = lagrangian_gradient(&ev, &rows, &lam, &mu);
        conds = conditions(&ev, &x, &z, &lam, &mu, &lx, ev.f, f_prev);
        if x.iter().any(|v| !v.is_finite()) || !ev.f.is_finite() {
            status = Some(NlpStatus::NumericalFailure);
            break;
        }
        if converged(&conds, opts) {
            status = Some(NlpStatus::Optimal);
            break;
        }
        let mult = max_abs(&lam).max(max_abs(&mu));
        if mult > big {
            status = Some(NlpStatus::InfeasibleDetected);
            break;
        }
        if niq > 0 && !(gamma > T::epsilon() * T::epsilon()) {
            status = Some(NlpStatus::NumericalFailure);
            break;
        }
    }

    let feasibility = ps.max_violation(&x);
    let status = status.unwrap_or_else(|| {
        let mult = max_abs(&lam).max(max_abs(&mu));
        if feasibility > opts.feas_tol && mult > T::lit(1e6) {
            NlpStatus::InfeasibleDetected
        } else {
            NlpStatus::IterationLimit
        }
    });

    let mut lambda_ineq = vec![T::zero(); ps.inequalities.len()];
    let mut lambda_bounds = vec![T::zero(); n];
    for (&r, &m) in rows.iter().zip(&mu) {
        match r {
            Row::Upper(j) => lambda_ineq[j] += m,
            Row::Lower(j) => lambda_ineq[j] -= m,
            Row::VarUpper(i) => lambda_bounds[i] += m,
            Row::VarLower(i) => lambda_bounds[i] -= m,
        }
    }
    NlpSolution {
        objective_value: ps.objective(&x),
        point: x,
        kkt_stationarity: conds.grad,
        feasibility,
        complementarity: conds.comp,
        status,
        iterations,
        lambda_eq: lam,
        lambda_ineq,
        lambda_bounds,
    }
}

struct Conditions<T> {
    feas: T,
    grad: T,
    comp: T,
    cost: T,
}

#[allow(clippy::too_many_arguments)]
fn conditions<T: Real>(
    ev: &Eval<T>,
    x: &[T],
    z: &[T],
    lam: &[T],
    mu: &[T],
    lx: &[T],
    f: T,
    f_prev: T,
) -> Conditions<T> {
    let one = T::one();
    let feas = max_abs(&ev.g).max(ev.h.iter().fold(T::zero(), |m, &h| m.max(h)));
    let grad = max_abs(lx) / (one + max_abs(lam).max(max_abs(mu)));
    let comp = z.iter().zip(mu).map(|(&a, &b)| a * b).sum::<T>() / (one + max_abs(x));
    let cost = (f - f_prev).abs() / (one + f_prev.abs());
    Conditions { feas, grad, comp, cost }
}

fn converged<T: Real>(c: &Conditions<T>, opts: &NlpOptions<T>) -> bool {
    c.feas <= opts.feas_tol && c.grad <= opts.opt_tol && c.comp <= opts.opt_tol && c.cost <= opts.opt_tol
}

fn step_length<T: Real>(v: &[T], dv: &[T], xi: T) -> T {
    let mut alpha = T::one();
    for (&a, &d) in v.iter().zip(dv) {
        if d < T::zero() {
            alpha = alpha.min(xi * (-a / d));
        }
    }
    alpha
}

/// Factors the KKT matrix. A singular matrix is regularized by adding an
/// increasing multiple of the identity to the primal block; the equality
/// block is only perturbed as a last resort.
fn factor_with_regularization<T: Real>(k: Matrix<T>, n: usize) -> Option<Lu<T>> {
    let tiny = T::epsilon() * T::epsilon();
    if let Ok(lu) = Lu::factor(k.clone(), tiny) {
        return Some(lu);
    }
    let dim = k.rows();
    let scale = (0..n).fold(T::zero(), |m, i| m.max(k[(i, i)].abs())).max(T::one());
    let mut delta = scale * T::lit(1e-10);
    for attempt in 0..10 {
        let mut kr = k.clone();
        for i in 0..n {
            kr[(i, i)] += delta;
        }
        if attempt >= 6 {
            for i in n..dim {
                kr[(i, i)] -= delta * T::lit(1e-6);
            }
        }
        if let Ok(lu) = Lu::factor(kr, tiny) {
            return Some(lu);
        }
        delta *= T::lit(100.0);
    }
    None
}
