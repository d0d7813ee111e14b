//! Independent reference implementations used as test oracles.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use voltplan_core::grid::BusKind;
use voltplan_core::linalg::Matrix;
use voltplan_core::opf::Polarity;
use voltplan_core::planner::{entries_as_controls, entries_cost, PlanEntry};
use voltplan_core::power_flow::{solve_power_flow, ControlSet, PowerFlowOptions};
use voltplan_core::{Network, ProblemSpec, ScenarioSnapshot};

use super::rel_err;

/// Gauss-Seidel on the complex bus equations from a flat start, with its own
/// admittance matrix. Generator buses are held at their scheduled magnitude.
pub fn fixed_point_oracle(net: &Network, snap: &ScenarioSnapshot) -> Vec<Complex64> {
    let n = net.n_buses();
    let idx = |id: u32| net.bus_index(id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in net.branches() {
        let (f, t) = (idx(br.from_bus), idx(br.to_bus));
        let ys = Complex64::new(br.series_g, br.series_b);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let bc = Complex64::new(0.0, br.charging_b / 2.0);
        y[f][f] += (ys + bc) / (tap * tap.conj());
        y[t][t] += ys + bc;
        y[f][t] -= ys / tap.conj();
        y[t][f] -= ys / tap;
    }
    for (i, b) in net.buses().iter().enumerate() {
        y[i][i] += Complex64::new(b.shunt_g, b.shunt_b);
    }
    for sh in net.switched_shunts() {
        for blk in &sh.blocks {
            y[idx(sh.bus)][idx(sh.bus)] += Complex64::new(0.0, blk.step_b * blk.initial_steps as f64);
        }
    }

    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut v_set: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        p[i] -= snap.d_p[i];
        q[i] -= snap.d_q[i];
    }
    for (k, pv) in net.pv_resources().iter().enumerate() {
        p[idx(pv.bus)] += snap.pv_p_mpp[k];
    }
    let mut slack = 0;
    for g in net.generators() {
        let i = idx(g.bus);
        p[i] += g.p_sched;
        v_set[i] = Some(g.v_sched);
        if g.is_slack_unit {
            slack = i;
        }
    }
    assert_eq!(net.buses()[slack].bus_kind, BusKind::Slack);

    let mut v: Vec<Complex64> = (0..n).map(|i| Complex64::new(v_set[i].unwrap_or(1.0), 0.0)).collect();
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            if i == slack {
                continue;
            }
            let others: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[i][k] * v[k]).sum();
            let mut qi = q[i];
            if v_set[i].is_some() {
                qi = -(v[i].conj() * (others + y[i][i] * v[i])).im;
            }
            let s = Complex64::new(p[i], qi);
            let mut next = (s.conj() / v[i].conj() - others) / y[i][i];
            if let Some(m) = v_set[i] {
                next = next * (m / next.norm());
            }
            change = change.max((next - v[i]).norm());
            v[i] = next;
        }
        if change < 1e-14 {
            return v;
        }
    }
    panic!("fixed-point oracle did not converge");
}

/// In-place Cholesky of a symmetric matrix; `None` if not positive definite.
fn cholesky(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| a[j][k] * a[j][k]).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        a[j][j] = d.sqrt();
        for i in j + 1..n {
            let s = a[i][j] - (0..j).map(|k| a[i][k] * a[j][k]).sum::<f64>();
            a[i][j] = s / a[j][j];
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        y[i] = (y[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    for i in (0..n).rev() {
        y[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * y[k]).sum::<f64>()) / l[i][i];
    }
    y
}

/// One-sided constraint `sign * (c_j(x) - bound) <= 0`.
struct Side {
    row: usize,
    sign: f64,
    bound: f64,
}

/// Augmented Lagrangian (method of multipliers) with a projected Newton
/// inner solver for the variable bounds.
pub struct Penalty<'a> {
    ps: &'a ProblemSpec,
    sides: Vec<Side>,
    lam: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
}

impl<'a> Penalty<'a> {
    pub fn new(ps: &'a ProblemSpec) -> Self {
        let mut sides = Vec::new();
        for (row, c) in ps.inequalities.iter().enumerate() {
            if c.upper.is_finite() {
                sides.push(Side { row, sign: 1.0, bound: c.upper });
            }
            if c.lower.is_finite() {
                sides.push(Side { row, sign: -1.0, bound: c.lower });
            }
        }
        Penalty {
            ps,
            lam: vec![0.0; ps.equalities.len()],
            mu: vec![0.0; sides.len()],
            sides,
            rho: 10.0,
        }
    }

    fn side_values(&self, x: &[f64]) -> Vec<f64> {
        let c = self.ps.inequality_values(x);
        self.sides.iter().map(|s| s.sign * (c[s.row] - s.bound)).collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.ps.objective_scale * self.ps.objective(x);
        for (g, l) in self.ps.equality_values(x).iter().zip(&self.lam) {
            v += l * g + 0.5 * self.rho * g * g;
        }
        for (h, m) in self.side_values(x).iter().zip(&self.mu) {
            let t = (m + self.rho * h).max(0.0);
            v += (t * t - m * m) / (2.0 * self.rho);
        }
        v
    }

    /// Gradient and Hessian of the augmented Lagrangian.
    fn derivatives(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let ps = self.ps;
        let n = ps.n_vars();
        let s = ps.objective_scale;
        let mut grad: Vec<f64> = ps.objective_gradient(x).iter().map(|g| g * s).collect();
        let mut outer = vec![vec![0.0; n]; n];
        let mut add_outer = |row: &[(usize, f64)], w: f64| {
            for &(i, a) in row {
                for &(j, b) in row {
                    outer[i][j] += w * a * b;
                }
            }
        };
        let g = ps.equality_values(x);
        let jg = ps.equality_jacobian(x);
        let mut w_eq = vec![0.0; g.len()];
        for (r, row) in jg.iter().enumerate() {
            w_eq[r] = self.lam[r] + self.rho * g[r];
            for &(i, d) in row {
                grad[i] += w_eq[r] * d;
            }
            add_outer(row, self.rho);
        }
        let jc = ps.inequality_jacobian(x);
        let h = self.side_values(x);
        let mut w_in = vec![0.0; ps.inequalities.len()];
        for (k, side) in self.sides.iter().enumerate() {
            let t = (self.mu[k] + self.rho * h[k]).max(0.0);
            if t > 0.0 {
                w_in[side.row] += side.sign * t;
                for &(i, d) in &jc[side.row] {
                    grad[i] += side.sign * t * d;
                }
                add_outer(&jc[side.row], self.rho);
            }
        }
        let mut hess = Matrix::zeros(n, n);
        ps.add_lagrangian_hessian(x, s, &w_eq, &w_in, &mut hess);
        let full = (0..n).map(|i| (0..n).map(|j| hess[(i, j)] + outer[i][j]).collect()).collect();
        (grad, full)
    }

    fn project(&self, x: &mut [f64]) {
        for (xi, v) in x.iter_mut().zip(&self.ps.variables) {
            *xi = xi.clamp(v.lower, v.upper);
        }
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        self.project(&mut y);
        x.iter().zip(&y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn minimize(&self, x: &mut Vec<f64>, tol: f64) {
        let vars = &self.ps.variables;
        for _ in 0..500 {
            let (g, h) = self.derivatives(x);
            let pg = self.projected_gradient_norm(x, &g);
            if pg <= tol {
                return;
            }
            let eps = pg.min(1e-3);
            let free: Vec<usize> = (0..x.len())
                .filter(|&i| {
                    let v = &vars[i];
                    let at_lo = x[i] <= v.lower + eps && g[i] > 0.0;
                    let at_hi = x[i] >= v.upper - eps && g[i] < 0.0;
                    v.lower < v.upper && !at_lo && !at_hi
                })
                .collect();
            let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
            let sub: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| h[i][j]).collect()).collect();
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            let mut shift = 0.0;
            let step = loop {
                let mut m = sub.clone();
                for (k, row) in m.iter_mut().enumerate() {
                    row[k] += shift;
                }
                if let Some(l) = cholesky(m) {
                    break cholesky_solve(&l, &rhs);
                }
                shift = if shift == 0.0 { 1e-8 } else { shift * 10.0 };
            };
            for (k, &i) in free.iter().enumerate() {
                d[i] = step[k];
            }
            let f0 = self.value(x);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                self.project(&mut trial);
                let decrease: f64 = g.iter().zip(trial.iter().zip(x.iter())).map(|(gi, (t, xi))| gi * (t - xi)).sum();
                if self.value(&trial) <= f0 + 1e-4 * decrease {
                    *x = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                return;
            }
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let eq = self.ps.equality_values(x).iter().fold(0.0f64, |m, g| m.max(g.abs()));
        self.side_values(x).iter().fold(eq, |m, h| m.max(*h))
    }

    pub fn solve(mut self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        self.project(&mut x);
        let mut tol = 1e-3;
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            self.minimize(&mut x, tol);
            let v = self.violation(&x);
            if v <= 1e-10 && tol <= 1e-10 {
                break;
            }
            for (l, g) in self.lam.iter_mut().zip(self.ps.equality_values(&x)) {
                *l += self.rho * g;
            }
            let h = self.side_values(&x);
            for (m, hk) in self.mu.iter_mut().zip(h) {
                *m = (*m + self.rho * hk).max(0.0);
            }
            if v > 0.25 * last && self.rho < 1e8 {
                self.rho *= 10.0;
            }
            last = v;
            tol = (tol * 0.1).max(1e-10);
        }
        let v = self.violation(&x);
        (x, v)
    }
}

pub const STEP: f64 = 1e-6;

/// A point strictly inside the variable bounds; unbounded directions are
/// sampled around the default start.
pub fn interior_point(ps: &ProblemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    ps.variables
        .iter()
        .map(|v| {
            if v.lower == v.upper {
                v.lower
            } else if v.lower.is_finite() && v.upper.is_finite() && v.upper - v.lower < 10.0 {
                let w = v.upper - v.lower;
                rng.random_range(v.lower + 0.01 * w..v.upper - 0.01 * w)
            } else {
                let lo = if v.lower.is_finite() { v.lower.max(v.initial - 0.3) } else { v.initial - 0.3 };
                lo + rng.random_range(0.01..0.3)
            }
        })
        .collect()
}

fn dense(rows: &[Vec<(usize, f64)>], n: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut d = vec![0.0; n];
            for &(i, v) in r {
                d[i] += v;
            }
            d
        })
        .collect()
}

fn bump(x: &[f64], i: usize, d: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += d;
    y
}

/// Worst relative error of the objective gradient, both constraint
/// Jacobians and the Lagrangian Hessian against central differences.
///
/// The objective is compared with the solver's scaling applied; unscaled
/// planning costs are around 1e6 and would drown the differences in round-off.
pub fn check_point(ps: &ProblemSpec, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = ps.n_vars();
    let s = ps.objective_scale;
    let mut worst: f64 = 0.0;
    let grad: Vec<f64> = ps.objective_gradient(x).iter().map(|g| g * s).collect();
    let jg = dense(&ps.equality_jacobian(x), n);
    let jc = dense(&ps.inequality_jacobian(x), n);
    let lam_eq: Vec<f64> = (0..ps.equalities.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lam_in: Vec<f64> = (0..ps.inequalities.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut hess = Matrix::zeros(n, n);
    ps.add_lagrangian_hessian(x, s, &lam_eq, &lam_in, &mut hess);
    let lag_grad = |y: &[f64]| {
        let mut g: Vec<f64> = ps.objective_gradient(y).iter().map(|g| g * s).collect();
        for (row, l) in dense(&ps.equality_jacobian(y), n).iter().zip(&lam_eq) {
            g.iter_mut().zip(row).for_each(|(a, b)| *a += l * b);
        }
        for (row, l) in dense(&ps.inequality_jacobian(y), n).iter().zip(&lam_in) {
            g.iter_mut().zip(row).for_each(|(a, b)| *a += l * b);
        }
        g
    };
    for i in 0..n {
        let (xp, xm) = (bump(x, i, STEP), bump(x, i, -STEP));
        let fd = s * (ps.objective(&xp) - ps.objective(&xm)) / (2.0 * STEP);
        worst = worst.max(rel_err(grad[i], fd));
        let (gp, gm) = (ps.equality_values(&xp), ps.equality_values(&xm));
        for (r, row) in jg.iter().enumerate() {
            worst = worst.max(rel_err(row[i], (gp[r] - gm[r]) / (2.0 * STEP)));
        }
        let (cp, cm) = (ps.inequality_values(&xp), ps.inequality_values(&xm));
        for (r, row) in jc.iter().enumerate() {
            worst = worst.max(rel_err(row[i], (cp[r] - cm[r]) / (2.0 * STEP)));
        }
        let (lp, lm) = (lag_grad(&xp), lag_grad(&xm));
        for r in 0..n {
            worst = worst.max(rel_err(hess[(r, i)], (lp[r] - lm[r]) / (2.0 * STEP)));
        }
    }
    worst
}

/// Every target bus inside its dead band and every generator inside its
/// reactive limits under the given new equipment.
pub fn discrete_feasible(net: &Network, snap: &ScenarioSnapshot, entries: &[PlanEntry<f64>]) -> bool {
    let mut ctrl = ControlSet::scheduled(net);
    ctrl.candidates = entries_as_controls(entries);
    let opts = PowerFlowOptions { enforce_q_limits: false, ..Default::default() };
    let Ok(sol) = solve_power_flow(net, snap, &ctrl, &opts) else { return false };
    if !sol.converged {
        return false;
    }
    let in_band = net.target_buses().into_iter().all(|i| {
        let b = &net.buses()[i];
        (sol.v_mag[i] - b.v_target.unwrap_or(1.0)).abs() <= b.v_deadband + 1e-9
    });
    let q_ok = net
        .generators()
        .iter()
        .zip(&sol.controls.q_g)
        .all(|(g, &q)| q >= g.q_min - 1e-9 && q <= g.q_max + 1e-9);
    in_band && q_ok
}

/// Cheapest discrete plan over every combination of `sizes` (Mvar) per
/// candidate and polarity, each checked by power flow; `None` if none is feasible.
pub fn brute_force_optimum(net: &Network, snap: &ScenarioSnapshot, sizes: &[f64]) -> (Option<f64>, usize) {
    let cands = net.candidate_buses().to_vec();
    let slots = 2 * cands.len();
    let total = sizes.len().pow(slots as u32);
    let mut best: Option<f64> = None;
    for combo in 0..total {
        let mut entries = Vec::new();
        let mut code = combo;
        for &bus in &cands {
            for kind in [Polarity::Capacitor, Polarity::Inductor] {
                let s = sizes[code % sizes.len()];
                code /= sizes.len();
                if s > 0.0 {
                    entries.push(PlanEntry { bus, kind, size_mvar: s, susceptance_pu: net.mvar_to_pu(s) });
                }
            }
        }
        if discrete_feasible(net, snap, &entries) {
            let cost = entries_cost(&entries, net.catalog());
            best = Some(best.map_or(cost, |b: f64| b.min(cost)));
        }
    }
    (best, total)
}

