use serde::{Deserialize, Serialize};

use super::{
    branch_currents, branch_currents_to, jacobian_with, residuals_with, Admittance, BusTerms,
    ControlSet, VoltageState,
};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::linalg::{Lu, Matrix};
use crate::scalar::Real;
use crate::timeseries::ScenarioSnapshot;

#[derive(Clone, Debug)]
pub struct PowerFlowOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Switch generator buses to fixed-Q when their reactive limits are exceeded.
    pub enforce_q_limits: bool,
    pub warm_start: Option<VoltageState<T>>,
}

impl<T: Real> Default for PowerFlowOptions<T> {
    fn default() -> Self {
        PowerFlowOptions {
            tol: T::lit(1e-8),
            max_iter: 20,
            enforce_q_limits: true,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PowerFlowSolution<T> {
    pub state: VoltageState<T>,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: T,
    /// From-end current of each branch, `(I_R, I_I)`.
    pub currents_from: Vec<(T, T)>,
    /// To-end current of each branch, `(I_R, I_I)`.
    pub currents_to: Vec<(T, T)>,
    pub v_mag: Vec<T>,
    /// Input controls with generator outputs replaced by the solved values.
    pub controls: ControlSet<T>,
    /// Generator buses held at a reactive limit instead of their voltage setpoint.
    pub q_limited_buses: Vec<u32>,
}

#[derive(Clone, Copy, PartialEq)]
enum Role<T> {
    Slack,
    Pq,
    Pv { v_sched: T },
}

struct GenBus<T> {
    units: Vec<usize>,
    q_min: T,
    q_max: T,
    /// Fixed total output once the bus has been switched to a reactive limit.
    q_fixed: Option<T>,
}

/// Solves the AC power flow by Newton's method on the rectangular mismatches.
///
/// Controls in `ctrl` are held fixed except generator reactive outputs and
/// the slack unit's real output, which are recovered from the solution.
/// Generator buses hold `|V| = v_sched` through `V_R^2 + V_I^2 = v_sched^2`.
/// Non-convergence is reported through `converged = false`, never retried.
pub fn solve_power_flow<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    ctrl: &ControlSet<T>,
    opts: &PowerFlowOptions<T>,
) -> Result<PowerFlowSolution<T>> {
    snap.check_against(net)?;
    let n = net.n_buses();
    let y = Admittance::build(net);
    let base_terms = BusTerms::assemble(net, snap, ctrl);

    let mut roles = vec![Role::Pq; n];
    let mut gen_buses: Vec<(usize, GenBus<T>)> = Vec::new();
    for (m, g) in net.generators().iter().enumerate() {
        let i = net.bus_index(g.bus).expect("validated");
        match gen_buses.iter_mut().find(|(b, _)| *b == i) {
            Some((_, gb)) => {
                gb.units.push(m);
                gb.q_min += g.q_min;
                gb.q_max += g.q_max;
            }
            None => gen_buses.push((
                i,
                GenBus {
                    units: vec![m],
                    q_min: g.q_min,
                    q_max: g.q_max,
                    q_fixed: None,
                },
            )),
        }
        if roles[i] == Role::Pq {
            roles[i] = Role::Pv { v_sched: g.v_sched };
        }
    }
    let slack = net.slack_bus();
    roles[slack] = Role::Slack;

    let mut state = opts
        .warm_start
        .clone()
        .unwrap_or_else(|| VoltageState::flat(net));
    state.v_r[slack] = net.generators()[net.slack_unit()].v_sched;
    state.v_i[slack] = T::zero();

    let unknown_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = unknown_buses.len();
    let mut zero_gen = ctrl.clone();
    zero_gen.q_g.iter_mut().for_each(|q| *q = T::zero());
    zero_gen.p_slack = T::zero();

    let mut iterations = 0usize;
    let mut converged = false;
    let mut max_res;
    let two = T::lit(2.0);
    'outer: loop {
        let mut terms = base_terms.clone();
        for (i, gb) in &gen_buses {
            if let Some(q) = gb.q_fixed {
                terms.q_fixed[*i] += q;
            }
        }
        let mut newton_iters = 0usize;
        loop {
            let (dp, dq) = residuals_with(net, &y, &terms, &state, &zero_gen);
            let mut f = Vec::with_capacity(2 * m);
            for &i in &unknown_buses {
                f.push(dp[i]);
            }
            for &i in &unknown_buses {
                f.push(match roles[i] {
                    Role::Pv { v_sched } => {
                        state.v_r[i] * state.v_r[i] + state.v_i[i] * state.v_i[i] - v_sched * v_sched
                    }
                    _ => dq[i],
                });
            }
            max_res = f.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
            if f.iter().any(|v| !v.is_finite()) {
                max_res = T::infinity();
                break 'outer;
            }
            if max_res <= opts.tol {
                break;
            }
            if newton_iters >= opts.max_iter {
                break 'outer;
            }
            let full = jacobian_with(n, &y, &terms, &state);
            let mut jac = Matrix::zeros(2 * m, 2 * m);
            for (r, &i) in unknown_buses.iter().enumerate() {
                for (c, &k) in unknown_buses.iter().enumerate() {
                    jac[(r, c)] = full[(i, k)];
                    jac[(r, m + c)] = full[(i, n + k)];
                    if !matches!(roles[i], Role::Pv { .. }) {
                        jac[(m + r, c)] = full[(n + i, k)];
                        jac[(m + r, m + c)] = full[(n + i, n + k)];
                    }
                }
                if let Role::Pv { .. } = roles[i] {
                    jac[(m + r, r)] = two * state.v_r[i];
                    jac[(m + r, m + r)] = two * state.v_i[i];
                }
            }
            let lu = Lu::factor(jac, T::epsilon()).map_err(|s| Error::SingularJacobian {
                iteration: iterations,
                bus: net.buses()[unknown_buses[s.column % m.max(1)]].id,
            })?;
            let neg_f: Vec<T> = f.iter().map(|&v| -v).collect();
            let dx = lu.solve(&neg_f);
            for (r, &i) in unknown_buses.iter().enumerate() {
                state.v_r[i] += dx[r];
                state.v_i[i] += dx[m + r];
            }
            newton_iters += 1;
            iterations += 1;
        }
        if !opts.enforce_q_limits {
            converged = true;
            break;
        }
        // Reactive output each regulated bus needs at the converged point.
        let (_, dq) = residuals_with(net, &y, &terms, &state, &zero_gen);
        let tol = opts.tol.max(T::lit(1e-9));
        let mut switched = false;
        for (i, gb) in gen_buses.iter_mut() {
            if roles[*i] == Role::Slack || gb.q_fixed.is_some() {
                continue;
            }
            let need = -dq[*i];
            if need > gb.q_max + tol {
                gb.q_fixed = Some(gb.q_max);
            } else if need < gb.q_min - tol {
                gb.q_fixed = Some(gb.q_min);
            } else {
                continue;
            }
            roles[*i] = Role::Pq;
            switched = true;
        }
        if !switched {
            converged = true;
            break;
        }
    }

    // Recover generator outputs.
    let mut controls = ctrl.clone();
    let (dp, dq) = residuals_with(net, &y, &base_terms, &state, &zero_gen);
    controls.p_slack = -dp[slack];
    for (i, gb) in &gen_buses {
        let total = gb.q_fixed.unwrap_or(-dq[*i]);
        distribute_q(net, gb, total, &mut controls.q_g);
    }
    let (dp, dq) = residuals_with(net, &y, &base_terms, &state, &controls);
    let final_res = dp
        .iter()
        .chain(dq.iter())
        .fold(T::zero(), |a, &v| a.max(v.abs()));
    if converged {
        max_res = final_res;
        converged = max_res <= opts.tol;
    }

    let mut currents_from = Vec::with_capacity(net.branches().len());
    let mut currents_to = Vec::with_capacity(net.branches().len());
    for br in net.branches() {
        let f = state.at(net.bus_index(br.from_bus).expect("validated"));
        let t = state.at(net.bus_index(br.to_bus).expect("validated"));
        currents_from.push(branch_currents(br, f, t));
        currents_to.push(branch_currents_to(br, f, t));
    }
    let q_limited_buses = gen_buses
        .iter()
        .filter(|(_, gb)| gb.q_fixed.is_some())
        .map(|(i, _)| net.buses()[*i].id)
        .collect();
    Ok(PowerFlowSolution {
        v_mag: state.magnitudes(),
        state,
        converged,
        iterations,
        max_residual: max_res,
        currents_from,
        currents_to,
        controls,
        q_limited_buses,
    })
}

fn distribute_q<T: Real>(net: &Network<T>, gb: &GenBus<T>, total: T, q_g: &mut [T]) {
    let gens = net.generators();
    let range = gb.q_max - gb.q_min;
    let count = T::from_usize_lossy(gb.units.len());
    for &u in &gb.units {
        let g = &gens[u];
        q_g[u] = if range > T::zero() {
            g.q_min + (total - gb.q_min) * (g.q_max - g.q_min) / range
        } else {
            total / count
        };
    }
}
