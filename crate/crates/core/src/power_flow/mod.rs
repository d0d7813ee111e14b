//! Newton power flow in rectangular voltage coordinates.

mod branch;
mod metrics;
mod newton;

pub use branch::{branch_currents, branch_currents_to, BranchAdmittance};
pub use metrics::{bus_deviations, deviation_index, violation_metric, violation_metric_from_deviations};
pub use newton::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::grid::Network;
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::timeseries::ScenarioSnapshot;

/// Rectangular bus voltages, indexed in network bus order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VoltageState<T> {
    pub v_r: Vec<T>,
    pub v_i: Vec<T>,
}

impl<T: Real> VoltageState<T> {
    /// Every bus at the slack unit's setpoint with zero angle.
    pub fn flat(net: &Network<T>) -> Self {
        let n = net.n_buses();
        VoltageState {
            v_r: vec![net.generators()[net.slack_unit()].v_sched; n],
            v_i: vec![T::zero(); n],
        }
    }

    pub fn magnitude(&self, i: usize) -> T {
        self.v_r[i].hypot(self.v_i[i])
    }

    pub fn magnitudes(&self) -> Vec<T> {
        (0..self.v_r.len()).map(|i| self.magnitude(i)).collect()
    }

    pub fn angle(&self, i: usize) -> T {
        self.v_i[i].atan2(self.v_r[i])
    }

    pub fn at(&self, i: usize) -> (T, T) {
        (self.v_r[i], self.v_i[i])
    }
}

/// Installed (or candidate) capacitor/inductor controls at one bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CandidateControl<T> {
    pub bus: u32,
    pub x_plus: T,
    pub x_minus: T,
    pub b_plus: T,
    pub b_minus: T,
}

/// Values of every control variable at one operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControlSet<T> {
    /// Reactive output per generator.
    pub q_g: Vec<T>,
    /// Real output of the slack unit; other units run at `p_sched`.
    pub p_slack: T,
    /// Steps switched on, `[shunt][block]`; fractional in relaxed contexts.
    pub shunt_steps: Vec<Vec<T>>,
    pub pv_q: Vec<T>,
    pub pv_curtail: Vec<T>,
    /// Demand-response reactive injection per bus.
    pub q_dr: Vec<T>,
    pub candidates: Vec<CandidateControl<T>>,
}

impl<T: Real> ControlSet<T> {
    /// Scheduled operation: shunts at their initial steps, PV at unity power
    /// factor without curtailment, no demand response, no new equipment.
    pub fn scheduled(net: &Network<T>) -> Self {
        ControlSet {
            q_g: vec![T::zero(); net.generators().len()],
            p_slack: net.generators()[net.slack_unit()].p_sched,
            shunt_steps: net
                .switched_shunts()
                .iter()
                .map(|s| {
                    s.blocks
                        .iter()
                        .map(|b| T::from_u32(b.initial_steps).expect("u32 fits"))
                        .collect()
                })
                .collect(),
            pv_q: vec![T::zero(); net.pv_resources().len()],
            pv_curtail: vec![T::zero(); net.pv_resources().len()],
            q_dr: vec![T::zero(); net.n_buses()],
            candidates: Vec::new(),
        }
    }
}

/// Net specified injections and shunt terms per bus.
#[derive(Clone, Debug)]
pub(crate) struct BusTerms<T> {
    /// Real injection excluding the slack unit's output.
    pub p_fixed: Vec<T>,
    /// Reactive injection excluding all generator outputs.
    pub q_fixed: Vec<T>,
    pub shunt_g: Vec<T>,
    pub shunt_b: Vec<T>,
}

impl<T: Real> BusTerms<T> {
    pub fn assemble(net: &Network<T>, snap: &ScenarioSnapshot<T>, ctrl: &ControlSet<T>) -> Self {
        let n = net.n_buses();
        let mut t = BusTerms {
            p_fixed: vec![T::zero(); n],
            q_fixed: vec![T::zero(); n],
            shunt_g: net.buses().iter().map(|b| b.shunt_g).collect(),
            shunt_b: net.buses().iter().map(|b| b.shunt_b).collect(),
        };
        for i in 0..n {
            t.p_fixed[i] = -snap.d_p[i];
            t.q_fixed[i] = -snap.d_q[i] + ctrl.q_dr[i];
        }
        for (m, g) in net.generators().iter().enumerate() {
            if m != net.slack_unit() {
                let i = net.bus_index(g.bus).expect("validated");
                t.p_fixed[i] += g.p_sched;
            }
        }
        for (k, pv) in net.pv_resources().iter().enumerate() {
            let i = net.bus_index(pv.bus).expect("validated");
            t.p_fixed[i] += snap.pv_p_mpp[k] - ctrl.pv_curtail[k];
            t.q_fixed[i] += ctrl.pv_q[k];
        }
        for (s, sh) in net.switched_shunts().iter().enumerate() {
            let i = net.bus_index(sh.bus).expect("validated");
            for (blk, steps) in sh.blocks.iter().zip(&ctrl.shunt_steps[s]) {
                t.shunt_b[i] += blk.step_b * *steps;
            }
        }
        for c in &ctrl.candidates {
            if let Some(i) = net.bus_index(c.bus) {
                t.shunt_b[i] += c.b_plus - c.b_minus;
            }
        }
        t
    }
}

/// Bus admittance built from the branch pi-models only (bus shunts are kept separate).
#[derive(Clone, Debug)]
pub struct Admittance<T> {
    /// Per row: `(column, G, B)` entries sorted by column.
    rows: Vec<Vec<(usize, T, T)>>,
}

impl<T: Real> Admittance<T> {
    pub fn build(net: &Network<T>) -> Self {
        let n = net.n_buses();
        let mut dense: Vec<std::collections::BTreeMap<usize, Complex<T>>> =
            vec![Default::default(); n];
        for br in net.branches() {
            let f = net.bus_index(br.from_bus).expect("validated");
            let t = net.bus_index(br.to_bus).expect("validated");
            let a = BranchAdmittance::of(br);
            *dense[f].entry(f).or_insert_with(Complex::default) += a.ff;
            *dense[f].entry(t).or_insert_with(Complex::default) += a.ft;
            *dense[t].entry(f).or_insert_with(Complex::default) += a.tf;
            *dense[t].entry(t).or_insert_with(Complex::default) += a.tt;
        }
        Admittance {
            rows: dense
                .into_iter()
                .map(|row| row.into_iter().map(|(j, y)| (j, y.re, y.im)).collect())
                .collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, T, T)] {
        &self.rows[i]
    }

    /// Net current leaving bus `i` into its branches.
    pub fn current(&self, i: usize, state: &VoltageState<T>) -> (T, T) {
        self.rows[i].iter().fold((T::zero(), T::zero()), |(ir, ii), &(j, g, b)| {
            (
                ir + g * state.v_r[j] - b * state.v_i[j],
                ii + b * state.v_r[j] + g * state.v_i[j],
            )
        })
    }
}

/// Real and reactive power balance mismatch at every bus.
///
/// `dp[i] = P_gen - d_P + (P_s - P_c) - g_s |V|^2 - (V_R I_R + V_I I_I)` and
/// `dq[i] = Q_gen - d_Q + Q_s + Q_DR + b_tot |V|^2 - (V_I I_R - V_R I_I)`,
/// where `I` is the net branch current leaving the bus over all incident circuits.
pub fn residuals<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    state: &VoltageState<T>,
    ctrl: &ControlSet<T>,
) -> (Vec<T>, Vec<T>) {
    let y = Admittance::build(net);
    residuals_with(net, &y, &BusTerms::assemble(net, snap, ctrl), state, ctrl)
}

pub(crate) fn residuals_with<T: Real>(
    net: &Network<T>,
    y: &Admittance<T>,
    terms: &BusTerms<T>,
    state: &VoltageState<T>,
    ctrl: &ControlSet<T>,
) -> (Vec<T>, Vec<T>) {
    let n = net.n_buses();
    let mut dp = terms.p_fixed.clone();
    let mut dq = terms.q_fixed.clone();
    dp[net.slack_bus()] += ctrl.p_slack;
    for (m, g) in net.generators().iter().enumerate() {
        dq[net.bus_index(g.bus).expect("validated")] += ctrl.q_g[m];
    }
    for i in 0..n {
        let (vr, vi) = state.at(i);
        let v2 = vr * vr + vi * vi;
        let (ir, ii) = y.current(i, state);
        dp[i] -= terms.shunt_g[i] * v2 + vr * ir + vi * ii;
        dq[i] += terms.shunt_b[i] * v2 - (vi * ir - vr * ii);
    }
    (dp, dq)
}

/// Jacobian of `[dp; dq]` with respect to `[v_r; v_i]` (all buses), dense `2n x 2n`.
pub fn residual_jacobian<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    state: &VoltageState<T>,
    ctrl: &ControlSet<T>,
) -> Matrix<T> {
    let y = Admittance::build(net);
    jacobian_with(net.n_buses(), &y, &BusTerms::assemble(net, snap, ctrl), state)
}

pub(crate) fn jacobian_with<T: Real>(
    n: usize,
    y: &Admittance<T>,
    terms: &BusTerms<T>,
    state: &VoltageState<T>,
) -> Matrix<T> {
    let two = T::lit(2.0);
    let mut jac = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (vr, vi) = state.at(i);
        let (ir, ii) = y.current(i, state);
        for &(k, g, b) in y.row(i) {
            // d(V_R I_R + V_I I_I) and d(V_I I_R - V_R I_I) through the currents.
            jac[(i, k)] -= vr * g + vi * b;
            jac[(i, n + k)] -= -vr * b + vi * g;
            jac[(n + i, k)] -= vi * g - vr * b;
            jac[(n + i, n + k)] -= -vi * b - vr * g;
        }
        // Through the bus's own voltage factors.
        jac[(i, i)] -= ir + two * terms.shunt_g[i] * vr;
        jac[(i, n + i)] -= ii + two * terms.shunt_g[i] * vi;
        jac[(n + i, i)] += ii + two * terms.shunt_b[i] * vr;
        jac[(n + i, n + i)] += -ir + two * terms.shunt_b[i] * vi;
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::*;
    use chrono::NaiveDateTime;

    pub(crate) fn single_bus(shunt_b: f64) -> Network<f64> {
        Network::from_case(CaseFile {
            mva_base: 100.0,
            buses: vec![Bus {
                id: 1,
                base_kv: 100.0,
                bus_kind: BusKind::Slack,
                shunt_g: 0.0,
                shunt_b,
                is_target_load: false,
                v_target: None,
                v_deadband: 0.0,
                v_min: None,
                v_max: None,
                demand_p: 0.0,
                demand_q: 0.0,
                dr_q_min: 0.0,
                dr_q_max: 0.0,
            }],
            branches: vec![],
            generators: vec![Generator {
                bus: 1,
                id: "1".into(),
                p_sched: 0.0,
                v_sched: 1.0,
                q_min: -1.0,
                q_max: 1.0,
                is_slack_unit: true,
            }],
            switched_shunts: vec![],
            pv_resources: vec![],
            equipment_catalog: EquipmentCatalog {
                b_plus_min: 0.05,
                b_plus_max: 0.1,
                b_minus_min: 0.05,
                b_minus_max: 0.1,
                step_b: 0.05,
                cost_fixed: 1e5,
                cost_cap_per_pu: 2e6,
                cost_ind_per_pu: 2e6,
            },
            candidate_exclusions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn isolated_bus_residuals() {
        let t = NaiveDateTime::default();
        let net = single_bus(0.0);
        let snap = ScenarioSnapshot::from_case(&net, t);
        let ctrl = ControlSet::scheduled(&net);
        let (dp, dq) = residuals(&net, &snap, &VoltageState::flat(&net), &ctrl);
        assert_eq!((dp[0], dq[0]), (0.0, 0.0));

        let net = single_bus(0.1);
        let (dp, dq) = residuals(&net, &snap, &VoltageState::flat(&net), &ctrl);
        assert_eq!(dp[0], 0.0);
        assert!((dq[0] - 0.1).abs() < 1e-15);
    }
}
