//! Planning and operational optimal power flow models.
//!
//! Both models are built in rectangular voltage coordinates as polynomial
//! programs for [`crate::nlp::solve_nlp`]. The planning model places new
//! capacitors and inductors at least cost subject to a hard voltage dead band
//! at every target load bus; the operational model dispatches existing
//! assets only and minimizes losses plus a penalty on dead-band violations.

mod layout;

use std::collections::BTreeSet;

pub use layout::{CandidateSlots, OpfLayout, Polarity, Slot};

use crate::error::{Error, Result};
use crate::grid::{EquipmentCatalog, Network};
use crate::nlp::{Equality, Inequality, Poly, ProblemSpec, Variable};
use crate::power_flow::{Admittance, BranchAdmittance, CandidateControl, ControlSet, VoltageState};
use crate::scalar::Real;
use crate::timeseries::ScenarioSnapshot;

#[derive(Clone, Debug, PartialEq)]
pub struct OpfOptions<T> {
    /// Dead-band half-width applied at every target bus; `None` keeps each bus's own.
    pub deadband: Option<T>,
    /// Penalty per squared dead-band slack in the operational model.
    pub weight_v: T,
    /// Adds the optional `v_min`/`v_max` bus limits as inequalities.
    pub enforce_voltage_limits: bool,
    /// Candidate buses for the planning model; `None` uses the network's.
    pub candidates: Option<Vec<u32>>,
}

impl<T: Real> Default for OpfOptions<T> {
    fn default() -> Self {
        OpfOptions {
            deadband: None,
            weight_v: T::lit(1000.0),
            enforce_voltage_limits: false,
            candidates: None,
        }
    }
}

/// A built model together with the map from model quantities to variables.
#[derive(Clone, Debug, PartialEq)]
pub struct OpfProblem<T> {
    pub spec: ProblemSpec<T>,
    pub layout: OpfLayout<T>,
}

impl<T: Real> OpfProblem<T> {
    /// Default initial point overwritten with the given voltages and controls.
    pub fn start_from(&self, state: &VoltageState<T>, ctrl: &ControlSet<T>) -> Vec<T> {
        let mut x = self.spec.initial_point();
        self.layout.fill_point(&mut x, state, ctrl);
        x
    }
}

/// Relaxed least-cost placement model for one snapshot.
///
/// `fixed_on` pins the corresponding installation indicator to one.
pub fn build_planning_problem<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    fixed_on: &BTreeSet<(u32, Polarity)>,
    opts: &OpfOptions<T>,
) -> Result<OpfProblem<T>> {
    snap.check_against(net)?;
    let candidates: Vec<u32> = match &opts.candidates {
        Some(c) => c.clone(),
        None => net.candidate_buses().to_vec(),
    };
    for &b in &candidates {
        if net.bus_index(b).is_none() {
            return Err(Error::InvalidInput(format!("candidate bus {b} does not exist")));
        }
    }
    if let Some((b, _)) = fixed_on.iter().find(|(b, _)| !candidates.contains(b)) {
        return Err(Error::InvalidInput(format!("pinned bus {b} is not a candidate")));
    }

    let mut m = Model::new(net, snap);
    let cat = net.catalog();
    let zero = T::zero();
    let one = T::one();
    for &bus in &candidates {
        let pin = |p| if fixed_on.contains(&(bus, p)) { one } else { zero };
        let x_plus = m.var(format!("x_plus[{bus}]"), pin(Polarity::Capacitor), one, pin(Polarity::Capacitor));
        let x_minus = m.var(format!("x_minus[{bus}]"), pin(Polarity::Inductor), one, pin(Polarity::Inductor));
        let b_plus = m.var(format!("b_plus[{bus}]"), zero, cat.b_plus_max, zero);
        let b_minus = m.var(format!("b_minus[{bus}]"), zero, cat.b_minus_max, zero);
        m.layout.candidates.push(CandidateSlots { bus, x_plus, x_minus, b_plus, b_minus });
    }
    m.network_constraints(opts);

    let inf = T::infinity();
    let mut objective = Poly::zero();
    for c in m.layout.candidates.clone() {
        for (x, b, b_min, b_max, cost, tag) in [
            (c.x_plus, c.b_plus, cat.b_plus_min, cat.b_plus_max, cat.cost_cap_per_pu, "plus"),
            (c.x_minus, c.b_minus, cat.b_minus_min, cat.b_minus_max, cat.cost_ind_per_pu, "minus"),
        ] {
            let (xp, bp) = (x.poly(), b.poly());
            m.ineq(format!("size_lo_{tag}[{}]", c.bus), xp.clone().scale(b_min) - bp.clone(), -inf, zero);
            m.ineq(format!("size_hi_{tag}[{}]", c.bus), bp.clone() - xp.clone().scale(b_max), -inf, zero);
            objective += xp.scale(cat.cost_fixed) + bp.scale(cost);
        }
    }
    for i in net.target_buses() {
        let (lo, hi) = m.deadband_limits(i, opts);
        let v2 = m.v_squared(i);
        m.ineq(format!("deadband[{}]", net.buses()[i].id), v2, lo, hi);
    }

    let scale = [cat.cost_fixed, cat.cost_cap_per_pu * cat.b_plus_max, cat.cost_ind_per_pu * cat.b_minus_max]
        .into_iter()
        .fold(zero, |a, b| a.max(b.abs()));
    let scale = if scale > zero { one / scale } else { one };
    Ok(m.finish(objective, scale))
}

/// Loss-minimizing dispatch of existing assets with a soft voltage dead band.
pub fn build_operational_problem<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    opts: &OpfOptions<T>,
) -> Result<OpfProblem<T>> {
    snap.check_against(net)?;
    let mut m = Model::new(net, snap);
    m.network_constraints(opts);

    let inf = T::infinity();
    let mut objective = m.losses();
    for i in net.target_buses() {
        let id = net.buses()[i].id;
        let (lo, hi) = m.deadband_limits(i, opts);
        let s = m.var(format!("deadband_slack[{id}]"), T::zero(), inf, T::zero());
        m.layout.deadband_slack.push((i, s));
        let v2 = m.v_squared(i);
        m.ineq(format!("deadband_hi[{id}]"), v2.clone() - s.poly(), -inf, hi);
        m.ineq(format!("deadband_lo[{id}]"), v2 + s.poly(), lo, inf);
        if opts.weight_v != T::zero() {
            objective += s.poly().square().scale(opts.weight_v);
        }
    }
    Ok(m.finish(objective, T::one()))
}

/// Investment cost: fixed charge per installed device plus size-proportional cost.
pub fn investment_cost<T: Real>(plan: &[CandidateControl<T>], catalog: &EquipmentCatalog<T>) -> T {
    plan.iter().fold(T::zero(), |acc, c| {
        acc + catalog.cost_fixed * (c.x_plus + c.x_minus)
            + c.b_plus * catalog.cost_cap_per_pu
            + c.b_minus * catalog.cost_ind_per_pu
    })
}

struct Model<'a, T> {
    net: &'a Network<T>,
    snap: &'a ScenarioSnapshot<T>,
    variables: Vec<Variable<T>>,
    equalities: Vec<Equality<T>>,
    inequalities: Vec<Inequality<T>>,
    layout: OpfLayout<T>,
}

impl<'a, T: Real> Model<'a, T> {
    /// Declares the variables shared by both models: voltages and existing assets.
    fn new(net: &'a Network<T>, snap: &'a ScenarioSnapshot<T>) -> Self {
        let mut m = Model {
            net,
            snap,
            variables: Vec::new(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            layout: OpfLayout {
                v_r: Vec::new(),
                v_i: Vec::new(),
                q_g: Vec::new(),
                p_slack: Slot::Fixed(T::zero()),
                shunt_steps: Vec::new(),
                pv_curtail: Vec::new(),
                pv_q: Vec::new(),
                q_dr: Vec::new(),
                candidates: Vec::new(),
                deadband_slack: Vec::new(),
            },
        };
        let inf = T::infinity();
        let zero = T::zero();
        let start = VoltageState::flat(net);
        let mut v_start = start.v_r.clone();
        for g in net.generators() {
            v_start[net.bus_index(g.bus).expect("validated")] = g.v_sched;
        }
        for (i, bus) in net.buses().iter().enumerate() {
            let (vr, vi) = if i == net.slack_bus() {
                (Slot::Fixed(start.v_r[i]), Slot::Fixed(zero))
            } else {
                (
                    m.var(format!("v_r[{}]", bus.id), -inf, inf, v_start[i]),
                    m.var(format!("v_i[{}]", bus.id), -inf, inf, zero),
                )
            };
            m.layout.v_r.push(vr);
            m.layout.v_i.push(vi);
        }
        for g in net.generators() {
            let s = m.var(format!("q_g[{}:{}]", g.bus, g.id), g.q_min, g.q_max, zero.max(g.q_min).min(g.q_max));
            m.layout.q_g.push(s);
        }
        let slack = &net.generators()[net.slack_unit()];
        m.layout.p_slack = m.var(format!("p_g[{}:{}]", slack.bus, slack.id), -inf, inf, slack.p_sched);
        for sh in net.switched_shunts() {
            let slots = sh
                .blocks
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let max = T::from_u32(b.max_steps).expect("u32 fits");
                    let init = T::from_u32(b.initial_steps).expect("u32 fits").min(max);
                    m.var(format!("steps[{}:{k}]", sh.bus), zero, max, init)
                })
                .collect();
            m.layout.shunt_steps.push(slots);
        }
        for (k, pv) in net.pv_resources().iter().enumerate() {
            let cmax = snap.pv_p_mpp[k] * pv.max_curtail_fraction;
            let c = m.var(format!("p_curtail[{}]", pv.bus), zero, cmax, zero);
            let (mut qlo, mut qhi) = (snap.pv_q_min[k], snap.pv_q_max[k]);
            if let Slot::Fixed(cv) = c {
                // Without curtailment the capability ellipse is just a box on Q.
                // Writing it as bounds keeps the problem regular when the
                // inverter runs at its rating and Q is squeezed to zero.
                let p = snap.pv_p_mpp[k] - cv;
                let room = (pv.s_rating * pv.s_rating - p * p).max(zero).sqrt() * pv.q_capability_factor;
                qlo = qlo.max(-room);
                qhi = qhi.min(room);
                if qhi - qlo <= T::lit(1e-9) {
                    let mid = ((qlo + qhi) / T::lit(2.0)).max(-room).min(room);
                    qlo = mid;
                    qhi = mid;
                }
            }
            let q = m.var(format!("q_pv[{}]", pv.bus), qlo, qhi, zero.max(qlo).min(qhi));
            m.layout.pv_curtail.push(c);
            m.layout.pv_q.push(q);
        }
        for b in net.buses() {
            let s = m.var(format!("q_dr[{}]", b.id), b.dr_q_min, b.dr_q_max, zero.max(b.dr_q_min).min(b.dr_q_max));
            m.layout.q_dr.push(s);
        }
        m
    }

    /// New variable, or a constant when the bounds coincide.
    fn var(&mut self, name: String, lower: T, upper: T, initial: T) -> Slot<T> {
        if lower == upper {
            return Slot::Fixed(lower);
        }
        self.variables.push(Variable { name, lower, upper, initial });
        Slot::Var(self.variables.len() - 1)
    }

    fn eq(&mut self, name: String, function: Poly<T>) {
        self.equalities.push(Equality { name, function });
    }

    fn ineq(&mut self, name: String, function: Poly<T>, lower: T, upper: T) {
        self.inequalities.push(Inequality { name, function, lower, upper });
    }

    fn v_squared(&self, i: usize) -> Poly<T> {
        self.layout.v_r[i].poly().square() + self.layout.v_i[i].poly().square()
    }

    fn deadband_limits(&self, i: usize, opts: &OpfOptions<T>) -> (T, T) {
        let b = &self.net.buses()[i];
        let target = b.v_target.expect("validated: target bus has v_target");
        let db = opts.deadband.unwrap_or(b.v_deadband);
        let lo = (target - db).max(T::zero());
        (lo * lo, (target + db) * (target + db))
    }

    /// Rectangular current `(I_R, I_I)` given admittance entries `(column, G, B)`.
    fn current(&self, entries: impl IntoIterator<Item = (usize, T, T)>) -> (Poly<T>, Poly<T>) {
        let (mut ir, mut ii) = (Poly::zero(), Poly::zero());
        for (j, g, b) in entries {
            let (vr, vi) = (self.layout.v_r[j].poly(), self.layout.v_i[j].poly());
            ir += vr.clone().scale(g) - vi.clone().scale(b);
            ii += vr.scale(b) + vi.scale(g);
        }
        (ir, ii)
    }

    fn branch_ends(&self) -> Vec<(String, (Poly<T>, Poly<T>), usize, T)> {
        let mut out = Vec::new();
        for br in self.net.branches() {
            let f = self.net.bus_index(br.from_bus).expect("validated");
            let t = self.net.bus_index(br.to_bus).expect("validated");
            let a = BranchAdmittance::of(br);
            let tag = format!("{}-{}:{}", br.from_bus, br.to_bus, br.circuit);
            let i_from = self.current([(f, a.ff.re, a.ff.im), (t, a.ft.re, a.ft.im)]);
            let i_to = self.current([(f, a.tf.re, a.tf.im), (t, a.tt.re, a.tt.im)]);
            out.push((format!("from[{tag}]"), i_from, f, br.current_limit));
            out.push((format!("to[{tag}]"), i_to, t, br.current_limit));
        }
        out
    }

    /// Power balance at every bus, generator voltage setpoints, line limits and inverter capability.
    fn network_constraints(&mut self, opts: &OpfOptions<T>) {
        let net = self.net;
        let snap = self.snap;
        let y = Admittance::build(net);
        let n = net.n_buses();

        let mut p_inj: Vec<Poly<T>> = (0..n).map(|i| Poly::constant(-snap.d_p[i])).collect();
        let mut q_inj: Vec<Poly<T>> = (0..n)
            .map(|i| Poly::constant(-snap.d_q[i]) + self.layout.q_dr[i].poly())
            .collect();
        let mut shunt_b: Vec<Poly<T>> = net.buses().iter().map(|b| Poly::constant(b.shunt_b)).collect();
        for (u, g) in net.generators().iter().enumerate() {
            let i = net.bus_index(g.bus).expect("validated");
            if u == net.slack_unit() {
                p_inj[i] += self.layout.p_slack.poly();
            } else {
                p_inj[i] += Poly::constant(g.p_sched);
            }
            q_inj[i] += self.layout.q_g[u].poly();
        }
        for (k, pv) in net.pv_resources().iter().enumerate() {
            let i = net.bus_index(pv.bus).expect("validated");
            p_inj[i] += Poly::constant(snap.pv_p_mpp[k]) - self.layout.pv_curtail[k].poly();
            q_inj[i] += self.layout.pv_q[k].poly();
        }
        for (s, sh) in net.switched_shunts().iter().enumerate() {
            let i = net.bus_index(sh.bus).expect("validated");
            for (blk, slot) in sh.blocks.iter().zip(&self.layout.shunt_steps[s]) {
                shunt_b[i] += slot.poly().scale(blk.step_b);
            }
        }
        for c in &self.layout.candidates {
            let i = net.bus_index(c.bus).expect("validated");
            shunt_b[i] += c.b_plus.poly() - c.b_minus.poly();
        }

        for (i, bus) in net.buses().iter().enumerate() {
            let (vr, vi) = (self.layout.v_r[i].poly(), self.layout.v_i[i].poly());
            let v2 = self.v_squared(i);
            let (ir, ii) = self.current(y.row(i).iter().copied());
            let dp = p_inj[i].clone() - v2.clone().scale(bus.shunt_g) - (&vr * &ir + &vi * &ii);
            let dq = q_inj[i].clone() + &shunt_b[i] * &v2 - (&vi * &ir - &vr * &ii);
            self.eq(format!("p_balance[{}]", bus.id), dp);
            self.eq(format!("q_balance[{}]", bus.id), dq);
        }

        let mut seen = BTreeSet::new();
        for g in net.generators() {
            let i = net.bus_index(g.bus).expect("validated");
            if i == net.slack_bus() || !seen.insert(i) {
                continue;
            }
            let f = self.v_squared(i) - Poly::constant(g.v_sched * g.v_sched);
            self.eq(format!("v_setpoint[{}]", g.bus), f);
        }

        let inf = T::infinity();
        for (name, (ir, ii), _, limit) in self.branch_ends() {
            if limit.is_finite() {
                self.ineq(format!("current_{name}"), ir.square() + ii.square(), -inf, limit * limit);
            }
        }

        for (k, pv) in net.pv_resources().iter().enumerate() {
            if self.layout.pv_curtail[k].index().is_none() {
                continue;
            }
            let p = Poly::constant(snap.pv_p_mpp[k]) - self.layout.pv_curtail[k].poly();
            let kq = pv.q_capability_factor;
            let f = p.square() + self.layout.pv_q[k].poly().square().scale(T::one() / (kq * kq));
            let s2 = pv.s_rating * pv.s_rating;
            self.ineq(format!("inverter[{}]", pv.bus), f, -inf, s2);
        }

        if opts.enforce_voltage_limits {
            for (i, bus) in net.buses().iter().enumerate() {
                if bus.v_min.is_none() && bus.v_max.is_none() {
                    continue;
                }
                let lo = bus.v_min.map_or(-inf, |v| v * v);
                let hi = bus.v_max.map_or(inf, |v| v * v);
                let v2 = self.v_squared(i);
                self.ineq(format!("v_limits[{}]", bus.id), v2, lo, hi);
            }
        }
    }

    /// Total real power loss over all branches, summed at both ends.
    fn losses(&self) -> Poly<T> {
        let mut total = Poly::zero();
        for (_, (ir, ii), bus, _) in self.branch_ends() {
            let (vr, vi) = (self.layout.v_r[bus].poly(), self.layout.v_i[bus].poly());
            total += &vr * &ir + &vi * &ii;
        }
        total
    }

    fn finish(self, objective: Poly<T>, scale: T) -> OpfProblem<T> {
        let spec = ProblemSpec::new(self.variables, objective, self.equalities, self.inequalities)
            .with_objective_scale(scale);
        OpfProblem { spec, layout: self.layout }
    }
}
