//! Year-long re-simulation of a plan and violation statistics.

use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::FinalPlan;
use crate::error::{Error, Result};
use crate::grid::{Network, ShuntBlock, SwitchedShunt};
use crate::nlp::{solve_nlp, NlpOptions, NlpStatus, Start};
use crate::opf::{build_operational_problem, OpfOptions, Polarity};
use crate::planner::PlanEntry;
use crate::power_flow::{
    bus_deviations, solve_power_flow, violation_metric_from_deviations, ControlSet, PowerFlowOptions,
    PowerFlowSolution,
};
use crate::scalar::Real;
use crate::timeseries::{ProfileSet, ScenarioSnapshot};

/// Adds plan equipment to a copy of the network.
///
/// With `switchable` each device becomes a bank of catalog-step blocks on the
/// bus's switched shunt (initially off); otherwise it is a fixed shunt.
pub fn apply_plan<T: Real>(net: &Network<T>, entries: &[PlanEntry<T>], switchable: bool) -> Result<Network<T>> {
    let mut case = net.case().clone();
    let step = net.catalog().step_b;
    for e in entries {
        let pos = net
            .bus_index(e.bus)
            .ok_or_else(|| Error::InvalidInput(format!("plan refers to unknown bus {}", e.bus)))?;
        let sign = match e.kind {
            Polarity::Capacitor => T::one(),
            Polarity::Inductor => -T::one(),
        };
        if !switchable {
            case.buses[pos].shunt_b += sign * e.susceptance_pu;
            continue;
        }
        let n_steps = (e.susceptance_pu / step).round();
        let (step_b, max_steps) = if n_steps >= T::one() && ((n_steps * step) - e.susceptance_pu).abs() <= step * T::lit(1e-9) {
            (sign * step, n_steps.to_u32().expect("step count fits u32"))
        } else {
            (sign * e.susceptance_pu, 1)
        };
        let block = ShuntBlock { step_b, max_steps, initial_steps: 0 };
        match case.switched_shunts.iter_mut().find(|s| s.bus == e.bus) {
            Some(s) => s.blocks.push(block),
            None => case.switched_shunts.push(SwitchedShunt { bus: e.bus, blocks: vec![block] }),
        }
    }
    Network::from_case(case)
}

/// Network for the next planning year: the case with plan equipment as fixed shunts.
pub fn merged_case<T: Real>(net: &Network<T>, plan: &FinalPlan<T>) -> Result<Network<T>> {
    apply_plan(net, &plan.entries, false)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PowerflowOnly,
    #[default]
    OperationalOpf,
}

#[derive(Clone, Debug)]
pub struct EvalOptions<T> {
    pub mode: EvalMode,
    pub deadband: T,
    pub opf: OpfOptions<T>,
    pub nlp: NlpOptions<T>,
    pub power_flow: PowerFlowOptions<T>,
    /// Lets PV inverters supply reactive power; off pins their Q to zero.
    pub pv_q_support: bool,
    /// Largest tolerated share of failed time steps.
    pub max_failure_share: f64,
}

impl<T: Real> Default for EvalOptions<T> {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::OperationalOpf,
            deadband: T::lit(0.005),
            opf: OpfOptions::default(),
            nlp: NlpOptions::default(),
            power_flow: PowerFlowOptions::default(),
            pv_q_support: true,
            max_failure_share: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StepRecord<T> {
    pub timestamp: NaiveDateTime,
    pub converged: bool,
    pub deviation_index: Option<T>,
    pub violation_metric: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Aggregates<T> {
    pub mean: T,
    pub max: T,
    pub total: T,
    pub count_violated: usize,
    pub count_converged: usize,
    pub count_failed: usize,
}

impl<T: Real> Aggregates<T> {
    pub fn of(steps: &[StepRecord<T>]) -> Self {
        let vals: Vec<T> = steps.iter().filter_map(|s| s.violation_metric).collect();
        let total: T = vals.iter().copied().sum();
        Aggregates {
            mean: if vals.is_empty() { T::zero() } else { total / T::from_usize_lossy(vals.len()) },
            max: vals.iter().fold(T::zero(), |m, &v| m.max(v)),
            total,
            count_violated: vals.iter().filter(|&&v| v > T::zero()).count(),
            count_converged: vals.len(),
            count_failed: steps.len() - vals.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ViolationReport<T> {
    pub mode: EvalMode,
    pub deadband: T,
    pub pv_q_support: bool,
    pub steps: Vec<StepRecord<T>>,
    pub aggregates: Aggregates<T>,
}

/// Simulates every time step and measures dead-band violations at the target buses.
///
/// In operational mode each step solves the operational OPF, rounds the
/// shunt steps to whole steps and re-runs the power flow with those controls;
/// the metric is taken from that power flow.
pub fn evaluate_year<T: Real>(net: &Network<T>, ps: &ProfileSet<T>, opts: &EvalOptions<T>) -> Result<ViolationReport<T>> {
    let steps: Vec<StepRecord<T>> = (0..ps.len())
        .into_par_iter()
        .map(|k| {
            let mut snap = ps.snapshot_at(k, net);
            if !opts.pv_q_support {
                snap.pv_q_min.iter_mut().for_each(|v| *v = T::zero());
                snap.pv_q_max.iter_mut().for_each(|v| *v = T::zero());
            }
            evaluate_step(net, &snap, opts)
        })
        .collect();
    let failed = steps.iter().filter(|s| !s.converged).count();
    if !steps.is_empty() && failed as f64 > opts.max_failure_share * steps.len() as f64 {
        return Err(Error::ExcessiveNonConvergence { failed, total: steps.len() });
    }
    Ok(ViolationReport {
        mode: opts.mode,
        deadband: opts.deadband,
        pv_q_support: opts.pv_q_support,
        aggregates: Aggregates::of(&steps),
        steps,
    })
}

/// Evaluates one snapshot under the options' mode.
pub fn evaluate_step<T: Real>(net: &Network<T>, snap: &ScenarioSnapshot<T>, opts: &EvalOptions<T>) -> StepRecord<T> {
    let failed = StepRecord {
        timestamp: snap.timestamp,
        converged: false,
        deviation_index: None,
        violation_metric: None,
    };
    let scheduled = ControlSet::scheduled(net);
    let pf = solve_power_flow(net, snap, &scheduled, &opts.power_flow).ok().filter(|s| s.converged);
    let sol = match opts.mode {
        EvalMode::PowerflowOnly => pf,
        EvalMode::OperationalOpf => operational_solution(net, snap, pf.as_ref(), opts),
    };
    match sol {
        Some(s) => {
            let dev = bus_deviations(&s.v_mag, net);
            StepRecord {
                timestamp: snap.timestamp,
                converged: true,
                deviation_index: Some(dev.iter().copied().sum()),
                violation_metric: Some(violation_metric_from_deviations(&dev, opts.deadband)),
            }
        }
        None => failed,
    }
}

/// Operational OPF for one snapshot followed by step rounding and a power-flow
/// re-check. `pf` seeds the solver when given. `None` when either stage fails.
pub fn operational_solution<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    pf: Option<&PowerFlowSolution<T>>,
    opts: &EvalOptions<T>,
) -> Option<PowerFlowSolution<T>> {
    let prob = build_operational_problem(net, snap, &opts.opf).ok()?;
    let start = match pf {
        Some(pf) => Start::Warm(prob.start_from(&pf.state, &pf.controls)),
        None => Start::Flat,
    };
    let sol = solve_nlp(&prob.spec, &NlpOptions { start, ..opts.nlp.clone() });
    let usable = sol.status == NlpStatus::Optimal
        || (sol.status == NlpStatus::IterationLimit && sol.feasibility <= opts.nlp.feas_tol * T::lit(100.0));
    if !usable {
        return None;
    }
    let mut pf_opts = opts.power_flow.clone();
    pf_opts.warm_start = Some(prob.layout.state(&sol.point));
    round_steps(net, snap, prob.layout.controls(&sol.point), &pf_opts, opts.deadband)
}

/// Most fractional shunt positions tried both ways when rounding.
const ROUNDING_SEARCH_LIMIT: usize = 8;

/// Rounds relaxed shunt steps to integers. With few fractional positions every
/// floor/ceiling combination is checked by power flow and the one with the
/// least violation wins, ties going to the combination closest to the relaxed
/// steps; otherwise steps are rounded to nearest.
fn round_steps<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    relaxed: ControlSet<T>,
    pf_opts: &PowerFlowOptions<T>,
    deadband: T,
) -> Option<PowerFlowSolution<T>> {
    let eps = T::lit(1e-6);
    let mut nearest = relaxed.clone();
    let mut fractional = Vec::new();
    for (i, steps) in nearest.shunt_steps.iter_mut().enumerate() {
        for (k, x) in steps.iter_mut().enumerate() {
            if (*x - x.round()).abs() > eps {
                fractional.push((i, k));
            }
            *x = x.round();
        }
    }
    let solve = |c: &ControlSet<T>| solve_power_flow(net, snap, c, pf_opts).ok().filter(|s| s.converged);
    if fractional.is_empty() || fractional.len() > ROUNDING_SEARCH_LIMIT {
        return solve(&nearest);
    }
    let mut best: Option<(T, T, PowerFlowSolution<T>)> = None;
    for mask in 0u32..(1 << fractional.len()) {
        let mut c = nearest.clone();
        let mut distance = T::zero();
        for (bit, &(i, k)) in fractional.iter().enumerate() {
            let x = relaxed.shunt_steps[i][k];
            let r = if mask & (1 << bit) != 0 { x.ceil() } else { x.floor() };
            distance += (r - x).abs();
            c.shunt_steps[i][k] = r;
        }
        let Some(sol) = solve(&c) else { continue };
        let v = violation_metric_from_deviations(&bus_deviations(&sol.v_mag, net), deadband);
        let better = match &best {
            None => true,
            Some((bv, bd, _)) => v < *bv || (v == *bv && distance < *bd),
        };
        if better {
            best = Some((v, distance, sol));
        }
    }
    best.map(|(_, _, s)| s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReductionRow<T> {
    pub group: String,
    pub steps: usize,
    pub base_total: T,
    pub planned_total: T,
    pub base_mean: T,
    pub planned_mean: T,
    pub absolute_reduction: T,
    /// `None` when the base has no violation in the group.
    pub percent_reduction: Option<T>,
}

/// Named subsets of time steps for [`reduction_stats`].
pub type Groups = Vec<(String, BTreeSet<NaiveDateTime>)>;

/// Compares two reports on the same time axis, overall and per group.
///
/// Only steps that converged in both reports are counted.
pub fn reduction_stats<T: Real>(
    base: &ViolationReport<T>,
    planned: &ViolationReport<T>,
    groups: &Groups,
) -> Result<Vec<ReductionRow<T>>> {
    if base.steps.len() != planned.steps.len()
        || base.steps.iter().zip(&planned.steps).any(|(a, b)| a.timestamp != b.timestamp)
    {
        return Err(Error::InvalidInput("reports cover different time steps".into()));
    }
    let row = |name: &str, member: &dyn Fn(&NaiveDateTime) -> bool| {
        let (mut bt, mut pt, mut n) = (T::zero(), T::zero(), 0usize);
        for (a, b) in base.steps.iter().zip(&planned.steps) {
            if let (true, Some(x), Some(y)) = (member(&a.timestamp), a.violation_metric, b.violation_metric) {
                bt += x;
                pt += y;
                n += 1;
            }
        }
        let nt = T::from_usize_lossy(n.max(1));
        ReductionRow {
            group: name.to_string(),
            steps: n,
            base_total: bt,
            planned_total: pt,
            base_mean: bt / nt,
            planned_mean: pt / nt,
            absolute_reduction: bt - pt,
            percent_reduction: if bt > T::zero() { Some(T::lit(100.0) * (bt - pt) / bt) } else { None },
        }
    };
    let mut rows = vec![row("overall", &|_| true)];
    for (name, set) in groups {
        rows.push(row(name, &|t| set.contains(t)));
    }
    Ok(rows)
}

/// Default grouping: the planned scenarios, everything else, and one group per cluster.
pub fn default_groups<T: Real>(plan: &FinalPlan<T>, all: &[NaiveDateTime]) -> Groups {
    let selected: BTreeSet<NaiveDateTime> = plan.source_scenarios.iter().copied().collect();
    let others = all.iter().filter(|t| !selected.contains(t)).copied().collect();
    let mut groups = vec![("selected".to_string(), selected), ("other".to_string(), others)];
    if let Some(p) = &plan.provenance {
        let max = p.assignments.iter().map(|a| a.cluster).max().unwrap_or(0);
        for c in 1..=max {
            let set = p.assignments.iter().filter(|a| a.cluster == c).map(|a| a.timestamp).collect();
            groups.push((format!("cluster_{c}"), set));
        }
    }
    groups
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationThresholds {
    pub max_total_pu: f64,
    pub max_step_pu: f64,
}

impl Default for IterationThresholds {
    fn default() -> Self {
        IterationThresholds { max_total_pu: 1.0, max_step_pu: 0.01 }
    }
}

/// Whether another planning round is warranted, and the offending time steps
/// ranked by violation, largest first (ties to the earlier timestamp).
///
/// Offenders are the steps above `max_step_pu`; when only the yearly total is
/// exceeded, every violated step is returned.
pub fn needs_iteration<T: Real>(report: &ViolationReport<T>, th: &IterationThresholds) -> (bool, Vec<NaiveDateTime>) {
    let step_lim = T::lit(th.max_step_pu);
    let over_step: Vec<&StepRecord<T>> = report
        .steps
        .iter()
        .filter(|s| s.violation_metric.is_some_and(|v| v > step_lim))
        .collect();
    let over_total = report.aggregates.total > T::lit(th.max_total_pu);
    if over_step.is_empty() && !over_total {
        return (false, Vec::new());
    }
    let mut offenders: Vec<&StepRecord<T>> = if over_step.is_empty() {
        report
            .steps
            .iter()
            .filter(|s| s.violation_metric.is_some_and(|v| v > T::zero()))
            .collect()
    } else {
        over_step
    };
    offenders.sort_by(|a, b| {
        b.violation_metric
            .partial_cmp(&a.violation_metric)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    (true, offenders.into_iter().map(|s| s.timestamp).collect())
}
