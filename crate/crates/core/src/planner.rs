//! Scenario screening and the per-scenario planning loop.

use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EquipmentCatalog, Network};
use crate::nlp::{solve_nlp, NlpOptions, NlpStatus, Start};
use crate::opf::{build_planning_problem, investment_cost, OpfOptions, Polarity};
use crate::power_flow::{
    deviation_index, solve_power_flow, CandidateControl, ControlSet, PowerFlowOptions, VoltageState,
};
use crate::scalar::Real;
use crate::timeseries::{ProfileSet, ScenarioSnapshot};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    Nearest,
    Ceiling,
}

/// Discrete size ladder for one polarity, in Mvar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeLadder<T> {
    pub step_mvar: T,
    pub min_mvar: T,
    pub max_mvar: T,
    pub mode: Rounding,
}

impl<T: Real> SizeLadder<T> {
    pub fn from_catalog(cat: &EquipmentCatalog<T>, mva_base: T, polarity: Polarity, mode: Rounding) -> Self {
        let (min, max) = match polarity {
            Polarity::Capacitor => (cat.b_plus_min, cat.b_plus_max),
            Polarity::Inductor => (cat.b_minus_min, cat.b_minus_max),
        };
        SizeLadder {
            step_mvar: cat.step_b * mva_base,
            min_mvar: min * mva_base,
            max_mvar: max * mva_base,
            mode,
        }
    }
}

/// Rounds a relaxed size to the catalog ladder; sizes below the minimum are dropped (0).
pub fn round_sizes<T: Real>(relaxed_pu: T, mva_base: T, ladder: &SizeLadder<T>) -> T {
    let mvar = relaxed_pu.max(T::zero()) * mva_base;
    let steps = mvar / ladder.step_mvar;
    let tol = T::lit(1e-9);
    let n = match ladder.mode {
        Rounding::Nearest => steps.round(),
        Rounding::Ceiling => (steps - tol).ceil().max(T::zero()),
    };
    let top = (ladder.max_mvar / ladder.step_mvar + tol).floor();
    let size = n.min(top) * ladder.step_mvar;
    if size < ladder.min_mvar * (T::one() - tol) {
        T::zero()
    } else {
        size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PlanEntry<T> {
    pub bus: u32,
    pub kind: Polarity,
    pub size_mvar: T,
    pub susceptance_pu: T,
}

/// Outcome of the planning loop for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScenarioPlan<T> {
    pub timestamp: NaiveDateTime,
    pub entries: Vec<PlanEntry<T>>,
    pub cost: T,
    pub loop_iterations: usize,
    /// Pinned (bus, polarity) pairs each loop iteration was solved with.
    pub pinned_per_iteration: Vec<Vec<(u32, Polarity)>>,
    /// Continuous solution of the last loop iteration, one row per candidate.
    pub relaxed: Vec<CandidateControl<T>>,
    pub solve_log: Vec<NlpStatus>,
}

/// Converts discrete entries to candidate controls for costing and simulation.
pub fn entries_as_controls<T: Real>(entries: &[PlanEntry<T>]) -> Vec<CandidateControl<T>> {
    let mut out: Vec<CandidateControl<T>> = Vec::new();
    for e in entries {
        let pos = match out.iter().position(|c| c.bus == e.bus) {
            Some(p) => p,
            None => {
                out.push(CandidateControl {
                    bus: e.bus,
                    x_plus: T::zero(),
                    x_minus: T::zero(),
                    b_plus: T::zero(),
                    b_minus: T::zero(),
                });
                out.len() - 1
            }
        };
        let c = &mut out[pos];
        match e.kind {
            Polarity::Capacitor => {
                c.x_plus = T::one();
                c.b_plus += e.susceptance_pu;
            }
            Polarity::Inductor => {
                c.x_minus = T::one();
                c.b_minus += e.susceptance_pu;
            }
        }
    }
    out
}

pub fn entries_cost<T: Real>(entries: &[PlanEntry<T>], catalog: &EquipmentCatalog<T>) -> T {
    investment_cost(&entries_as_controls(entries), catalog)
}

#[derive(Clone, Debug)]
pub struct PlannerOptions<T> {
    pub opf: OpfOptions<T>,
    pub nlp: NlpOptions<T>,
    pub rounding: Rounding,
    /// Replace a capacitor and an inductor at the same bus by one device of the net size.
    pub net_out: bool,
}

impl<T: Real> Default for PlannerOptions<T> {
    fn default() -> Self {
        PlannerOptions {
            opf: OpfOptions::default(),
            nlp: NlpOptions::default(),
            rounding: Rounding::Nearest,
            net_out: false,
        }
    }
}

/// Screening result for one time step; `deviation` is `None` when the power flow failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScreenedStep<T> {
    pub timestamp: NaiveDateTime,
    pub deviation: Option<T>,
}

/// Ranks every time step by its deviation index under scheduled controls and
/// returns the `top_k` most severe, most severe first.
///
/// Steps whose power flow does not converge rank above all converged ones.
/// Ties go to the earlier timestamp.
pub fn select_scenarios<T: Real>(ps: &ProfileSet<T>, net: &Network<T>, top_k: usize) -> Result<Vec<ScreenedStep<T>>> {
    if top_k == 0 {
        return Err(Error::InvalidInput("top_k must be at least 1".into()));
    }
    if ps.len() < top_k {
        return Err(Error::InvalidInput(format!(
            "top_k = {top_k} exceeds the {} available time steps",
            ps.len()
        )));
    }
    let ctrl = ControlSet::scheduled(net);
    let opts = PowerFlowOptions::default();
    let mut steps: Vec<ScreenedStep<T>> = (0..ps.len())
        .into_par_iter()
        .map(|k| {
            let snap = ps.snapshot_at(k, net);
            let deviation = solve_power_flow(net, &snap, &ctrl, &opts)
                .ok()
                .filter(|s| s.converged)
                .and_then(|s| deviation_index(&s, net).ok());
            ScreenedStep { timestamp: snap.timestamp, deviation }
        })
        .collect();
    // Stable sort keeps timestamp order among equal keys.
    steps.sort_by(|a, b| match (a.deviation, b.deviation) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
    });
    steps.truncate(top_k);
    Ok(steps)
}

/// Iteratively solves the relaxed planning model, pinning installation
/// indicators of every candidate whose relaxed size reaches the catalog
/// minimum, until no new location appears; then rounds the sizes.
pub fn plan_scenario<T: Real>(
    net: &Network<T>,
    snap: &ScenarioSnapshot<T>,
    opts: &PlannerOptions<T>,
) -> Result<ScenarioPlan<T>> {
    let candidates: Vec<u32> = opts
        .opf
        .candidates
        .clone()
        .unwrap_or_else(|| net.candidate_buses().to_vec());
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate locations to plan".into()));
    }
    let cat = net.catalog();
    let reach = T::one() - T::lit(1e-6);

    let scheduled = ControlSet::scheduled(net);
    let (mut state, mut ctrl) = match solve_power_flow(net, snap, &scheduled, &PowerFlowOptions::default()) {
        Ok(pf) if pf.converged => (pf.state, pf.controls),
        _ => (VoltageState::flat(net), scheduled),
    };

    let mut pinned: BTreeSet<(u32, Polarity)> = BTreeSet::new();
    let mut located: BTreeSet<u32> = BTreeSet::new();
    let mut log = Vec::new();
    let mut history = Vec::new();
    let max_iter = candidates.len() + 1;
    let mut relaxed;
    let mut iterations = 0;
    loop {
        iterations += 1;
        assert!(iterations <= max_iter, "planning loop exceeded |C| + 1 iterations");
        history.push(pinned.iter().copied().collect());
        let prob = build_planning_problem(net, snap, &pinned, &opts.opf)?;
        let nlp = NlpOptions {
            start: Start::Warm(prob.start_from(&state, &ctrl)),
            ..opts.nlp.clone()
        };
        let sol = solve_nlp(&prob.spec, &nlp);
        log.push(sol.status);
        match sol.status {
            NlpStatus::Optimal => {}
            NlpStatus::InfeasibleDetected => {
                return Err(Error::Infeasible {
                    iteration: iterations,
                    detail: format!(
                        "planning problem at {} (violation {:.3e})",
                        snap.timestamp,
                        sol.feasibility.as_f64()
                    ),
                })
            }
            _ => {
                return Err(Error::SolverFailure {
                    iteration: iterations,
                    detail: format!(
                        "{:?} at {} (violation {:.3e}, stationarity {:.3e})",
                        sol.status,
                        snap.timestamp,
                        sol.feasibility.as_f64(),
                        sol.kkt_stationarity.as_f64()
                    ),
                })
            }
        }
        state = prob.layout.state(&sol.point);
        ctrl = prob.layout.controls(&sol.point);
        relaxed = prob.layout.candidate_values(&sol.point);

        let mut new_location = false;
        for c in &relaxed {
            for (pol, b, b_min) in [
                (Polarity::Capacitor, c.b_plus, cat.b_plus_min),
                (Polarity::Inductor, c.b_minus, cat.b_minus_min),
            ] {
                if b >= b_min * reach && pinned.insert((c.bus, pol)) && located.insert(c.bus) {
                    new_location = true;
                }
            }
        }
        if !new_location {
            break;
        }
    }

    let entries = discretize(&relaxed, net, opts);
    Ok(ScenarioPlan {
        timestamp: snap.timestamp,
        cost: entries_cost(&entries, cat),
        entries,
        loop_iterations: iterations,
        pinned_per_iteration: history,
        relaxed,
        solve_log: log,
    })
}

fn discretize<T: Real>(relaxed: &[CandidateControl<T>], net: &Network<T>, opts: &PlannerOptions<T>) -> Vec<PlanEntry<T>> {
    let base = net.mva_base();
    let cat = net.catalog();
    let cap = SizeLadder::from_catalog(cat, base, Polarity::Capacitor, opts.rounding);
    let ind = SizeLadder::from_catalog(cat, base, Polarity::Inductor, opts.rounding);
    let mut entries = Vec::new();
    let mut push = |bus, kind, size: T| {
        if size > T::zero() {
            entries.push(PlanEntry { bus, kind, size_mvar: size, susceptance_pu: size / base });
        }
    };
    for c in relaxed {
        if opts.net_out {
            let net_b = c.b_plus - c.b_minus;
            if net_b >= T::zero() {
                push(c.bus, Polarity::Capacitor, round_sizes(net_b, base, &cap));
            } else {
                push(c.bus, Polarity::Inductor, round_sizes(-net_b, base, &ind));
            }
        } else {
            push(c.bus, Polarity::Capacitor, round_sizes(c.b_plus, base, &cap));
            push(c.bus, Polarity::Inductor, round_sizes(c.b_minus, base, &ind));
        }
    }
    entries
}

/// Plans each listed time step independently; results keep the input order.
pub fn plan_scenarios<T: Real>(
    net: &Network<T>,
    ps: &ProfileSet<T>,
    timestamps: &[NaiveDateTime],
    opts: &PlannerOptions<T>,
) -> Result<Vec<ScenarioPlan<T>>> {
    timestamps
        .par_iter()
        .map(|t| {
            let k = ps
                .index_of(t)
                .ok_or_else(|| Error::UnknownTimestamp(crate::timeseries::format_timestamp(t)))?;
            plan_scenario(net, &ps.snapshot_at(k, net), opts)
        })
        .collect()
}
