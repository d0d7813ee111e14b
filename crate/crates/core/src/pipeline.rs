//! End-to-end runs: screening, per-scenario planning, decision and yearly
//! verification driven by one [`RunConfig`].

use std::collections::BTreeSet;
use std::path::PathBuf;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::decision::{decide, Approach, DecisionOptions, FeatureSource, FinalPlan};
use crate::error::{Error, Result};
use crate::grid::{load_case, EquipmentCatalog, Network};
use crate::nlp::NlpOptions;
use crate::opf::{investment_cost, OpfOptions};
use crate::planner::{
    entries_as_controls, plan_scenarios, select_scenarios, PlannerOptions, Rounding, ScenarioPlan, ScreenedStep,
};
use crate::timeseries::{load_profiles, synthesize_year, ProfileSet, SynthConfig};
use crate::verifier::{
    apply_plan, default_groups, evaluate_year, needs_iteration, reduction_stats, Aggregates, EvalMode, EvalOptions,
    IterationThresholds, ReductionRow, ViolationReport,
};

/// Every knob of a planning or verification run. Field names double as
/// config-file keys and, in kebab case, as command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub case_path: PathBuf,
    /// Profile CSV; a synthetic year is generated when absent.
    pub profiles_path: Option<PathBuf>,
    pub pv_penetration: f64,
    pub cloud_volatility: f64,
    pub load_noise: f64,
    pub resolution_minutes: u32,
    pub days: u32,
    pub start_date: NaiveDate,

    pub top_k: usize,
    /// Hard dead band of the planning problem, pu.
    pub deadband_plan: f64,
    /// Dead band used to measure violations during verification, pu.
    pub deadband_verify: f64,
    pub step_mvar: f64,
    pub min_mvar: f64,
    pub cost_fixed: f64,
    pub cost_per_mvar: f64,
    pub approach: Approach,
    pub rounding: Rounding,
    pub net_out: bool,
    /// Candidate buses; all eligible target buses when absent.
    pub candidates: Option<Vec<u32>>,

    pub seed: u64,
    pub k_max: usize,
    pub restarts: usize,
    pub reduce_var: f64,
    pub min_cluster_size: usize,
    pub features: FeatureSource,

    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    pub weight_v: f64,

    pub eval_mode: EvalMode,
    pub pv_q_support: bool,
    pub plan_as_switchable: bool,
    /// Also evaluate the year with PV reactive support off, base and planned.
    pub compare_pv_support: bool,
    pub max_failure_share: f64,
    pub max_total_pu: f64,
    pub max_step_pu: f64,
    /// Planning rounds of the plan, verify, re-plan loop.
    pub max_rounds: usize,
    /// Timestamps planned in addition to the screened ones.
    pub extra_scenarios: Vec<NaiveDateTime>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let nlp = NlpOptions::<f64>::default();
        let cluster = crate::decision::ClusterOptions::default();
        let th = IterationThresholds::default();
        RunConfig {
            case_path: PathBuf::new(),
            profiles_path: None,
            pv_penetration: synth.pv_penetration,
            cloud_volatility: synth.cloud_volatility,
            load_noise: synth.load_noise,
            resolution_minutes: synth.resolution_minutes,
            days: synth.days,
            start_date: synth.start,
            top_k: 21,
            deadband_plan: 0.002,
            deadband_verify: 0.005,
            step_mvar: 5.0,
            min_mvar: 5.0,
            cost_fixed: 100_000.0,
            cost_per_mvar: 20_000.0,
            approach: Approach::MaxCombine,
            rounding: Rounding::Nearest,
            net_out: false,
            candidates: None,
            seed: 42,
            k_max: cluster.k_max,
            restarts: cluster.restarts,
            reduce_var: cluster.reduce_var,
            min_cluster_size: 3,
            features: FeatureSource::Relaxed,
            feas_tol: nlp.feas_tol,
            opt_tol: nlp.opt_tol,
            max_iter: nlp.max_iter,
            weight_v: OpfOptions::<f64>::default().weight_v,
            eval_mode: EvalMode::OperationalOpf,
            pv_q_support: true,
            plan_as_switchable: true,
            compare_pv_support: true,
            max_failure_share: 0.2,
            max_total_pu: th.max_total_pu,
            max_step_pu: th.max_step_pu,
            max_rounds: 3,
            extra_scenarios: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.top_k == 0 && self.extra_scenarios.is_empty() {
            return bad("top_k must be at least 1");
        }
        if !(self.deadband_plan >= 0.0 && self.deadband_verify >= 0.0) {
            return bad("dead bands must be non-negative");
        }
        if !positive(self.step_mvar) || !(self.min_mvar >= 0.0) {
            return bad("step_mvar must be positive and min_mvar non-negative");
        }
        if !(self.cost_fixed >= 0.0 && self.cost_per_mvar >= 0.0) {
            return bad("costs must be non-negative");
        }
        if !positive(self.feas_tol) || !positive(self.opt_tol) || self.max_iter == 0 {
            return bad("solver tolerances must be positive");
        }
        if !(self.weight_v >= 0.0) {
            return bad("weight_v must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.max_failure_share) {
            return bad("max_failure_share must lie in [0, 1]");
        }
        if !(self.reduce_var > 0.0 && self.reduce_var <= 1.0) {
            return bad("reduce_var must lie in (0, 1]");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1");
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            resolution_minutes: self.resolution_minutes,
            pv_penetration: self.pv_penetration,
            cloud_volatility: self.cloud_volatility,
            seed: self.seed,
            start: self.start_date,
            days: self.days,
            load_noise: self.load_noise,
        }
    }

    fn nlp(&self) -> NlpOptions<f64> {
        NlpOptions {
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
            max_iter: self.max_iter,
            ..NlpOptions::default()
        }
    }

    pub fn planner_options(&self) -> PlannerOptions<f64> {
        PlannerOptions {
            opf: OpfOptions {
                deadband: Some(self.deadband_plan),
                weight_v: self.weight_v,
                candidates: self.candidates.clone(),
                ..OpfOptions::default()
            },
            nlp: self.nlp(),
            rounding: self.rounding,
            net_out: self.net_out,
        }
    }

    pub fn decision_options(&self) -> DecisionOptions {
        let mut d = DecisionOptions {
            min_cluster_size: self.min_cluster_size,
            features: self.features,
            ..DecisionOptions::default()
        };
        d.cluster.seed = self.seed;
        d.cluster.k_max = self.k_max;
        d.cluster.restarts = self.restarts;
        d.cluster.reduce_var = self.reduce_var;
        d
    }

    pub fn eval_options(&self, pv_q_support: bool) -> EvalOptions<f64> {
        EvalOptions {
            mode: self.eval_mode,
            deadband: self.deadband_verify,
            opf: OpfOptions {
                weight_v: self.weight_v,
                ..OpfOptions::default()
            },
            nlp: self.nlp(),
            pv_q_support,
            max_failure_share: self.max_failure_share,
            ..EvalOptions::default()
        }
    }

    pub fn thresholds(&self) -> IterationThresholds {
        IterationThresholds {
            max_total_pu: self.max_total_pu,
            max_step_pu: self.max_step_pu,
        }
    }

    /// The case catalog with step, minimum size and prices taken from the config.
    pub fn catalog_for(&self, net: &Network<f64>) -> EquipmentCatalog<f64> {
        let base = net.mva_base();
        let mut cat = net.catalog().clone();
        cat.step_b = self.step_mvar / base;
        cat.b_plus_min = self.min_mvar / base;
        cat.b_minus_min = self.min_mvar / base;
        cat.cost_fixed = self.cost_fixed;
        cat.cost_cap_per_pu = self.cost_per_mvar * base;
        cat.cost_ind_per_pu = self.cost_per_mvar * base;
        cat
    }
}

/// Loads the case with its catalog adjusted by the config.
pub fn load_network(cfg: &RunConfig) -> Result<Network<f64>> {
    cfg.check()?;
    let raw = load_case::<f64>(&cfg.case_path)?;
    raw.with_catalog(cfg.catalog_for(&raw))
}

/// Loads the network and the profiles, synthesizing a year when no profile file is given.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Network<f64>, ProfileSet<f64>)> {
    let net = load_network(cfg)?;
    let ps = match &cfg.profiles_path {
        Some(p) => load_profiles(p, &net)?,
        None => synthesize_year(&net, &cfg.synth())?,
    };
    Ok((net, ps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub scenarios: usize,
    pub added: Vec<NaiveDateTime>,
    pub cost: f64,
    pub verified_total: Option<f64>,
    pub needs_iteration: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRun {
    pub config: RunConfig,
    pub screening: Vec<ScreenedStep<f64>>,
    pub scenario_plans: Vec<ScenarioPlan<f64>>,
    pub final_plan: FinalPlan<f64>,
    pub rounds: Vec<RoundSummary>,
    pub warnings: Vec<String>,
}

/// Screens the year, plans each selected scenario and combines the plans.
///
/// With `max_rounds > 1` the plan is verified after each round and the worst
/// offending time steps are appended to the scenario set, until verification
/// passes, no new scenario appears or the round limit is hit.
pub fn run_plan(cfg: &RunConfig, net: &Network<f64>, ps: &ProfileSet<f64>) -> Result<PlanRun> {
    cfg.check()?;
    let screening = select_scenarios(ps, net, cfg.top_k)?;
    let mut scenarios: Vec<NaiveDateTime> = screening.iter().map(|s| s.timestamp).collect();
    for t in &cfg.extra_scenarios {
        if ps.index_of(t).is_none() {
            return Err(Error::UnknownTimestamp(crate::timeseries::format_timestamp(t)));
        }
        if !scenarios.contains(t) {
            scenarios.push(*t);
        }
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("no scenarios to plan".into()));
    }
    let popts = cfg.planner_options();
    let dopts = cfg.decision_options();
    let mut warnings = Vec::new();
    let mut rounds = Vec::new();
    let mut plans: Vec<ScenarioPlan<f64>> = Vec::new();
    let mut added = scenarios.clone();
    let mut final_plan;
    loop {
        let planned: BTreeSet<NaiveDateTime> = plans.iter().map(|p| p.timestamp).collect();
        let todo: Vec<NaiveDateTime> = added.iter().filter(|t| !planned.contains(t)).copied().collect();
        plans.extend(plan_scenarios(net, ps, &todo, &popts)?);
        final_plan = decide_with_fallback(&plans, cfg, net, &dopts, &mut warnings)?;
        let round = rounds.len() + 1;
        let mut summary = RoundSummary {
            round,
            scenarios: plans.len(),
            added: added.clone(),
            cost: final_plan.cost,
            verified_total: None,
            needs_iteration: None,
        };
        if round >= cfg.max_rounds {
            rounds.push(summary);
            break;
        }
        let planned_net = apply_plan(net, &final_plan.entries, cfg.plan_as_switchable)?;
        let report = evaluate_year(&planned_net, ps, &cfg.eval_options(cfg.pv_q_support))?;
        let (again, offenders) = needs_iteration(&report, &cfg.thresholds());
        summary.verified_total = Some(report.aggregates.total);
        summary.needs_iteration = Some(again);
        rounds.push(summary);
        let known: BTreeSet<NaiveDateTime> = plans.iter().map(|p| p.timestamp).collect();
        added = offenders
            .into_iter()
            .filter(|t| !known.contains(t))
            .take(cfg.top_k.max(1))
            .collect();
        if !again || added.is_empty() {
            break;
        }
    }
    check_final_plan(&final_plan, net)?;
    Ok(PlanRun {
        config: cfg.clone(),
        screening,
        scenario_plans: plans,
        final_plan,
        rounds,
        warnings,
    })
}

/// The cluster approach cannot work on a single scenario that is too small
/// to form a cluster; the max combination is used instead, with a warning.
fn decide_with_fallback(
    plans: &[ScenarioPlan<f64>],
    cfg: &RunConfig,
    net: &Network<f64>,
    dopts: &DecisionOptions,
    warnings: &mut Vec<String>,
) -> Result<FinalPlan<f64>> {
    if cfg.approach == Approach::ClusterRepresentative && plans.len() == 1 && cfg.min_cluster_size > 1 {
        warnings.push(format!(
            "one scenario cannot form a cluster of {} members; using the max combination",
            cfg.min_cluster_size
        ));
        return decide(plans, Approach::MaxCombine, net, dopts);
    }
    let fp = decide(plans, cfg.approach, net, dopts)?;
    if let Some(p) = &fp.provenance {
        warnings.extend(p.warnings.iter().cloned());
    }
    Ok(fp)
}

/// Yearly aggregates of one configuration of the plan and PV support comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub name: String,
    pub plan_applied: bool,
    pub pv_q_support: bool,
    pub aggregates: Aggregates<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRun {
    pub config: RunConfig,
    pub plan: FinalPlan<f64>,
    pub base: ViolationReport<f64>,
    pub planned: ViolationReport<f64>,
    pub evaluations: Vec<Evaluation>,
    pub reductions: Vec<ReductionRow<f64>>,
    pub needs_iteration: bool,
    pub new_scenarios: Vec<NaiveDateTime>,
}

impl VerifyRun {
    pub fn overall(&self) -> &ReductionRow<f64> {
        self.reductions.iter().find(|r| r.group == "overall").expect("overall row present")
    }
}

/// Re-simulates the year without and with the plan and compares.
pub fn run_verify(cfg: &RunConfig, net: &Network<f64>, ps: &ProfileSet<f64>, plan: &FinalPlan<f64>) -> Result<VerifyRun> {
    cfg.check()?;
    check_final_plan(plan, net)?;
    let planned_net = apply_plan(net, &plan.entries, cfg.plan_as_switchable)?;
    let base = evaluate_year(net, ps, &cfg.eval_options(cfg.pv_q_support))?;
    let planned = evaluate_year(&planned_net, ps, &cfg.eval_options(cfg.pv_q_support))?;

    let mut evaluations = Vec::new();
    let entry = |name: &str, plan_applied, pv, r: &ViolationReport<f64>| Evaluation {
        name: name.to_string(),
        plan_applied,
        pv_q_support: pv,
        aggregates: r.aggregates.clone(),
    };
    if cfg.compare_pv_support && cfg.eval_mode == EvalMode::OperationalOpf {
        let other = !cfg.pv_q_support;
        let base_other = evaluate_year(net, ps, &cfg.eval_options(other))?;
        let planned_other = evaluate_year(&planned_net, ps, &cfg.eval_options(other))?;
        let (b0, b1, p0, p1) = if cfg.pv_q_support {
            (&base_other, &base, &planned_other, &planned)
        } else {
            (&base, &base_other, &planned, &planned_other)
        };
        evaluations.push(entry("base", false, false, b0));
        evaluations.push(entry("pv_support", false, true, b1));
        evaluations.push(entry("plan", true, false, p0));
        evaluations.push(entry("plan_and_pv_support", true, true, p1));
    } else {
        evaluations.push(entry("base", false, cfg.pv_q_support, &base));
        evaluations.push(entry("plan", true, cfg.pv_q_support, &planned));
    }

    let axis: Vec<NaiveDateTime> = base.steps.iter().map(|s| s.timestamp).collect();
    let reductions = reduction_stats(&base, &planned, &default_groups(plan, &axis))?;
    let (again, new_scenarios) = needs_iteration(&planned, &cfg.thresholds());
    let run = VerifyRun {
        config: cfg.clone(),
        plan: plan.clone(),
        base,
        planned,
        evaluations,
        reductions,
        needs_iteration: again,
        new_scenarios,
    };
    check_verify_run(&run)?;
    Ok(run)
}

fn invariant(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("output check failed: {}", what())))
    }
}

/// Checks the published invariants of a final plan against the network it was made for.
pub fn check_final_plan(plan: &FinalPlan<f64>, net: &Network<f64>) -> Result<()> {
    let cat = net.catalog();
    let step = net.pu_to_mvar(cat.step_b);
    let mut seen = BTreeSet::new();
    for e in &plan.entries {
        invariant(net.bus_index(e.bus).is_some(), || format!("bus {} is not in the network", e.bus))?;
        invariant(seen.insert((e.bus, e.kind)), || format!("bus {} listed twice for {:?}", e.bus, e.kind))?;
        let k = e.size_mvar / step;
        invariant(e.size_mvar > 0.0 && (k - k.round()).abs() <= 1e-6, || {
            format!("size {} Mvar at bus {} is not a positive multiple of {step}", e.size_mvar, e.bus)
        })?;
        invariant((net.mvar_to_pu(e.size_mvar) - e.susceptance_pu).abs() <= 1e-9, || {
            format!("susceptance of bus {} disagrees with its size", e.bus)
        })?;
    }
    let cost = investment_cost(&entries_as_controls(&plan.entries), cat);
    invariant((cost - plan.cost).abs() <= 1e-6 * (1.0 + cost.abs()), || {
        format!("plan cost {} differs from the catalog price {cost}", plan.cost)
    })?;
    if let Some(p) = &plan.provenance {
        invariant(p.assignments.iter().all(|a| (1..=p.chosen_k).contains(&a.cluster)), || {
            "cluster labels outside 1..=k".into()
        })?;
    }
    Ok(())
}

/// Checks that aggregates are recomputable from the rows and that percentages follow their definition.
pub fn check_verify_run(run: &VerifyRun) -> Result<()> {
    for r in [&run.base, &run.planned] {
        invariant(Aggregates::of(&r.steps) == r.aggregates, || "aggregates do not match their rows".into())?;
    }
    for row in &run.reductions {
        let expected = (row.base_total > 0.0).then(|| 100.0 * (row.base_total - row.planned_total) / row.base_total);
        let same = match (expected, row.percent_reduction) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * (1.0 + a.abs()),
            _ => false,
        };
        invariant(same, || format!("percent reduction of group {} is inconsistent", row.group))?;
    }
    Ok(())
}

/// Rounds every float in a JSON document to 1e-9 so that files do not depend
/// on summation order below that level.
pub fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            if x.abs() < 1e6 {
                let r = (x * 1e9).round() / 1e9;
                // -0.0 and 0.0 must print the same.
                let r = if r == 0.0 { 0.0 } else { r };
                if let Some(m) = serde_json::Number::from_f64(r) {
                    *n = m;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_floats),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with floats rounded by [`round_floats`].
pub fn to_stable_json<S: Serialize>(value: &S) -> String {
    let mut v = serde_json::to_value(value).expect("serializable output");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable json value");
    s.push('\n');
    s
}

/// Rounds a float for CSV output the same way [`round_floats`] does.
pub fn stable(x: f64) -> f64 {
    if x.abs() < 1e6 {
        let r = (x * 1e9).round() / 1e9;
        if r == 0.0 {
            0.0
        } else {
            r
        }
    } else {
        x
    }
}
