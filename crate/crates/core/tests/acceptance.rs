//! One PASS or FAIL line per acceptance criterion, then a single assertion
//! that all of them passed. Each criterion runs against independent oracles
//! from `common::oracles`.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use voltplan_core::decision::{cluster_plans, combine_max, decide, pca_contributions, Approach, ClusterOptions, DecisionOptions};
use voltplan_core::linalg::Matrix;
use voltplan_core::nlp::{solve_nlp, NlpOptions, NlpStatus, Start};
use voltplan_core::opf::{build_operational_problem, build_planning_problem, OpfOptions, Polarity};
use voltplan_core::pipeline::{load_inputs, run_plan, run_verify, to_stable_json, RunConfig};
use voltplan_core::planner::{entries_cost, plan_scenario, round_sizes, PlannerOptions, Rounding, ScenarioPlan, SizeLadder};
use voltplan_core::power_flow::{residual_jacobian, residuals, solve_power_flow, ControlSet, PowerFlowOptions};
use voltplan_core::{Error, ScenarioSnapshot, VoltageState};

use common::oracles::{brute_force_optimum, check_point, fixed_point_oracle, interior_point};
use common::samples::{
    eight_device_plan, priced_catalog, random_plan, random_set, random_snapshot, same_partition, sizes, three_clouds,
    ROUNDING_TABLE,
};
use common::{case, fixture, midnight, rel_err, year_14bus};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn power_flow_correctness() -> Outcome {
    let opts = PowerFlowOptions::default();
    let net = case("case_2bus.json");
    let snap = ScenarioSnapshot::from_case(&net, midnight());
    let sol = solve_power_flow(&net, &snap, &ControlSet::scheduled(&net), &opts).map_err(|e| e.to_string())?;
    let px: f64 = 0.5 * 0.1;
    let exact = ((1.0 + (1.0 - 4.0 * px * px).sqrt()) / 2.0).sqrt();
    let v2 = sol.v_mag[1];
    ensure!((v2 - exact).abs() <= 1e-6, "2-bus |V2| {v2} vs closed form {exact}");
    ensure!((v2 - 0.99875).abs() < 5e-6, "2-bus |V2| {v2} does not round to 0.99875");

    let net = case("case_14bus.json");
    let snap = ScenarioSnapshot::from_case(&net, midnight());
    let ctrl = ControlSet::scheduled(&net);
    let sol = solve_power_flow(&net, &snap, &ctrl, &opts).map_err(|e| e.to_string())?;
    ensure!(sol.converged, "14-bus did not converge");
    ensure!(sol.iterations <= 6, "14-bus took {} iterations", sol.iterations);
    let (dp, dq) = residuals(&net, &snap, &sol.state, &sol.controls);
    let resid = dp.iter().chain(&dq).fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(resid <= 1e-8, "14-bus residual {resid:e}");
    let oracle = fixed_point_oracle(&net, &snap);
    let mut worst: f64 = 0.0;
    for (i, o) in oracle.iter().enumerate() {
        let (vr, vi) = sol.state.at(i);
        worst = worst.max((Complex64::new(vr, vi) - o).norm());
    }
    ensure!(worst <= 1e-6, "14-bus differs from the fixed-point oracle by {worst:e}");

    let reps = 20;
    let t = Instant::now();
    for _ in 0..reps {
        solve_power_flow(&net, &snap, &ctrl, &opts).map_err(|e| e.to_string())?;
    }
    let ms = 1e3 * t.elapsed().as_secs_f64() / reps as f64;
    ensure!(ms < 50.0, "{ms:.2} ms per 14-bus solve");
    Ok(format!(
        "|V2| = {v2:.6} (closed form {exact:.6}); 14-bus {} iterations, residual {resid:.1e}, oracle gap {worst:.1e} pu, {ms:.2} ms per solve",
        sol.iterations
    ))
}

fn power_flow_jacobian_error(rng: &mut ChaCha8Rng, points: usize) -> f64 {
    let net = case("case_14bus.json");
    let n = net.n_buses();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let mut snap = ScenarioSnapshot::from_case(&net, midnight());
        snap.d_p.iter_mut().chain(snap.d_q.iter_mut()).for_each(|v| *v *= rng.random_range(0.3..1.5));
        snap.pv_p_mpp.iter_mut().for_each(|v| *v = rng.random_range(0.0..0.3));
        let mut ctrl = ControlSet::scheduled(&net);
        ctrl.pv_q.iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        let state = VoltageState {
            v_r: (0..n).map(|_| rng.random_range(0.9..1.1)).collect(),
            v_i: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        };
        let jac = residual_jacobian(&net, &snap, &state, &ctrl);
        let stack = |s: &VoltageState| {
            let (dp, dq) = residuals(&net, &snap, s, &ctrl);
            [dp, dq].concat()
        };
        for col in 0..2 * n {
            let (mut plus, mut minus) = (state.clone(), state.clone());
            let (p, m) = if col < n { (&mut plus.v_r[col], &mut minus.v_r[col]) } else { (&mut plus.v_i[col - n], &mut minus.v_i[col - n]) };
            *p += h;
            *m -= h;
            let (fp, fm) = (stack(&plus), stack(&minus));
            for row in 0..2 * n {
                worst = worst.max(rel_err(jac[(row, col)], (fp[row] - fm[row]) / (2.0 * h)));
            }
        }
    }
    worst
}

fn derivative_suite() -> Outcome {
    let points = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pf = power_flow_jacobian_error(&mut rng, points);

    let net = case("case_14bus.json");
    let ps = year_14bus(&net);
    let snaps: Vec<ScenarioSnapshot> = [3, 12, 4392, 4399, 8000].iter().map(|&k| ps.snapshot_at(k, &net)).collect();
    let pinned: BTreeSet<(u32, Polarity)> = [(9, Polarity::Capacitor), (12, Polarity::Inductor)].into();
    let per_snapshot = points / snaps.len();
    let (mut planning, mut operational) = (0.0f64, 0.0f64);
    for (s, snap) in snaps.iter().enumerate() {
        let fixed = if s % 2 == 0 { BTreeSet::new() } else { pinned.clone() };
        let opf = OpfOptions { deadband: Some(0.002), ..Default::default() };
        let prob = build_planning_problem(&net, snap, &fixed, &opf).map_err(|e| e.to_string())?;
        for _ in 0..per_snapshot {
            let x = interior_point(&prob.spec, &mut rng);
            planning = planning.max(check_point(&prob.spec, &x, &mut rng));
        }
        let prob = build_operational_problem(&net, snap, &OpfOptions::default()).map_err(|e| e.to_string())?;
        for _ in 0..per_snapshot {
            let x = interior_point(&prob.spec, &mut rng);
            operational = operational.max(check_point(&prob.spec, &x, &mut rng));
        }
    }
    let worst = pf.max(planning).max(operational);
    let detail = format!(
        "{points} points each; worst relative error power flow {pf:.1e}, planning {planning:.1e}, operational {operational:.1e}"
    );
    ensure!(worst <= 1e-6, "{detail}");
    Ok(detail)
}

fn relaxation_bound() -> Outcome {
    let net = case("case_5bus_toy.json");
    let snap = ScenarioSnapshot::from_case(&net, midnight());
    let t = Instant::now();
    let (best, enumerated) = brute_force_optimum(&net, &snap, &[0.0, 5.0, 10.0]);
    let secs = t.elapsed().as_secs_f64();
    ensure!(enumerated <= 81, "{enumerated} combinations enumerated");
    ensure!(secs < 30.0, "brute force took {secs:.1} s");
    let best = best.ok_or("no discrete combination is feasible")?;

    let prob = build_planning_problem(&net, &snap, &BTreeSet::new(), &OpfOptions::default()).map_err(|e| e.to_string())?;
    let pf = solve_power_flow(&net, &snap, &ControlSet::scheduled(&net), &PowerFlowOptions::default()).map_err(|e| e.to_string())?;
    let start = Start::Warm(prob.start_from(&pf.state, &pf.controls));
    let sol = solve_nlp(&prob.spec, &NlpOptions { start, ..Default::default() });
    ensure!(sol.status == NlpStatus::Optimal, "relaxed solve ended {:?}", sol.status);
    let relaxed = sol.objective_value;
    ensure!(relaxed <= best + 1e-6 * best.max(1.0), "relaxed {relaxed} above discrete optimum {best}");
    Ok(format!("relaxed {relaxed:.2} <= discrete {best:.2} over {enumerated} combinations in {secs:.2} s"))
}

fn planning_loop() -> Outcome {
    let net = case("case_14bus.json");
    let ps = year_14bus(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let snaps: Vec<ScenarioSnapshot> = (0..100).map(|_| random_snapshot(&net, &ps, &mut rng)).collect();
    let opts = PlannerOptions { opf: OpfOptions { deadband: Some(0.002), ..Default::default() }, ..Default::default() };
    let limit = net.candidate_buses().len() + 1;
    let results: Vec<_> = snaps.par_iter().map(|s| plan_scenario(&net, s, &opts)).collect();
    let (mut planned, mut max_iter) = (0, 0);
    for (s, r) in snaps.iter().zip(results) {
        let plan = match r {
            Ok(p) => p,
            Err(Error::Infeasible { .. }) => continue,
            Err(e) => return Err(format!("{}: {e}", s.timestamp)),
        };
        planned += 1;
        max_iter = max_iter.max(plan.loop_iterations);
        ensure!(plan.loop_iterations <= limit, "{}: {} iterations", s.timestamp, plan.loop_iterations);
        for w in plan.pinned_per_iteration.windows(2) {
            let (a, b): (BTreeSet<_>, BTreeSet<_>) = (w[0].iter().collect(), w[1].iter().collect());
            ensure!(a.is_subset(&b) && a.len() < b.len(), "{}: pinned set {:?} -> {:?}", s.timestamp, w[0], w[1]);
        }
    }
    ensure!(planned >= 95, "only {planned} of 100 snapshots planned");

    let ladder = SizeLadder { step_mvar: 5.0, min_mvar: 5.0, max_mvar: 100.0, mode: Rounding::Nearest };
    for (relaxed, expected) in ROUNDING_TABLE {
        let got = round_sizes(relaxed / 100.0, 100.0, &ladder);
        ensure!((got - expected).abs() < 1e-9, "{relaxed} Mvar rounds to {got}, expected {expected}");
    }
    Ok(format!(
        "{planned}/100 snapshots planned, at most {max_iter} of {limit} iterations, pinned sets strictly growing; {} rounding values reproduced",
        ROUNDING_TABLE.len()
    ))
}

fn decision_layer() -> Outcome {
    let net = case("case_14bus.json");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sets: Vec<Vec<ScenarioPlan<f64>>> = (0..1000).map(|_| random_set(&net, &mut rng)).collect();
    for set in &sets {
        let refs: Vec<&ScenarioPlan<f64>> = set.iter().collect();
        let combined = combine_max(&refs, &net).map_err(|e| e.to_string())?;
        let twice = combine_max(&[&set[0], &set[0]], &net).map_err(|e| e.to_string())?;
        ensure!(sizes(&twice.entries) == sizes(&set[0].entries), "combine_max is not idempotent");
        let mut shuffled = refs.clone();
        shuffled.shuffle(&mut rng);
        ensure!(combine_max(&shuffled, &net).map_err(|e| e.to_string())?.entries == combined.entries, "combine_max depends on order");
        let out = sizes(&combined.entries);
        for p in set {
            for e in &p.entries {
                ensure!(out.get(&(e.bus, e.kind)).is_some_and(|&s| s >= e.size_mvar), "combined plan below a member at bus {}", e.bus);
            }
        }
    }

    let compared: Result<Vec<bool>, String> = sets
        .par_iter()
        .enumerate()
        .map(|(k, set)| {
            let opts = DecisionOptions { min_cluster_size: 1 + k % 2, ..Default::default() };
            let max = decide(set, Approach::MaxCombine, &net, &opts).map_err(|e| e.to_string())?;
            match decide(set, Approach::ClusterRepresentative, &net, &opts) {
                Ok(cl) if cl.cost <= max.cost + 1e-6 => Ok(true),
                Ok(cl) => Err(format!("cluster cost {} above max cost {}", cl.cost, max.cost)),
                Err(Error::InvalidInput(_)) => Ok(false),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect();
    let compared = compared?.into_iter().filter(|&c| c).count();
    ensure!(compared >= 900, "only {compared} sets produced a cluster decision");

    let (rows, labels) = three_clouds();
    let cm = cluster_plans(&Matrix::from_rows(&rows), &ClusterOptions { reduce_var: 0.99, ..Default::default() })
        .map_err(|e| e.to_string())?;
    ensure!(cm.chosen_k == 3, "BIC chose k = {}", cm.chosen_k);
    ensure!(same_partition(&cm.assignments, &labels), "clusters differ from the generating partition");

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, p) = (rng.random_range(2..15), rng.random_range(1..8));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c = pca_contributions(&Matrix::from_rows(&rows)).map_err(|e| e.to_string())?;
        for comp in c.per_component.iter().chain([&c.combined]) {
            worst = worst.max((comp.iter().sum::<f64>() - 100.0).abs());
        }
    }
    ensure!(worst <= 1e-9, "contributions miss 100 by {worst:e}");

    let set: Vec<ScenarioPlan<f64>> = (0..12).map(|h| random_plan(&net, h, &mut rng)).collect();
    let opts = DecisionOptions { min_cluster_size: 1, ..Default::default() };
    let runs: Result<Vec<String>, String> = (0..2)
        .map(|_| {
            decide(&set, Approach::ClusterRepresentative, &net, &opts)
                .map(|fp| serde_json::to_string(&fp).expect("json"))
                .map_err(|e| e.to_string())
        })
        .collect();
    let runs = runs?;
    ensure!(runs[0] == runs[1], "cluster decision differs between identical runs");
    Ok(format!(
        "max algebra on 1000 sets; cluster <= max on {compared} sets; k = 3 recovered; contributions within {worst:.1e} of 100; repeatable"
    ))
}

fn year_config() -> RunConfig {
    RunConfig {
        case_path: fixture("case_14bus.json"),
        top_k: 10,
        deadband_verify: 0.005,
        ..RunConfig::default()
    }
}

fn end_to_end() -> Outcome {
    let cfg = year_config();
    let t = Instant::now();
    let (plan, verify) = single_threaded(|| -> Result<_, Error> {
        let (net, ps) = load_inputs(&cfg)?;
        let plan = run_plan(&cfg, &net, &ps)?;
        let verify = run_verify(&cfg, &net, &ps, &plan.final_plan)?;
        Ok((plan, verify))
    })
    .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let steps = verify.base.steps.len();
    ensure!(steps == 8760, "{steps} steps evaluated");
    let overall = verify.overall();
    let reduction = overall.percent_reduction.ok_or("base year has no violation")?;
    let total = |name: &str| verify.evaluations.iter().find(|e| e.name == name).map(|e| e.aggregates.total);
    let (base, support) = (total("base").ok_or("no base evaluation")?, total("pv_support").ok_or("no pv_support evaluation")?);
    let detail = format!(
        "{} devices, ${:.0}; violation {:.2} -> {:.2} pu ({reduction:.1}% reduction); PV support alone {base:.2} -> {support:.2} pu; {secs:.0} s single-threaded",
        plan.final_plan.entries.len(),
        plan.final_plan.cost,
        overall.base_total,
        overall.planned_total
    );
    ensure!(reduction >= 90.0, "{detail}");
    ensure!(support < base, "{detail}");
    ensure!(secs < 600.0, "{detail}");
    Ok(detail)
}

fn plan_cost_arithmetic() -> Outcome {
    let cost = entries_cost(&eight_device_plan(), &priced_catalog());
    ensure!((cost - 2.5e6).abs() < 1e-6, "eight-device plan costs ${cost}");
    Ok(format!("eight-device plan costs ${:.2}M", cost / 1e6))
}

fn determinism() -> Outcome {
    let cfg = RunConfig { days: 21, top_k: 6, ..year_config() };
    let once = || -> Result<(String, String), String> {
        single_threaded(|| {
            let (net, ps) = load_inputs(&cfg)?;
            let plan = run_plan(&cfg, &net, &ps)?;
            let verify = run_verify(&cfg, &net, &ps, &plan.final_plan)?;
            Ok((to_stable_json(&plan), to_stable_json(&verify)))
        })
        .map_err(|e: Error| e.to_string())
    };
    let (plan_a, report_a) = once()?;
    let (plan_b, report_b) = once()?;
    ensure!(plan_a == plan_b, "plan outputs differ");
    ensure!(report_a == report_b, "report outputs differ");
    Ok(format!("plan ({} bytes) and report ({} bytes) identical across two runs", plan_a.len(), report_a.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("power-flow correctness", power_flow_correctness),
        ("derivative suite", derivative_suite),
        ("relaxation bound", relaxation_bound),
        ("planning loop and rounding", planning_loop),
        ("decision layer", decision_layer),
        ("end-to-end year", end_to_end),
        ("plan cost arithmetic", plan_cost_arithmetic),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        // Written to the handle directly so the lines show even when the harness captures output.
        let line = match outcome {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(detail) => {
                failed.push(name);
                format!("FAIL {name}: {detail}")
            }
        };
        writeln!(std::io::stdout().lock(), "{line}").expect("stdout");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
