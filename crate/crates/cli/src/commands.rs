use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use voltplan_core::decision::FinalPlan;
use voltplan_core::grid::case_to_json;
use voltplan_core::opf::Polarity;
use voltplan_core::pipeline::{
    load_inputs, load_network, run_plan, run_verify, stable, to_stable_json, RunConfig, VerifyRun,
};
use voltplan_core::planner::PlanEntry;
use voltplan_core::power_flow::{residuals, solve_power_flow, ControlSet, PowerFlowOptions};
use voltplan_core::timeseries::{format_timestamp, parse_timestamp, save_profiles, ScenarioSnapshot};
use voltplan_core::verifier::merged_case;
use voltplan_core::{Error, Result};

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn num(x: f64) -> String {
    stable(x).to_string()
}

fn mvar_totals(entries: &[PlanEntry<f64>]) -> (f64, f64) {
    entries.iter().fold((0.0, 0.0), |(c, l), e| match e.kind {
        Polarity::Capacitor => (c + e.size_mvar, l),
        Polarity::Inductor => (c, l + e.size_mvar),
    })
}

fn describe(entries: &[PlanEntry<f64>]) -> String {
    entries
        .iter()
        .map(|e| {
            let kind = match e.kind {
                Polarity::Capacitor => "cap",
                Polarity::Inductor => "ind",
            };
            format!("{}:{kind}:{}", e.bus, e.size_mvar)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn plan(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (net, ps) = load_inputs(cfg)?;
    let run = run_plan(cfg, &net, &ps)?;

    for sp in &run.scenario_plans {
        let path = out.join("scenarios").join(format!("{}.json", format_timestamp(&sp.timestamp).replace(':', "-")));
        write(&path, to_stable_json(&json!({ "config": cfg, "plan": sp })))?;
    }
    write(
        &out.join("final_plan.json"),
        to_stable_json(&json!({
            "config": cfg,
            "plan": run.final_plan,
            "rounds": run.rounds,
            "warnings": run.warnings,
        })),
    )?;
    write(
        &out.join("screening.csv"),
        csv_string(
            &["rank", "timestamp", "deviation_index"],
            run.screening.iter().enumerate().map(|(i, s)| {
                vec![
                    (i + 1).to_string(),
                    format_timestamp(&s.timestamp),
                    s.deviation.map(num).unwrap_or_default(),
                ]
            }),
        ),
    )?;
    let cost_row = |label: &str, stamp: String, entries: &[PlanEntry<f64>], cost: f64| {
        let (cap, ind) = mvar_totals(entries);
        vec![label.to_string(), stamp, entries.len().to_string(), num(cap), num(ind), num(cost), describe(entries)]
    };
    let mut rows: Vec<Vec<String>> = run
        .scenario_plans
        .iter()
        .map(|p| cost_row("scenario", format_timestamp(&p.timestamp), &p.entries, p.cost))
        .collect();
    rows.push(cost_row("final", String::new(), &run.final_plan.entries, run.final_plan.cost));
    write(
        &out.join("costs.csv"),
        csv_string(
            &["row", "timestamp", "devices", "capacitor_mvar", "inductor_mvar", "cost", "equipment"],
            rows,
        ),
    )?;
    write(&out.join("case_plus_plan.json"), case_to_json(&merged_case(&net, &run.final_plan)?))?;
    write(&out.join("config.json"), to_stable_json(cfg))?;

    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    let fp = &run.final_plan;
    let (cap, ind) = mvar_totals(&fp.entries);
    println!(
        "planned {} scenarios in {} round(s); final plan ({}): {} devices, {} Mvar capacitive, {} Mvar inductive, cost {}",
        run.scenario_plans.len(),
        run.rounds.len(),
        json!(fp.approach).as_str().unwrap_or("?"),
        fp.entries.len(),
        cap,
        ind,
        fp.cost
    );
    for e in &fp.entries {
        println!("  bus {:>5}  {:<9}  {:>6} Mvar", e.bus, format!("{:?}", e.kind).to_lowercase(), e.size_mvar);
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn read_plan(path: &Path) -> Result<FinalPlan<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let v: Value = serde_json::from_str(&text).map_err(parse_err)?;
    // Accept the wrapper written by `plan` or a bare plan.
    let inner = match v {
        Value::Object(mut m) if m.contains_key("plan") => m.remove("plan").expect("checked"),
        other => other,
    };
    serde_json::from_value(inner).map_err(parse_err)
}

fn report_csv(run: &VerifyRun) -> String {
    let mut rows: Vec<Vec<String>> = run
        .base
        .steps
        .iter()
        .zip(&run.planned.steps)
        .map(|(b, p)| {
            let o = |v: Option<f64>| v.map(num).unwrap_or_default();
            vec![
                format_timestamp(&b.timestamp),
                o(b.violation_metric),
                o(b.deviation_index),
                o(p.violation_metric),
                o(p.deviation_index),
            ]
        })
        .collect();
    let (b, p) = (&run.base.aggregates, &run.planned.aggregates);
    let agg = |name: &str, x: f64, y: f64| vec![name.to_string(), num(x), String::new(), num(y), String::new()];
    rows.push(agg("mean", b.mean, p.mean));
    rows.push(agg("max", b.max, p.max));
    rows.push(agg("total", b.total, p.total));
    rows.push(agg("count_violated", b.count_violated as f64, p.count_violated as f64));
    rows.push(agg("count_failed", b.count_failed as f64, p.count_failed as f64));
    csv_string(
        &["row", "base_violation", "base_deviation", "planned_violation", "planned_deviation"],
        rows,
    )
}

pub fn verify(cfg: &RunConfig, plan_path: &Path, out: &Path) -> Result<()> {
    let plan = read_plan(plan_path)?;
    let (net, ps) = load_inputs(cfg)?;
    let run = run_verify(cfg, &net, &ps, &plan)?;
    write(&out.join("report.json"), to_stable_json(&run))?;
    write(&out.join("report.csv"), report_csv(&run))?;
    write(&out.join("case_plus_plan.json"), case_to_json(&merged_case(&net, &plan)?))?;

    for e in &run.evaluations {
        println!(
            "{:<20} total {:>12.6}  mean {:>10.6}  violated steps {:>5}  failed {}",
            e.name, e.aggregates.total, e.aggregates.mean, e.aggregates.count_violated, e.aggregates.count_failed
        );
    }
    for r in &run.reductions {
        let pct = r.percent_reduction.map_or("undefined".to_string(), |p| format!("{p:.2}%"));
        println!("reduction {:<12} {:>6} steps  {} -> {}  {pct}", r.group, r.steps, stable(r.base_total), stable(r.planned_total));
    }
    if run.needs_iteration {
        let shown: Vec<String> = run.new_scenarios.iter().take(cfg.top_k).map(format_timestamp).collect();
        println!(
            "another planning round is needed; {} offending steps, worst first: {}",
            run.new_scenarios.len(),
            shown.join(",")
        );
    } else {
        println!("no further planning round needed");
    }
    println!("outputs in {}", out.display());
    Ok(())
}

pub fn powerflow(cfg: &RunConfig, at: Option<&str>, json_out: Option<&Path>) -> Result<()> {
    let (net, snap) = match at {
        Some(ts) => {
            let t = parse_timestamp(ts)?;
            let (net, ps) = load_inputs(cfg)?;
            let k = ps.index_of(&t).ok_or_else(|| Error::UnknownTimestamp(format_timestamp(&t)))?;
            let snap = ps.snapshot_at(k, &net);
            (net, snap)
        }
        None => {
            let net = load_network(cfg)?;
            let snap = ScenarioSnapshot::from_case(&net, cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight"));
            (net, snap)
        }
    };
    let ctrl = ControlSet::scheduled(&net);
    let sol = solve_power_flow(&net, &snap, &ctrl, &PowerFlowOptions::default())?;
    if !sol.converged {
        return Err(Error::NotConverged(format!(
            "{} iterations, largest mismatch {:e}",
            sol.iterations, sol.max_residual
        )));
    }
    let (dp, dq) = residuals(&net, &snap, &sol.state, &sol.controls);
    println!("converged in {} iterations, largest mismatch {:e}", sol.iterations, sol.max_residual);
    println!("{:>6} {:>10} {:>10} {:>12} {:>12}", "bus", "|V| pu", "angle deg", "dP pu", "dQ pu");
    let mut buses = Vec::new();
    for (i, b) in net.buses().iter().enumerate() {
        let (vm, va) = (sol.v_mag[i], sol.state.angle(i).to_degrees());
        println!("{:>6} {:>10.6} {:>10.4} {:>12.3e} {:>12.3e}", b.id, vm, va, dp[i], dq[i]);
        buses.push(json!({ "bus": b.id, "v_mag": stable(vm), "angle_deg": stable(va), "dp": dp[i], "dq": dq[i] }));
    }
    println!("{:>6} {:>6} {:>8} {:>10} {:>10} {:>8}", "from", "to", "circuit", "|I| from", "|I| to", "loading");
    let mut branches = Vec::new();
    for (k, br) in net.branches().iter().enumerate() {
        let mag = |(r, i): (f64, f64)| r.hypot(i);
        let (f, t) = (mag(sol.currents_from[k]), mag(sol.currents_to[k]));
        let loading = br.current_limit.is_finite().then(|| 100.0 * f.max(t) / br.current_limit);
        let shown = loading.map_or("-".to_string(), |l| format!("{l:.1}%"));
        println!("{:>6} {:>6} {:>8} {:>10.5} {:>10.5} {:>8}", br.from_bus, br.to_bus, br.circuit, f, t, shown);
        branches.push(json!({
            "from_bus": br.from_bus, "to_bus": br.to_bus, "circuit": br.circuit,
            "current_from": stable(f), "current_to": stable(t), "loading_percent": loading.map(stable),
        }));
    }
    if let Some(path) = json_out {
        let doc = json!({
            "timestamp": format_timestamp(&snap.timestamp),
            "iterations": sol.iterations,
            "max_residual": sol.max_residual,
            "q_limited_buses": sol.q_limited_buses,
            "buses": buses,
            "branches": branches,
        });
        write(path, to_stable_json(&doc))?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (net, ps) = load_inputs(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_profiles(&ps, &net, out)?;
    let (load, pv) = ps.energy_totals();
    println!(
        "{} steps written to {}; PV energy is {:.1}% of load energy",
        ps.len(),
        out.display(),
        if load > 0.0 { 100.0 * pv / load } else { 0.0 }
    );
    Ok(())
}
