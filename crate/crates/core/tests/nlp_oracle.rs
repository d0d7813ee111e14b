//! The interior-point solver against an independently written penalty solver
//! on the 14-bus planning model at its most violated hour.

mod common;

use std::collections::BTreeSet;

use voltplan_core::nlp::{solve_nlp, NlpOptions, NlpStatus, Start};
use voltplan_core::opf::{build_planning_problem, OpfOptions};
use voltplan_core::planner::select_scenarios;
use voltplan_core::power_flow::{solve_power_flow, ControlSet, PowerFlowOptions};

use common::oracles::Penalty;
use common::{case, year_14bus};

#[test]
fn planning_optimum_agrees_with_penalty_solver() {
    let net = case("case_14bus.json");
    let ps = year_14bus(&net);
    let worst = select_scenarios(&ps, &net, 1).unwrap()[0].timestamp;
    let snap = ps.snapshot_at(ps.index_of(&worst).unwrap(), &net);
    let opf = OpfOptions { deadband: Some(0.002), ..Default::default() };
    let prob = build_planning_problem(&net, &snap, &BTreeSet::new(), &opf).unwrap();
    let pf = solve_power_flow(&net, &snap, &ControlSet::scheduled(&net), &PowerFlowOptions::default()).unwrap();
    let start = prob.start_from(&pf.state, &pf.controls);

    let ipm = solve_nlp(
        &prob.spec,
        &NlpOptions { start: Start::Warm(start.clone()), opt_tol: 1e-10, feas_tol: 1e-10, ..Default::default() },
    );
    assert_eq!(ipm.status, NlpStatus::Optimal);
    assert!(ipm.feasibility <= 1e-6);

    let (x, viol) = Penalty::new(&prob.spec).solve(start);
    assert!(viol <= 1e-8, "penalty solver left violation {viol:e}");
    let oracle = prob.spec.objective(&x);
    let gap = (ipm.objective_value - oracle).abs() / oracle.abs().max(1.0);
    eprintln!("interior point {} penalty {oracle} relative gap {gap:e}", ipm.objective_value);
    assert!(gap <= 1e-6, "interior point {} vs penalty {oracle} (relative gap {gap:e})", ipm.objective_value);
}
