mod common;

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use voltplan_core::opf::Polarity;
use voltplan_core::power_flow::{solve_power_flow, ControlSet, PowerFlowOptions};
use voltplan_core::verifier::{
    apply_plan, evaluate_year, needs_iteration, operational_solution, reduction_stats, Aggregates, EvalMode,
    EvalOptions, IterationThresholds, StepRecord, ViolationReport,
};
use voltplan_core::timeseries::{synthesize_year, SynthConfig};
use voltplan_core::{Network, ScenarioSnapshot};

use common::samples::entry;
use common::{case, midnight};

fn slack_setpoint_flow(net: &Network, snap: &ScenarioSnapshot) -> voltplan_core::PowerFlowSolution {
    solve_power_flow(net, snap, &ControlSet::scheduled(net), &PowerFlowOptions::default()).unwrap()
}

#[test]
fn reactor_steps_pull_voltage_into_band() {
    let net = case("case_3bus_reactor.json");
    let mut snap = ScenarioSnapshot::from_case(&net, midnight());
    snap.pv_p_mpp[0] = 0.5;
    let bus3 = net.bus_index(3).unwrap();
    let before = slack_setpoint_flow(&net, &snap).v_mag[bus3];
    assert!(before > 1.005, "PV export should push bus 3 above its band, got {before}");

    let sol = operational_solution(&net, &snap, None, &EvalOptions::default()).expect("operational solve");
    let steps = sol.controls.shunt_steps[0][0];
    assert!(steps >= 1.0 && steps == steps.round(), "{steps} reactor steps");
    let after = sol.v_mag[bus3];
    assert!((after - 1.0).abs() <= 0.005 + 1e-6, "bus 3 at {after} with {steps} steps");
}

#[test]
fn unloaded_network_has_no_losses() {
    let net = case("case_5bus_toy.json");
    let mut snap = ScenarioSnapshot::from_case(&net, midnight());
    snap.d_p.iter_mut().chain(snap.d_q.iter_mut()).for_each(|v| *v = 0.0);
    let sol = operational_solution(&net, &snap, None, &EvalOptions::default()).expect("operational solve");
    assert!(sol.controls.p_slack.abs() < 1e-6, "slack supplies {}", sol.controls.p_slack);
}

#[test]
fn plan_equipment_changes_bus_susceptance() {
    let net = case("case_14bus.json");
    let same = apply_plan(&net, &[], true).unwrap();
    assert_eq!(same.case(), net.case());

    let bus = net.bus_index(9).unwrap();
    let fixed = apply_plan(&net, &[entry(9, Polarity::Capacitor, 10.0)], false).unwrap();
    assert!((fixed.buses()[bus].shunt_b - net.buses()[bus].shunt_b - 0.10).abs() < 1e-12);

    let both = apply_plan(&net, &[entry(9, Polarity::Capacitor, 10.0), entry(9, Polarity::Inductor, 5.0)], false).unwrap();
    assert!((both.buses()[bus].shunt_b - net.buses()[bus].shunt_b - 0.05).abs() < 1e-12);

    let banked = apply_plan(&net, &[entry(9, Polarity::Inductor, 15.0)], true).unwrap();
    let shunt = banked.switched_shunts().iter().find(|s| s.bus == 9).unwrap();
    let block = shunt.blocks.last().unwrap();
    assert_eq!((block.max_steps, block.initial_steps), (3, 0));
    assert!((block.step_b + 0.05).abs() < 1e-12);

    assert!(apply_plan(&net, &[entry(99, Polarity::Capacitor, 5.0)], false).is_err());
}

fn report(values: &[Option<f64>]) -> ViolationReport<f64> {
    let steps: Vec<StepRecord<f64>> = values
        .iter()
        .enumerate()
        .map(|(k, v)| StepRecord {
            timestamp: midnight() + Duration::hours(k as i64),
            converged: v.is_some(),
            deviation_index: *v,
            violation_metric: *v,
        })
        .collect();
    ViolationReport {
        mode: EvalMode::OperationalOpf,
        deadband: 0.005,
        pv_q_support: true,
        aggregates: Aggregates::of(&steps),
        steps,
    }
}

#[test]
fn reductions_follow_their_definition() {
    let base = report(&[Some(0.2), Some(0.0), Some(0.3), None]);
    let rows = reduction_stats(&base, &base, &Vec::new()).unwrap();
    assert_eq!(rows[0].percent_reduction, Some(0.0));
    assert_eq!(rows[0].steps, 3);

    let clean = report(&[Some(0.0), Some(0.0), Some(0.0), Some(0.0)]);
    let groups = vec![("first".to_string(), BTreeSet::from([midnight()]))];
    let rows = reduction_stats(&base, &clean, &groups).unwrap();
    assert_eq!(rows[0].percent_reduction, Some(100.0));
    assert!((rows[0].absolute_reduction - 0.5).abs() < 1e-12);
    assert_eq!((rows[1].group.as_str(), rows[1].steps), ("first", 1));

    let none = reduction_stats(&clean, &clean, &Vec::new()).unwrap();
    assert_eq!(none[0].percent_reduction, None);
    assert!(reduction_stats(&base, &report(&[Some(0.0)]), &Vec::new()).is_err());
}

#[test]
fn iteration_is_needed_only_past_thresholds() {
    let th = IterationThresholds { max_total_pu: 1.0, max_step_pu: 0.01 };
    assert_eq!(needs_iteration(&report(&[Some(0.0); 5]), &th), (false, Vec::new()));

    let (again, offenders) = needs_iteration(&report(&[Some(0.0), Some(0.02), Some(0.005), Some(0.03)]), &th);
    assert!(again);
    assert_eq!(offenders, vec![midnight() + Duration::hours(3), midnight() + Duration::hours(1)]);

    // Total exceeded by many small steps: every violated step is returned.
    let mut small = vec![Some(0.008); 200];
    small[7] = Some(0.0);
    let (again, offenders) = needs_iteration(&report(&small), &th);
    assert!(again);
    assert_eq!(offenders.len(), 199);
}

#[test]
fn empty_plan_changes_nothing_over_a_week() {
    let net = case("case_14bus.json");
    let week = SynthConfig { start: NaiveDate::from_ymd_opt(2025, 5, 24).unwrap(), days: 7, ..Default::default() };
    let ps = synthesize_year(&net, &week).unwrap();
    let opts = EvalOptions { deadband: 0.005, ..Default::default() };
    let base = evaluate_year(&net, &ps, &opts).unwrap();
    let planned = evaluate_year(&apply_plan(&net, &[], true).unwrap(), &ps, &opts).unwrap();
    assert_eq!(base, planned);
    let rows = reduction_stats(&base, &planned, &Vec::new()).unwrap();
    assert!(base.aggregates.total > 0.0, "the week should show violations");
    assert_eq!(rows[0].percent_reduction, Some(0.0));
}
