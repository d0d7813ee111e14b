//! The core is generic over the scalar; these run the power flow in `f32`.

mod common;

use voltplan_core::grid::load_case;
use voltplan_core::power_flow::{solve_power_flow, ControlSet, PowerFlowOptions};
use voltplan_core::timeseries::ScenarioSnapshot;

use common::{fixture, midnight};

fn solve_both(name: &str) -> (Vec<f32>, Vec<f64>) {
    let net32 = load_case::<f32>(fixture(name)).unwrap();
    let net64 = load_case::<f64>(fixture(name)).unwrap();
    let s32 = ScenarioSnapshot::from_case(&net32, midnight());
    let s64 = ScenarioSnapshot::from_case(&net64, midnight());
    let opts = PowerFlowOptions { tol: 1e-4, ..PowerFlowOptions::<f32>::default() };
    let a = solve_power_flow(&net32, &s32, &ControlSet::scheduled(&net32), &opts).unwrap();
    let b = solve_power_flow(&net64, &s64, &ControlSet::scheduled(&net64), &PowerFlowOptions::default()).unwrap();
    assert!(a.converged);
    (a.v_mag, b.v_mag)
}

#[test]
fn single_precision_two_bus() {
    let (a, b) = solve_both("case_2bus.json");
    assert!((a[1] as f64 - b[1]).abs() < 1e-5, "{} vs {}", a[1], b[1]);
}

#[test]
fn single_precision_fourteen_bus() {
    let (a, b) = solve_both("case_14bus.json");
    for (x, y) in a.iter().zip(&b) {
        assert!((*x as f64 - y).abs() < 1e-4, "{x} vs {y}");
    }
}
