//! Random inputs shared by the unit-level suites and the acceptance run.

use std::collections::BTreeMap;

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use voltplan_core::grid::EquipmentCatalog;
use voltplan_core::opf::Polarity;
use voltplan_core::planner::{entries_cost, PlanEntry, ScenarioPlan};
use voltplan_core::power_flow::CandidateControl;
use voltplan_core::{Network, ProfileSet, ScenarioSnapshot};

use super::midnight;

pub fn entry(bus: u32, kind: Polarity, mvar: f64) -> PlanEntry<f64> {
    PlanEntry { bus, kind, size_mvar: mvar, susceptance_pu: mvar / 100.0 }
}

/// 5 Mvar steps from 5 to 40 Mvar, $100k per device plus $20k per Mvar.
pub fn priced_catalog() -> EquipmentCatalog<f64> {
    EquipmentCatalog {
        b_plus_min: 0.05,
        b_plus_max: 0.4,
        b_minus_min: 0.05,
        b_minus_max: 0.4,
        step_b: 0.05,
        cost_fixed: 100_000.0,
        cost_cap_per_pu: 2_000_000.0,
        cost_ind_per_pu: 2_000_000.0,
    }
}

/// Capacitors of 20, 10 and 10 Mvar and inductors of 10, 10, 10, 10 and 5 Mvar.
pub fn eight_device_plan() -> Vec<PlanEntry<f64>> {
    let mut entries: Vec<PlanEntry<f64>> = [20.0, 10.0, 10.0]
        .iter()
        .enumerate()
        .map(|(k, &s)| entry(k as u32 + 1, Polarity::Capacitor, s))
        .collect();
    entries.extend(
        [10.0, 10.0, 10.0, 10.0, 5.0].iter().enumerate().map(|(k, &s)| entry(k as u32 + 10, Polarity::Inductor, s)),
    );
    entries
}

/// Relaxed sizes and the values they round to on a 5 Mvar ladder.
pub const ROUNDING_TABLE: [(f64, f64); 8] = [
    (21.37, 20.0),
    (11.05, 10.0),
    (9.56, 10.0),
    (11.04, 10.0),
    (9.78, 10.0),
    (9.20, 10.0),
    (8.28, 10.0),
    (5.72, 5.0),
];

/// A plan with each candidate polarity present with probability 0.3.
pub fn random_plan(net: &Network, hour: i64, rng: &mut ChaCha8Rng) -> ScenarioPlan<f64> {
    let mut entries = Vec::new();
    let mut relaxed = Vec::new();
    for &bus in net.candidate_buses() {
        let mut c = CandidateControl { bus, x_plus: 0.0, x_minus: 0.0, b_plus: 0.0, b_minus: 0.0 };
        for kind in [Polarity::Capacitor, Polarity::Inductor] {
            if rng.random_bool(0.3) {
                let size = 5.0 * rng.random_range(1..=8) as f64;
                let b = size / 100.0 + rng.random_range(-0.02..0.02);
                match kind {
                    Polarity::Capacitor => (c.x_plus, c.b_plus) = (1.0, b),
                    Polarity::Inductor => (c.x_minus, c.b_minus) = (1.0, b),
                }
                entries.push(entry(bus, kind, size));
            }
        }
        relaxed.push(c);
    }
    ScenarioPlan {
        timestamp: midnight() + Duration::hours(hour),
        cost: entries_cost(&entries, net.catalog()),
        entries,
        loop_iterations: 1,
        pinned_per_iteration: vec![Vec::new()],
        relaxed,
        solve_log: Vec::new(),
    }
}

/// 2 to 12 random plans at distinct hours.
pub fn random_set(net: &Network, rng: &mut ChaCha8Rng) -> Vec<ScenarioPlan<f64>> {
    let n = rng.random_range(2..=12);
    let mut hours: Vec<i64> = (0..200).collect();
    hours.shuffle(rng);
    let mut hours = hours[..n].to_vec();
    hours.sort();
    hours.into_iter().map(|h| random_plan(net, h, rng)).collect()
}

pub fn sizes(entries: &[PlanEntry<f64>]) -> BTreeMap<(u32, Polarity), f64> {
    entries.iter().map(|e| ((e.bus, e.kind), e.size_mvar)).collect()
}

/// Three well-separated clouds of ten points each, seed 7.
pub fn three_clouds() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let centers = [(0.0, 0.0), (10.0, 0.0), (5.0, 9.0)];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &(x, y)) in centers.iter().enumerate() {
        for _ in 0..10 {
            rows.push(vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]);
            labels.push(c);
        }
    }
    (rows, labels)
}

pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// A random hour of the year with load scaled by U(0.7, 1.2) and PV by U(0, 1.3).
pub fn random_snapshot(net: &Network, ps: &ProfileSet, rng: &mut ChaCha8Rng) -> ScenarioSnapshot {
    let k = rng.random_range(0..ps.len());
    let mut s = ps.snapshot_at(k, net);
    let load = rng.random_range(0.7..1.2);
    let pv = rng.random_range(0.0..1.3);
    s.d_p.iter_mut().chain(s.d_q.iter_mut()).for_each(|v| *v *= load);
    s.pv_p_mpp.iter_mut().for_each(|v| *v *= pv);
    s
}
