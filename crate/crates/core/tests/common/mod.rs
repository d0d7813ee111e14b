#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;
use voltplan_core::grid::load_case;
use voltplan_core::timeseries::{synthesize_year, SynthConfig};
use voltplan_core::{Network, ProfileSet};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn case(name: &str) -> Network {
    load_case(fixture(name)).expect("fixture loads")
}

pub fn midnight() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2025, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

/// The default synthetic year for the 14-bus fixture.
pub fn year_14bus(net: &Network) -> ProfileSet {
    synthesize_year(net, &SynthConfig::default()).expect("synthesis")
}

/// Largest of `|a - b| / max(1, |a|)` over paired entries.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}
pub mod oracles;
pub mod samples;
