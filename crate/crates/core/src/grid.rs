//! Grid data model, case-file ingestion and validation.
//!
//! All powers, admittances and susceptances are per-unit on the network's
//! `mva_base`. Device ratings quoted in Mvar are defined at 1.0 pu voltage,
//! so `rating_mvar = susceptance_pu * mva_base`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
    Passive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct Bus<T> {
    pub id: u32,
    pub base_kv: T,
    pub bus_kind: BusKind,
    #[serde(default)]
    pub shunt_g: T,
    #[serde(default)]
    pub shunt_b: T,
    #[serde(default)]
    pub is_target_load: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_target: Option<T>,
    #[serde(default)]
    pub v_deadband: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<T>,
    #[serde(default)]
    pub demand_p: T,
    #[serde(default)]
    pub demand_q: T,
    #[serde(default)]
    pub dr_q_min: T,
    #[serde(default)]
    pub dr_q_max: T,
}

fn one<T: Real>() -> T {
    T::one()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct Branch<T> {
    pub from_bus: u32,
    pub to_bus: u32,
    #[serde(default = "default_circuit")]
    pub circuit: String,
    pub series_g: T,
    pub series_b: T,
    #[serde(default)]
    pub charging_b: T,
    #[serde(default = "one")]
    pub tap_ratio: T,
    #[serde(default)]
    pub phase_shift: T,
    pub current_limit: T,
}

fn default_circuit() -> String {
    "1".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct Generator<T> {
    pub bus: u32,
    pub id: String,
    pub p_sched: T,
    pub v_sched: T,
    pub q_min: T,
    pub q_max: T,
    #[serde(default)]
    pub is_slack_unit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct ShuntBlock<T> {
    /// Susceptance per step; negative for reactor blocks.
    pub step_b: T,
    pub max_steps: u32,
    #[serde(default)]
    pub initial_steps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct SwitchedShunt<T> {
    pub bus: u32,
    pub blocks: Vec<ShuntBlock<T>>,
}

/// Aggregated distribution-side PV behind one sub-transmission bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct PvResource<T> {
    pub bus: u32,
    pub s_rating: T,
    pub q_min: T,
    pub q_max: T,
    /// Reactive axis scale of the inverter capability ellipse.
    #[serde(default = "one")]
    pub q_capability_factor: T,
    /// Maximum curtailment as a fraction of the maximum power point.
    #[serde(default = "one")]
    pub max_curtail_fraction: T,
}

/// Discrete sizes and prices of the capacitors and inductors that may be installed.
///
/// The admissible sizes are `{b_min, b_min + step_b, ..., b_max}` per polarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct EquipmentCatalog<T> {
    pub b_plus_min: T,
    pub b_plus_max: T,
    pub b_minus_min: T,
    pub b_minus_max: T,
    pub step_b: T,
    pub cost_fixed: T,
    pub cost_cap_per_pu: T,
    pub cost_ind_per_pu: T,
}

/// On-disk case document. Field names are part of the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct CaseFile<T> {
    pub mva_base: T,
    pub buses: Vec<Bus<T>>,
    pub branches: Vec<Branch<T>>,
    pub generators: Vec<Generator<T>>,
    #[serde(default)]
    pub switched_shunts: Vec<SwitchedShunt<T>>,
    #[serde(default)]
    pub pv_resources: Vec<PvResource<T>>,
    pub equipment_catalog: EquipmentCatalog<T>,
    #[serde(default)]
    pub candidate_exclusions: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub element: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}: {}", self.severity, self.element, self.message)
    }
}

/// Validated, indexed grid model. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    case: CaseFile<T>,
    bus_pos: HashMap<u32, usize>,
    slack_bus: usize,
    slack_unit: usize,
    candidates: Vec<u32>,
}

impl<T: Real> Network<T> {
    /// Validates a case document and builds the indexed network.
    pub fn from_case(case: CaseFile<T>) -> Result<Self> {
        if let Some((what, bus)) = first_dangling(&case) {
            return Err(Error::DanglingReference { what, bus });
        }
        let errors: Vec<Diagnostic> = validate_case(&case)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let bus_pos = case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect::<HashMap<_, _>>();
        let slack_unit = case
            .generators
            .iter()
            .position(|g| g.is_slack_unit)
            .expect("validated: one slack unit");
        let slack_bus = bus_pos[&case.generators[slack_unit].bus];
        let excluded: BTreeSet<u32> = case.candidate_exclusions.iter().copied().collect();
        let candidates = case
            .buses
            .iter()
            .filter(|b| b.is_target_load && !excluded.contains(&b.id))
            .map(|b| b.id)
            .collect();
        Ok(Network {
            case,
            bus_pos,
            slack_bus,
            slack_unit,
            candidates,
        })
    }

    pub fn case(&self) -> &CaseFile<T> {
        &self.case
    }

    pub fn into_case(self) -> CaseFile<T> {
        self.case
    }

    pub fn mva_base(&self) -> T {
        self.case.mva_base
    }

    pub fn buses(&self) -> &[Bus<T>] {
        &self.case.buses
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.case.branches
    }

    pub fn generators(&self) -> &[Generator<T>] {
        &self.case.generators
    }

    pub fn switched_shunts(&self) -> &[SwitchedShunt<T>] {
        &self.case.switched_shunts
    }

    pub fn pv_resources(&self) -> &[PvResource<T>] {
        &self.case.pv_resources
    }

    pub fn catalog(&self) -> &EquipmentCatalog<T> {
        &self.case.equipment_catalog
    }

    pub fn n_buses(&self) -> usize {
        self.case.buses.len()
    }

    /// Position of a bus id in `buses()`.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    pub fn slack_unit(&self) -> usize {
        self.slack_unit
    }

    /// Candidate locations stored with the case (target loads minus case exclusions).
    pub fn candidate_buses(&self) -> &[u32] {
        &self.candidates
    }

    /// Positions of the target load buses, in bus order.
    pub fn target_buses(&self) -> Vec<usize> {
        self.case
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_target_load)
            .map(|(i, _)| i)
            .collect()
    }

    /// Buses holding at least one generator.
    pub fn generator_buses(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .case
            .generators
            .iter()
            .map(|g| self.bus_pos[&g.bus])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn mvar_to_pu(&self, mvar: T) -> T {
        mvar / self.case.mva_base
    }

    pub fn pu_to_mvar(&self, pu: T) -> T {
        pu * self.case.mva_base
    }

    /// Same grid with a replacement equipment catalog.
    pub fn with_catalog(&self, catalog: EquipmentCatalog<T>) -> Result<Self> {
        let mut case = self.case.clone();
        case.equipment_catalog = catalog;
        Network::from_case(case)
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        validate_case(&self.case)
    }
}

/// Candidate locations: target load buses minus the case exclusions and `extra_exclusions`.
pub fn candidate_locations<T: Real>(net: &Network<T>, extra_exclusions: &[u32]) -> Vec<u32> {
    net.candidate_buses()
        .iter()
        .copied()
        .filter(|b| !extra_exclusions.contains(b))
        .collect()
}

/// Parses and validates a case document held in memory. `origin` is used in error messages.
pub fn parse_case<T: Real>(text: &str, origin: &Path) -> Result<Network<T>> {
    let case: CaseFile<T> = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Network::from_case(case)
}

pub fn load_case<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_case(&text, path)
}

pub fn case_to_json<T: Real>(net: &Network<T>) -> String {
    serde_json::to_string_pretty(net.case()).expect("case serializes")
}

pub fn save_case<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = case_to_json(net);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn first_dangling<T>(case: &CaseFile<T>) -> Option<(String, u32)> {
    let ids: BTreeSet<u32> = case.buses.iter().map(|b| b.id).collect();
    let missing = |bus: u32| !ids.contains(&bus);
    for br in &case.branches {
        for bus in [br.from_bus, br.to_bus] {
            if missing(bus) {
                return Some((
                    format!("branch {}-{} ({})", br.from_bus, br.to_bus, br.circuit),
                    bus,
                ));
            }
        }
    }
    for g in &case.generators {
        if missing(g.bus) {
            return Some((format!("generator {} at bus {}", g.id, g.bus), g.bus));
        }
    }
    for s in &case.switched_shunts {
        if missing(s.bus) {
            return Some((format!("switched shunt at bus {}", s.bus), s.bus));
        }
    }
    for p in &case.pv_resources {
        if missing(p.bus) {
            return Some((format!("pv resource at bus {}", p.bus), p.bus));
        }
    }
    for &b in &case.candidate_exclusions {
        if missing(b) {
            return Some(("candidate exclusion".to_string(), b));
        }
    }
    None
}

/// Checks every structural invariant of a case; one diagnostic per violation.
pub fn validate_case<T: Real>(case: &CaseFile<T>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |element: String, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            element,
            message,
        })
    };
    let zero = T::zero();

    if !(case.mva_base > zero) {
        err("network".into(), "mva_base must be positive".into());
    }

    let mut seen = BTreeSet::new();
    let mut slack_buses = Vec::new();
    for b in &case.buses {
        let el = format!("bus {}", b.id);
        if !seen.insert(b.id) {
            err(el.clone(), "duplicate bus id".into());
        }
        if !(b.base_kv > zero) {
            err(el.clone(), "base_kv must be positive".into());
        }
        if b.v_deadband < zero {
            err(el.clone(), "v_deadband must be non-negative".into());
        }
        if b.is_target_load && b.v_target.is_none() {
            err(el.clone(), "target load bus requires v_target".into());
        }
        if let (Some(lo), Some(t)) = (b.v_min, b.v_target) {
            if !(lo < t) {
                err(el.clone(), "v_min must be below v_target".into());
            }
        }
        if let (Some(t), Some(hi)) = (b.v_target, b.v_max) {
            if !(t < hi) {
                err(el.clone(), "v_target must be below v_max".into());
            }
        }
        if let (Some(lo), Some(hi)) = (b.v_min, b.v_max) {
            if !(lo < hi) {
                err(el.clone(), "v_min must be below v_max".into());
            }
        }
        if !(b.dr_q_min <= zero && zero <= b.dr_q_max) {
            err(el.clone(), "demand response range must bracket zero".into());
        }
        if b.bus_kind == BusKind::Slack {
            slack_buses.push(b.id);
        }
    }
    if slack_buses.len() != 1 {
        err(
            "network".into(),
            format!(
                "exactly one slack bus required, found {} {:?}",
                slack_buses.len(),
                slack_buses
            ),
        );
    }

    let mut branch_keys = BTreeSet::new();
    for br in &case.branches {
        let el = format!("branch {}-{} ({})", br.from_bus, br.to_bus, br.circuit);
        if br.from_bus == br.to_bus {
            err(el.clone(), "from_bus equals to_bus".into());
        }
        if !(br.tap_ratio > zero) {
            err(el.clone(), "tap_ratio must be positive".into());
        }
        if !(br.current_limit > zero) {
            err(el.clone(), "current_limit must be positive".into());
        }
        if !branch_keys.insert((br.from_bus, br.to_bus, br.circuit.clone())) {
            err(el, "duplicate (from_bus, to_bus, circuit)".into());
        }
    }

    let slack_units: Vec<&Generator<T>> =
        case.generators.iter().filter(|g| g.is_slack_unit).collect();
    let mut gen_keys = BTreeSet::new();
    for g in &case.generators {
        let el = format!("generator {} at bus {}", g.id, g.bus);
        if g.q_min > g.q_max {
            err(el.clone(), "q_min exceeds q_max".into());
        }
        if !(g.v_sched > zero) {
            err(el.clone(), "v_sched must be positive".into());
        }
        if !gen_keys.insert((g.bus, g.id.clone())) {
            err(el, "duplicate generator id at bus".into());
        }
    }
    match slack_units.as_slice() {
        [g] => {
            if slack_buses.len() == 1 && g.bus != slack_buses[0] {
                err(
                    format!("generator {} at bus {}", g.id, g.bus),
                    "slack unit must sit on the slack bus".into(),
                );
            }
        }
        units => err(
            "network".into(),
            format!("exactly one slack unit required, found {}", units.len()),
        ),
    }

    let mut shunt_buses = BTreeSet::new();
    for s in &case.switched_shunts {
        let el = format!("switched shunt at bus {}", s.bus);
        if !shunt_buses.insert(s.bus) {
            err(el.clone(), "more than one switched shunt at bus".into());
        }
        for (k, blk) in s.blocks.iter().enumerate() {
            if blk.max_steps < 1 {
                err(format!("{el} block {k}"), "max_steps must be at least 1".into());
            }
            if blk.initial_steps > blk.max_steps {
                err(format!("{el} block {k}"), "initial_steps exceeds max_steps".into());
            }
            if blk.step_b == zero {
                err(format!("{el} block {k}"), "step_b must be nonzero".into());
            }
        }
    }

    let mut pv_buses = BTreeSet::new();
    for p in &case.pv_resources {
        let el = format!("pv resource at bus {}", p.bus);
        if !pv_buses.insert(p.bus) {
            err(el.clone(), "more than one pv resource at bus".into());
        }
        if !(p.s_rating > zero) {
            err(el.clone(), "s_rating must be positive".into());
        }
        if !(p.q_min <= zero && zero <= p.q_max) {
            err(el.clone(), "q range must bracket zero".into());
        }
        if !(p.q_capability_factor > zero && p.q_capability_factor <= T::lit(1.5)) {
            err(el.clone(), "q_capability_factor must lie in (0, 1.5]".into());
        }
        if !(p.max_curtail_fraction >= zero && p.max_curtail_fraction <= T::one()) {
            err(el, "max_curtail_fraction must lie in [0, 1]".into());
        }
    }

    let c = &case.equipment_catalog;
    if !(zero < c.b_plus_min && c.b_plus_min <= c.b_plus_max) {
        err("equipment_catalog".into(), "require 0 < b_plus_min <= b_plus_max".into());
    }
    if !(zero < c.b_minus_min && c.b_minus_min <= c.b_minus_max) {
        err("equipment_catalog".into(), "require 0 < b_minus_min <= b_minus_max".into());
    }
    if !(c.step_b > zero) {
        err("equipment_catalog".into(), "step_b must be positive".into());
    }
    if c.cost_fixed < zero || c.cost_cap_per_pu < zero || c.cost_ind_per_pu < zero {
        err("equipment_catalog".into(), "costs must be non-negative".into());
    }

    if let Some((what, bus)) = first_dangling(case) {
        err(what, format!("references unknown bus {bus}"));
    }

    let targets: BTreeSet<u32> = case
        .buses
        .iter()
        .filter(|b| b.is_target_load)
        .map(|b| b.id)
        .collect();
    let gen_buses: BTreeSet<u32> = case.generators.iter().map(|g| g.bus).collect();
    for b in &case.buses {
        if gen_buses.contains(&b.id) && matches!(b.bus_kind, BusKind::Load | BusKind::Passive) {
            out.push(Diagnostic {
                severity: Severity::Warning,
                element: format!("bus {}", b.id),
                message: "bus holds a generator but is not marked slack/generator".into(),
            });
        }
    }
    for &b in &case.candidate_exclusions {
        if !targets.contains(&b) {
            out.push(Diagnostic {
                severity: Severity::Warning,
                element: format!("bus {b}"),
                message: "candidate exclusion is not a target load bus".into(),
            });
        }
    }
    out
}
