//! Year-long load and PV profiles, per-step snapshots, and a synthetic year generator.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::scalar::Real;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|e| Error::InvalidInput(format!("bad timestamp {s:?}: {e}")))
}

/// Per-element series on a shared, uniform timestamp axis.
///
/// Series are indexed `[element][step]`, with elements in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSet<T> {
    pub timestamps: Vec<NaiveDateTime>,
    pub load_p: Vec<Vec<T>>,
    pub load_q: Vec<Vec<T>>,
    pub pv_p_mpp: Vec<Vec<T>>,
    pub pv_q_min: Vec<Option<Vec<T>>>,
    pub pv_q_max: Vec<Option<Vec<T>>>,
}

/// One time step's loads and PV operating limits, bound to a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSnapshot<T> {
    pub timestamp: NaiveDateTime,
    pub d_p: Vec<T>,
    pub d_q: Vec<T>,
    pub pv_p_mpp: Vec<T>,
    pub pv_q_min: Vec<T>,
    pub pv_q_max: Vec<T>,
}

impl<T: Real> ScenarioSnapshot<T> {
    /// The case's own demand with PV at zero output.
    pub fn from_case(net: &Network<T>, timestamp: NaiveDateTime) -> Self {
        ScenarioSnapshot {
            timestamp,
            d_p: net.buses().iter().map(|b| b.demand_p).collect(),
            d_q: net.buses().iter().map(|b| b.demand_q).collect(),
            pv_p_mpp: vec![T::zero(); net.pv_resources().len()],
            pv_q_min: net.pv_resources().iter().map(|p| p.q_min).collect(),
            pv_q_max: net.pv_resources().iter().map(|p| p.q_max).collect(),
        }
    }

    pub fn check_against(&self, net: &Network<T>) -> Result<()> {
        let nb = net.n_buses();
        let npv = net.pv_resources().len();
        if self.d_p.len() != nb
            || self.d_q.len() != nb
            || self.pv_p_mpp.len() != npv
            || self.pv_q_min.len() != npv
            || self.pv_q_max.len() != npv
        {
            return Err(Error::InvalidInput(
                "snapshot does not match network dimensions".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Real> ProfileSet<T> {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn index_of(&self, t: &NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(t).ok()
    }

    /// Snapshot at step `k`; PV reactive limits fall back to the resource bounds.
    pub fn snapshot_at(&self, k: usize, net: &Network<T>) -> ScenarioSnapshot<T> {
        let pvs = net.pv_resources();
        ScenarioSnapshot {
            timestamp: self.timestamps[k],
            d_p: self.load_p.iter().map(|s| s[k]).collect(),
            d_q: self.load_q.iter().map(|s| s[k]).collect(),
            pv_p_mpp: self.pv_p_mpp.iter().map(|s| s[k]).collect(),
            pv_q_min: self
                .pv_q_min
                .iter()
                .zip(pvs)
                .map(|(s, p)| s.as_ref().map_or(p.q_min, |s| s[k]))
                .collect(),
            pv_q_max: self
                .pv_q_max
                .iter()
                .zip(pvs)
                .map(|(s, p)| s.as_ref().map_or(p.q_max, |s| s[k]))
                .collect(),
        }
    }

    /// Total real load and PV energy over the horizon, in pu-steps.
    pub fn energy_totals(&self) -> (T, T) {
        let load = self.load_p.iter().flatten().copied().sum();
        let pv = self.pv_p_mpp.iter().flatten().copied().sum();
        (load, pv)
    }
}

pub fn snapshot<T: Real>(
    ps: &ProfileSet<T>,
    t: &NaiveDateTime,
    net: &Network<T>,
) -> Result<ScenarioSnapshot<T>> {
    let k = ps
        .index_of(t)
        .ok_or_else(|| Error::UnknownTimestamp(format_timestamp(t)))?;
    Ok(ps.snapshot_at(k, net))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Field {
    LoadP,
    LoadQ,
    PvPmpp,
    PvQmin,
    PvQmax,
}

fn parse_field(kind: &str, field: &str) -> Option<Field> {
    match (kind, field) {
        ("bus", "p") => Some(Field::LoadP),
        ("bus", "q") => Some(Field::LoadQ),
        ("pv", "p_mpp") => Some(Field::PvPmpp),
        ("pv", "q_min") => Some(Field::PvQmin),
        ("pv", "q_max") => Some(Field::PvQmax),
        _ => None,
    }
}

/// Reads the long-format profile CSV (`timestamp,element_kind,element_id,field,value`).
pub fn load_profiles<T: Real>(path: impl AsRef<Path>, net: &Network<T>) -> Result<ProfileSet<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_profiles(file, net)
}

pub fn read_profiles<T: Real, R: std::io::Read>(reader: R, net: &Network<T>) -> Result<ProfileSet<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Profile(e.to_string()))?
        .clone();
    let expected = ["timestamp", "element_kind", "element_id", "field", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Profile(format!(
            "header must be {}",
            expected.join(",")
        )));
    }
    let pv_pos: BTreeMap<u32, usize> = net
        .pv_resources()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.bus, i))
        .collect();

    let mut ts_cache: BTreeMap<String, NaiveDateTime> = BTreeMap::new();
    let mut series: BTreeMap<(Field, usize), BTreeMap<NaiveDateTime, f64>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1usize;
    while rdr
        .read_record(&mut record)
        .map_err(|e| Error::Profile(e.to_string()))?
    {
        line += 1;
        let ts_raw = &record[0];
        let ts = match ts_cache.get(ts_raw) {
            Some(t) => *t,
            None => {
                let t = parse_timestamp(ts_raw)
                    .map_err(|e| Error::Profile(format!("line {line}: {e}")))?;
                ts_cache.insert(ts_raw.to_string(), t);
                t
            }
        };
        let kind = &record[1];
        let id: u32 = record[2]
            .parse()
            .map_err(|_| Error::Profile(format!("line {line}: bad element id {:?}", &record[2])))?;
        let field = parse_field(kind, &record[3]).ok_or_else(|| {
            Error::Profile(format!(
                "line {line}: unknown field {:?} for element kind {kind:?}",
                &record[3]
            ))
        })?;
        let value: f64 = record[4]
            .parse()
            .map_err(|_| Error::Profile(format!("line {line}: bad value {:?}", &record[4])))?;
        let pos = match field {
            Field::LoadP | Field::LoadQ => net.bus_index(id),
            _ => pv_pos.get(&id).copied(),
        }
        .ok_or_else(|| Error::Profile(format!("line {line}: unknown {kind} id {id}")))?;
        if field == Field::PvPmpp && value < 0.0 {
            return Err(Error::Profile(format!(
                "line {line}: negative pv p_mpp {value} for pv {id}"
            )));
        }
        if series.entry((field, pos)).or_default().insert(ts, value).is_some() {
            return Err(Error::Profile(format!(
                "line {line}: duplicate value for {kind} {id} {}",
                &record[3]
            )));
        }
    }

    let mut timestamps: Vec<NaiveDateTime> = ts_cache.values().copied().collect();
    timestamps.sort_unstable();
    timestamps.dedup();
    check_uniform(&timestamps)?;

    let n = timestamps.len();
    let take = |field: Field, pos: usize| -> Result<Option<Vec<T>>> {
        let Some(map) = series.get(&(field, pos)) else {
            return Ok(None);
        };
        if map.len() != n {
            let missing = timestamps
                .iter()
                .find(|t| !map.contains_key(t))
                .expect("shorter series misses a timestamp");
            return Err(Error::Profile(format!(
                "series {field:?} for element {pos} has no value at {}",
                format_timestamp(missing)
            )));
        }
        Ok(Some(map.values().map(|&v| T::lit(v)).collect()))
    };

    let mut ps = ProfileSet {
        timestamps: timestamps.clone(),
        load_p: Vec::new(),
        load_q: Vec::new(),
        pv_p_mpp: Vec::new(),
        pv_q_min: Vec::new(),
        pv_q_max: Vec::new(),
    };
    for (i, b) in net.buses().iter().enumerate() {
        ps.load_p
            .push(take(Field::LoadP, i)?.unwrap_or_else(|| vec![b.demand_p; n]));
        ps.load_q
            .push(take(Field::LoadQ, i)?.unwrap_or_else(|| vec![b.demand_q; n]));
    }
    for i in 0..net.pv_resources().len() {
        ps.pv_p_mpp
            .push(take(Field::PvPmpp, i)?.unwrap_or_else(|| vec![T::zero(); n]));
        ps.pv_q_min.push(take(Field::PvQmin, i)?);
        ps.pv_q_max.push(take(Field::PvQmax, i)?);
    }
    Ok(ps)
}

fn check_uniform(ts: &[NaiveDateTime]) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::Profile("no rows".into()));
    }
    if ts.len() < 2 {
        return Ok(());
    }
    let step = ts[1] - ts[0];
    for w in ts.windows(2) {
        let d = w[1] - w[0];
        if d != step {
            if d > step {
                return Err(Error::Profile(format!(
                    "missing timestamp {}",
                    format_timestamp(&(w[0] + step))
                )));
            }
            return Err(Error::Profile(format!(
                "non-uniform resolution at {}",
                format_timestamp(&w[1])
            )));
        }
    }
    Ok(())
}

/// Writes a profile set in the long CSV format.
pub fn write_profiles<T: Real, W: Write>(ps: &ProfileSet<T>, net: &Network<T>, out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let io = |e| Error::io("<profiles>", e);
    writeln!(w, "timestamp,element_kind,element_id,field,value").map_err(io)?;
    for (k, t) in ps.timestamps.iter().enumerate() {
        let ts = format_timestamp(t);
        for (i, b) in net.buses().iter().enumerate() {
            writeln!(w, "{ts},bus,{},p,{}", b.id, ps.load_p[i][k]).map_err(io)?;
            writeln!(w, "{ts},bus,{},q,{}", b.id, ps.load_q[i][k]).map_err(io)?;
        }
        for (i, p) in net.pv_resources().iter().enumerate() {
            writeln!(w, "{ts},pv,{},p_mpp,{}", p.bus, ps.pv_p_mpp[i][k]).map_err(io)?;
            if let Some(s) = &ps.pv_q_min[i] {
                writeln!(w, "{ts},pv,{},q_min,{}", p.bus, s[k]).map_err(io)?;
            }
            if let Some(s) = &ps.pv_q_max[i] {
                writeln!(w, "{ts},pv,{},q_max,{}", p.bus, s[k]).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn save_profiles<T: Real>(ps: &ProfileSet<T>, net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_profiles(ps, net, f)
}

/// Synthetic-year settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub resolution_minutes: u32,
    /// Annual PV energy as a fraction of annual load energy.
    pub pv_penetration: f64,
    /// 0 = persistent weather, 1 = weather changes almost daily and dips deeper.
    pub cloud_volatility: f64,
    pub seed: u64,
    pub start: NaiveDate,
    pub days: u32,
    /// Log-standard deviation of the per-step multiplicative load noise.
    pub load_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution_minutes: 60,
            pv_penetration: 0.25,
            cloud_volatility: 0.3,
            seed: 42,
            start: NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date"),
            days: 365,
            load_noise: 0.03,
        }
    }
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    (-((h - center) / width).powi(2)).exp()
}

/// Relative load level by hour of day: overnight trough, shoulder at noon, evening peak.
fn diurnal_load(h: f64) -> f64 {
    0.62 + 0.2 * bump(h, 12.0, 4.0) + 0.22 * bump(h, 19.0, 2.5)
}

fn seasonal_load(doy: f64) -> f64 {
    use std::f64::consts::PI;
    1.0 + 0.1 * (2.0 * PI * (doy - 200.0) / 365.0).cos() + 0.05 * (4.0 * PI * (doy - 15.0) / 365.0).cos()
}

/// Clear-sky output in [0, 1]: a half sine between sunrise and sunset centred on noon.
pub fn clear_sky(doy: f64, hour: f64) -> f64 {
    use std::f64::consts::PI;
    let day_len = 12.0 + 2.5 * (2.0 * PI * (doy - 80.0) / 365.0).sin();
    let sunrise = 12.0 - day_len / 2.0;
    let x = (hour - sunrise) / day_len;
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let amplitude = 0.8 + 0.2 * (2.0 * PI * (doy - 80.0) / 365.0).sin();
    amplitude * (PI * x).sin().max(0.0)
}

/// Deterministic synthetic year for a network.
///
/// Load per bus is the case demand shaped by season, weekday and hour of day,
/// with multiplicative lognormal noise. PV per resource follows [`clear_sky`]
/// scaled by a daily two-state Markov cloud factor, then scaled so that total
/// PV energy over total load energy equals `pv_penetration` (subject to clipping
/// at each inverter's rating).
pub fn synthesize_year<T: Real>(net: &Network<T>, cfg: &SynthConfig) -> Result<ProfileSet<T>> {
    if !(0.0..=1.0).contains(&cfg.pv_penetration) {
        return Err(Error::InvalidInput("pv_penetration must lie in [0, 1]".into()));
    }
    if cfg.resolution_minutes == 0 || 1440 % cfg.resolution_minutes != 0 {
        return Err(Error::InvalidInput(
            "resolution_minutes must divide a day".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_day = (1440 / cfg.resolution_minutes) as usize;
    let n = steps_per_day * cfg.days as usize;
    let start = cfg.start.and_hms_opt(0, 0, 0).expect("midnight");
    let step = TimeDelta::minutes(i64::from(cfg.resolution_minutes));
    let timestamps: Vec<NaiveDateTime> = (0..n).map(|k| start + step * k as i32).collect();

    let noise = LogNormal::new(0.0, cfg.load_noise.max(0.0)).expect("valid lognormal");
    let nb = net.n_buses();
    let mut load_p = vec![Vec::with_capacity(n); nb];
    let mut load_q = vec![Vec::with_capacity(n); nb];
    for t in &timestamps {
        let doy = f64::from(t.ordinal0());
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
        let weekly = if t.weekday().num_days_from_monday() >= 5 { 0.9 } else { 1.0 };
        let shape = seasonal_load(doy) * weekly * diurnal_load(hour);
        for (i, b) in net.buses().iter().enumerate() {
            let m = shape * noise.sample(&mut rng);
            load_p[i].push(b.demand_p.as_f64() * m);
            load_q[i].push(b.demand_q.as_f64() * m);
        }
    }

    let pvs = net.pv_resources();
    let total_rating: f64 = pvs.iter().map(|p| p.s_rating.as_f64()).sum();
    let switch_p = (0.05 + 0.6 * cfg.cloud_volatility).clamp(0.0, 1.0);
    let mut shapes: Vec<Vec<f64>> = Vec::with_capacity(pvs.len());
    for _ in pvs {
        let mut cloudy = false;
        let mut factor = 1.0;
        let mut shape = Vec::with_capacity(n);
        for (k, t) in timestamps.iter().enumerate() {
            if k % steps_per_day == 0 {
                if rng.random::<f64>() < switch_p {
                    cloudy = !cloudy;
                }
                factor = if cloudy {
                    let depth = 0.3 + 0.5 * cfg.cloud_volatility.clamp(0.0, 1.0);
                    1.0 - depth * rng.random::<f64>().max(0.2)
                } else {
                    0.9 + 0.1 * rng.random::<f64>()
                };
            }
            let doy = f64::from(t.ordinal0());
            let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
            shape.push(clear_sky(doy, hour) * factor);
        }
        shapes.push(shape);
    }

    let load_energy: f64 = load_p.iter().flatten().sum();
    let target = cfg.pv_penetration * load_energy;
    let ratings: Vec<f64> = pvs.iter().map(|p| p.s_rating.as_f64()).collect();
    let energy_at = |kappa: f64| -> f64 {
        shapes
            .iter()
            .zip(&ratings)
            .map(|(s, &r)| {
                let w = kappa * r / total_rating;
                s.iter().map(|&v| (w * v).min(r)).sum::<f64>()
            })
            .sum()
    };
    let kappa = if target <= 0.0 || pvs.is_empty() {
        0.0
    } else {
        let mut hi = 1.0;
        while energy_at(hi) < target && hi < 1e12 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if energy_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let pv_p_mpp: Vec<Vec<T>> = shapes
        .iter()
        .zip(&ratings)
        .map(|(s, &r)| {
            let w = kappa * r / total_rating;
            s.iter().map(|&v| T::lit((w * v).min(r))).collect()
        })
        .collect();

    let to_t = |v: Vec<Vec<f64>>| -> Vec<Vec<T>> {
        v.into_iter()
            .map(|s| s.into_iter().map(T::lit).collect())
            .collect()
    };
    Ok(ProfileSet {
        timestamps,
        load_p: to_t(load_p),
        load_q: to_t(load_q),
        pv_p_mpp,
        pv_q_min: vec![None; pvs.len()],
        pv_q_max: vec![None; pvs.len()],
    })
}
