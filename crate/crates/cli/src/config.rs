//! Effective configuration: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::{Map, Value};
use voltplan_core::pipeline::RunConfig;
use voltplan_core::{Error, Result};

/// Flags mirroring [`RunConfig`]; unset flags leave the lower layers alone.
#[derive(Args, Debug, Default, Serialize)]
pub struct ConfigArgs {
    /// TOML or JSON file with RunConfig keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, visible_alias = "case")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_path: Option<PathBuf>,
    #[arg(long, visible_alias = "profiles")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles_path: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_penetration: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloud_volatility: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution_minutes: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days: Option<u32>,
    /// First day of a synthetic year, YYYY-MM-DD.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_date: Option<String>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadband_plan: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadband_verify: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_mvar: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_mvar: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_fixed: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_per_mvar: Option<f64>,
    /// max or cluster.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approach: Option<String>,
    /// nearest or ceiling.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounding: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_out: Option<bool>,
    /// Comma-separated candidate bus ids.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<u32>>,

    #[arg(long, env = "VOLTPLAN_SEED")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduce_var: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_cluster_size: Option<usize>,
    /// relaxed or discrete.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opt_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_v: Option<f64>,

    /// powerflow_only or operational_opf.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_q_support: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_as_switchable: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_pv_support: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_failure_share: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_total_pu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step_pu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    /// Comma-separated timestamps planned on top of the screened ones.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_scenarios: Option<Vec<String>>,
}

fn merge(into: &mut Map<String, Value>, layer: Map<String, Value>) {
    for (k, v) in layer {
        into.insert(k, v);
    }
}

fn read_file_layer(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    } else {
        toml::from_str(&text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(&text, s.start))
                .unwrap_or((0, 0));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?
    };
    let Value::Object(mut map) = value else {
        return Err(Error::InvalidInput(format!("{} must hold a table of settings", path.display())));
    };
    // Paths in a config file are relative to the file.
    let dir = path.parent().unwrap_or(Path::new(""));
    for key in ["case_path", "profiles_path"] {
        if let Some(Value::String(p)) = map.get(key) {
            let p = PathBuf::from(p);
            if p.is_relative() {
                map.insert(key.into(), Value::String(dir.join(p).to_string_lossy().into_owned()));
            }
        }
    }
    Ok(map)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let Value::Object(mut map) = serde_json::to_value(RunConfig::default()).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        if let Some(path) = &self.config {
            merge(&mut map, read_file_layer(path)?);
        }
        let Value::Object(mut flags) = serde_json::to_value(self).expect("flags serialize") else {
            unreachable!("flags are a struct")
        };
        if let Some(list) = &self.extra_scenarios {
            let parsed = list
                .iter()
                .map(|s| voltplan_core::timeseries::parse_timestamp(s.trim()))
                .collect::<Result<Vec<_>>>()?;
            flags.insert("extra_scenarios".into(), serde_json::to_value(parsed).expect("timestamps serialize"));
        }
        merge(&mut map, flags);
        let cfg: RunConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::InvalidInput(format!("configuration: {e}")))?;
        if cfg.case_path.as_os_str().is_empty() {
            return Err(Error::InvalidInput("no case given; pass --case-path or set case_path".into()));
        }
        cfg.check()?;
        Ok(cfg)
    }
}
