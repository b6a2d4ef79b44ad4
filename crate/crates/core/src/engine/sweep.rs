use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use toml::Value;

use super::metrics::Metrics;
use super::scenario::{Scenario, ScenarioError};
use super::sim::{run, RunOptions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SweepError {
    #[error("invalid parameter path `{path}`: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("grid point {index}: {source}")]
    Point { index: usize, source: ScenarioError },
    #[error("bad axis `{0}`, expected path=v1,v2,...")]
    BadAxis(String),
}

/// One swept parameter: a dotted path into the scenario document and the
/// values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub path: String,
    pub values: Vec<Value>,
}

impl Axis {
    pub fn new(path: impl Into<String>, values: Vec<Value>) -> Self {
        Axis {
            path: path.into(),
            values,
        }
    }

    /// Parses `path=v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self, SweepError> {
        let (path, vals) = s
            .split_once('=')
            .ok_or_else(|| SweepError::BadAxis(s.into()))?;
        let values = vals.split(',').map(|v| parse_value(v.trim())).collect();
        Ok(Axis::new(path.trim(), values))
    }
}

/// Reads a value as TOML, falling back to a bare string.
pub fn parse_value(s: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {s}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(s.to_string()))
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Sets `path` (dotted, with `name[i]` for list items) in `doc`. Missing
/// tables on the way are created; list items must exist.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), SweepError> {
    let bad = |reason: &str| SweepError::InvalidPath {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty segment"));
    }
    let mut cur = doc;
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        let (name, index) = match part.split_once('[') {
            Some((n, rest)) => {
                let i = rest
                    .strip_suffix(']')
                    .and_then(|i| i.parse::<usize>().ok())
                    .ok_or_else(|| bad("bad list index"))?;
                (n, Some(i))
            }
            None => (*part, None),
        };
        let table = cur.as_table_mut().ok_or_else(|| bad("not a table"))?;
        match index {
            None if last => {
                table.insert(name.to_string(), value);
                return Ok(());
            }
            None => {
                cur = table
                    .entry(name.to_string())
                    .or_insert_with(|| Value::Table(Default::default()));
            }
            Some(i) => {
                let item = table
                    .get_mut(name)
                    .and_then(Value::as_array_mut)
                    .and_then(|a| a.get_mut(i))
                    .ok_or_else(|| bad("no such list item"))?;
                if last {
                    *item = value;
                    return Ok(());
                }
                cur = item;
            }
        }
    }
    Ok(())
}

/// Applies `path=value` overrides to a scenario document and validates the
/// result. Unknown fields are reported against the override path.
pub fn apply_overrides(text: &str, overrides: &[(String, Value)]) -> Result<Scenario, SweepError> {
    let mut doc: Value = toml::from_str(text).map_err(|e| SweepError::Point {
        index: 0,
        source: ScenarioError::Parse(e.to_string()),
    })?;
    for (path, v) in overrides {
        set_path(&mut doc, path, v.clone())?;
    }
    from_doc(doc, overrides).map_err(|source| SweepError::Point { index: 0, source })
}

fn from_doc(doc: Value, overrides: &[(String, Value)]) -> Result<Scenario, ScenarioError> {
    let text = toml::to_string(&doc).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    super::scenario::load_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse(msg) if !overrides.is_empty() => {
            let paths: Vec<&str> = overrides.iter().map(|(p, _)| p.as_str()).collect();
            ScenarioError::Parse(format!("{msg} (overrides: {})", paths.join(", ")))
        }
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Gives every grid point its own seed derived from the base seed.
    pub derive_seeds: bool,
    pub run: RunOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            derive_seeds: true,
            run: RunOptions {
                trace: false,
                check_invariants: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub params: Vec<(String, String)>,
    pub rng_seed: u64,
    pub metrics: Metrics,
}

/// Seed of grid point `index`.
pub fn point_seed(base: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn grid_points(axes: &[Axis]) -> Vec<Vec<(String, Value)>> {
    if axes.is_empty() {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.path.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// Runs the cartesian product of `axes` over a scenario template. Every
/// point is built and validated before the first run; rows come back in
/// grid order. No axes means no rows.
pub fn sweep(
    template: &str,
    axes: &[Axis],
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>, SweepError> {
    let base: Value = toml::from_str(template).map_err(|e| SweepError::Point {
        index: 0,
        source: ScenarioError::Parse(e.to_string()),
    })?;
    // each path on its own first, so a typo is reported as such
    for axis in axes {
        if let Some(v) = axis.values.first() {
            let mut doc = base.clone();
            set_path(&mut doc, &axis.path, v.clone())?;
            if let Err(ScenarioError::Parse(reason)) = from_doc(doc, &[]) {
                return Err(SweepError::InvalidPath {
                    path: axis.path.clone(),
                    reason,
                });
            }
        }
    }
    let mut scenarios = Vec::new();
    for (index, point) in grid_points(axes).into_iter().enumerate() {
        let mut doc = base.clone();
        for (path, v) in &point {
            set_path(&mut doc, path, v.clone())?;
        }
        let mut sc = from_doc(doc, &point).map_err(|source| SweepError::Point { index, source })?;
        if opts.derive_seeds && !point.iter().any(|(p, _)| p == "rng_seed") {
            sc.rng_seed = point_seed(sc.rng_seed, index);
        }
        let params = point.iter().map(|(p, v)| (p.clone(), render(v))).collect();
        scenarios.push((index, params, sc));
    }
    scenarios
        .into_par_iter()
        .map(|(index, params, sc)| {
            let out = run(&sc, &opts.run).map_err(|source| SweepError::Point { index, source })?;
            Ok(SweepRow {
                index,
                params,
                rng_seed: sc.rng_seed,
                metrics: out.metrics,
            })
        })
        .collect()
}

/// Metric columns of the sweep table, after `index`, the swept paths and
/// `rng_seed`.
pub const METRIC_COLUMNS: &[&str] = &[
    "total_cycles",
    "apps",
    "granted",
    "complete_apps",
    "failed_apps",
    "e_total",
    "e_baseline",
    "savings_fraction",
    "analytic_estimate",
    "estimate_error",
    "stall_cycles",
    "ictrl_toggles",
    "pe_toggles",
    "util_average",
    "util_peak",
    "ft_injected",
    "ft_detected",
    "ft_corrected",
    "ft_silent",
    "ft_halts",
    "ft_rewinds",
    "ft_migrations",
    "ft_votes",
    "ft_timing_overhead",
];

fn metric_cells(m: &Metrics) -> Vec<String> {
    let ft: Vec<_> = m.apps.iter().filter_map(|a| a.ft.as_ref()).collect();
    let sum = |f: fn(&crate::ft::FtStats) -> u64| ft.iter().map(|s| f(s)).sum::<u64>().to_string();
    let e = &m.energy;
    vec![
        m.total_cycles.to_string(),
        m.apps.len().to_string(),
        m.apps
            .iter()
            .map(|a| u64::from(a.granted))
            .sum::<u64>()
            .to_string(),
        m.apps.iter().filter(|a| a.complete).count().to_string(),
        m.apps
            .iter()
            .filter(|a| a.error.is_some())
            .count()
            .to_string(),
        e.e_total.to_string(),
        e.e_baseline.to_string(),
        e.savings_fraction.to_string(),
        e.analytic_estimate.to_string(),
        e.estimate_error.to_string(),
        e.stall_cycles.to_string(),
        e.ictrl_toggles.to_string(),
        e.pe_toggles.to_string(),
        m.utilization.average.to_string(),
        m.utilization.peak.to_string(),
        sum(|s| s.injected),
        sum(|s| s.detected),
        sum(|s| s.corrected),
        sum(|s| s.silent),
        sum(|s| s.halts),
        sum(|s| s.rewinds.total()),
        sum(|s| s.migrations),
        sum(|s| s.votes),
        ft.iter()
            .map(|s| s.timing_overhead_fraction)
            .fold(0.0, f64::max)
            .to_string(),
    ]
}

/// Flat CSV of sweep rows.
pub fn to_csv(axes: &[Axis], rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string()];
    header.extend(axes.iter().map(|a| a.path.clone()));
    header.push("rng_seed".into());
    header.extend(METRIC_COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header).expect("write to memory");
    for r in rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.params.iter().map(|(_, v)| v.clone()));
        rec.push(r.rng_seed.to_string());
        rec.extend(metric_cells(&r.metrics));
        w.write_record(&rec).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
