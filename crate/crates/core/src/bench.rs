//! Built-in workloads and the benchmark drivers behind the `tcpa` subcommands.

use serde::Serialize;
use toml::Value;

use crate::array::{Cycle, ICtrlKind};
use crate::engine::{
    apply_overrides, run, sweep, Axis, RunOptions, SweepError, SweepOptions, SweepRow,
};
use crate::ft::{
    campaign_program, coverage_diff, single_fault_sweep, CampaignSummary, CoverageDiff, FtError,
    FtSpec, LoopSpec, VotingCosts, VotingScheme,
};
use crate::protocol::Reliability;

pub mod scenarios {
    pub const SPEEDUP: &str = include_str!("../scenarios/speedup.toml");
    pub const ENERGY_LOW_UTIL: &str = include_str!("../scenarios/energy_low_util.toml");
    pub const MIXED_GROUPING: &str = include_str!("../scenarios/mixed_grouping.toml");
    pub const DEMO: &str = include_str!("../scenarios/demo.toml");
    pub const TMR_FIR: &str = include_str!("../scenarios/tmr_fir.toml");

    /// `(name, text)` of every shipped scenario.
    pub const ALL: &[(&str, &str)] = &[
        ("speedup", SPEEDUP),
        ("energy_low_util", ENERGY_LOW_UTIL),
        ("mixed_grouping", MIXED_GROUPING),
        ("demo", DEMO),
        ("tmr_fir", TMR_FIR),
    ];
}

pub const SPEEDUP_SIZES: &[u32] = &[4, 8, 16, 64, 256];
pub const SPEEDUP_ENVELOPE: (f64, f64) = (2.6, 45.0);
pub const ENERGY_SAVINGS_MIN: f64 = 0.70;
pub const ENERGY_ERROR_MAX: f64 = 0.036;
pub const ENERGY_UTIL_MAX: f64 = 0.25;

/// Smallest near-square array holding exactly `n` PEs.
pub fn array_for(n: u32) -> (usize, usize) {
    let mut rows = (n as f64).sqrt() as u32;
    while rows > 1 && !n.is_multiple_of(rows) {
        rows -= 1;
    }
    (rows as usize, (n / rows) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub size: u32,
    pub rows: usize,
    pub cols: usize,
    pub kind: ICtrlKind,
    pub distributed: Cycle,
    pub centralized: Cycle,
    pub speedup: f64,
    pub in_envelope: bool,
    /// The envelope is calibrated for the FSM controller; programmable rows
    /// are reported but not held to it.
    pub gated: bool,
}

impl SpeedupRow {
    pub fn miss(&self) -> bool {
        self.gated && !self.in_envelope
    }
}

fn kind_name(k: ICtrlKind) -> &'static str {
    match k {
        ICtrlKind::Fsm => "fsm",
        ICtrlKind::Programmable => "programmable",
    }
}

/// One linear claim per `(size, kind)` on a matching array.
pub fn speedup_bench(
    template: &str,
    sizes: &[u32],
    kinds: &[ICtrlKind],
    overrides: &[(String, Value)],
) -> Result<Vec<SpeedupRow>, SweepError> {
    let mut rows = Vec::new();
    for &size in sizes {
        for &kind in kinds {
            let (r, c) = array_for(size);
            let mut set = overrides.to_vec();
            set.extend([
                ("array.rows".to_string(), Value::Integer(r as i64)),
                ("array.cols".to_string(), Value::Integer(c as i64)),
                (
                    "array.ictrl_kind".to_string(),
                    Value::String(kind_name(kind).into()),
                ),
                ("events[0].count".to_string(), Value::Integer(size as i64)),
            ]);
            let sc = apply_overrides(template, &set)?;
            let out = run(
                &sc,
                &RunOptions {
                    trace: false,
                    check_invariants: false,
                },
            )
            .map_err(|source| SweepError::Point {
                index: rows.len(),
                source,
            })?;
            let app = &out.metrics.apps[0];
            let centralized =
                crate::protocol::centralized_baseline_cycles(&sc.protocol, app.granted);
            let speedup = app.speedup_vs_centralized;
            rows.push(SpeedupRow {
                size,
                rows: r,
                cols: c,
                kind,
                distributed: app.invade_latency + app.claim_latency,
                centralized,
                speedup,
                in_envelope: (SPEEDUP_ENVELOPE.0..=SPEEDUP_ENVELOPE.1).contains(&speedup),
                gated: kind == ICtrlKind::Fsm,
            });
        }
    }
    Ok(rows)
}

pub fn speedup_table(rows: &[SpeedupRow]) -> String {
    let mut s = format!(
        "{:>5} {:>7} {:>13} {:>11} {:>11} {:>8}\n",
        "size", "array", "ictrl", "distributed", "centralized", "speedup"
    );
    for r in rows {
        s += &format!(
            "{:>5} {:>7} {:>13} {:>11} {:>11} {:>8.3}{}\n",
            r.size,
            format!("{}x{}", r.rows, r.cols),
            kind_name(r.kind),
            r.distributed,
            r.centralized,
            r.speedup,
            match (r.in_envelope, r.gated) {
                (true, _) => "",
                (false, true) => "  OUTSIDE [2.6, 45]",
                (false, false) => "  outside [2.6, 45], not gated",
            }
        );
    }
    s
}

/// Domain sizes of the energy grid.
pub fn grouping_axis() -> Axis {
    Axis::new(
        "power.ictrl_domain_size",
        vec![
            Value::Integer(1),
            Value::Integer(4),
            Value::String("row".into()),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyPoint {
    pub ictrl_domain_size: String,
    pub util_average: f64,
    pub e_total: f64,
    pub e_baseline: f64,
    pub savings_fraction: f64,
    pub analytic_estimate: f64,
    pub estimate_error: f64,
    pub toggles: u64,
}

impl EnergyPoint {
    fn from_row(r: &SweepRow) -> Self {
        let e = &r.metrics.energy;
        EnergyPoint {
            ictrl_domain_size: r.params[0].1.clone(),
            util_average: r.metrics.utilization.average,
            e_total: e.e_total,
            e_baseline: e.e_baseline,
            savings_fraction: e.savings_fraction,
            analytic_estimate: e.analytic_estimate,
            estimate_error: e.estimate_error,
            toggles: e.ictrl_toggles + e.pe_toggles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBench {
    pub points: Vec<EnergyPoint>,
    pub failures: Vec<String>,
}

impl EnergyBench {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The low-utilization workload over the grouping grid, checked against the
/// savings and estimator thresholds.
pub fn energy_bench(
    template: &str,
    overrides: &[(String, Value)],
) -> Result<EnergyBench, SweepError> {
    let rows = grouping_rows(template, overrides)?;
    let points: Vec<EnergyPoint> = rows.iter().map(EnergyPoint::from_row).collect();
    let mut failures = Vec::new();
    let fine = &points[0];
    if fine.util_average > ENERGY_UTIL_MAX {
        failures.push(format!(
            "average utilization {:.3} above {ENERGY_UTIL_MAX}",
            fine.util_average
        ));
    }
    if fine.savings_fraction < ENERGY_SAVINGS_MIN {
        failures.push(format!(
            "savings {:.4} below {ENERGY_SAVINGS_MIN} at domain size 1",
            fine.savings_fraction
        ));
    }
    for p in &points {
        if p.estimate_error > ENERGY_ERROR_MAX {
            failures.push(format!(
                "estimator error {:.4} above {ENERGY_ERROR_MAX} at domain size {}",
                p.estimate_error, p.ictrl_domain_size
            ));
        }
    }
    Ok(EnergyBench { points, failures })
}

fn grouping_rows(
    template: &str,
    overrides: &[(String, Value)],
) -> Result<Vec<SweepRow>, SweepError> {
    let mut doc = template
        .parse::<toml::Table>()
        .map(Value::Table)
        .map_err(|e| SweepError::Point {
            index: 0,
            source: crate::engine::ScenarioError::Parse(e.to_string()),
        })?;
    for (p, v) in overrides {
        crate::engine::set_path(&mut doc, p, v.clone())?;
    }
    let text = toml::to_string(&doc).expect("toml value serializes");
    let opts = SweepOptions {
        derive_seeds: false,
        ..Default::default()
    };
    sweep(&text, &[grouping_axis()], &opts)
}

pub fn energy_table(points: &[EnergyPoint]) -> String {
    let mut s = format!(
        "{:>6} {:>6} {:>12} {:>12} {:>8} {:>12} {:>8} {:>8}\n",
        "domain", "util", "e_total", "e_baseline", "savings", "analytic", "error", "toggles"
    );
    for p in points {
        s += &format!(
            "{:>6} {:>6.3} {:>12.1} {:>12.1} {:>8.4} {:>12.1} {:>8.4} {:>8}\n",
            p.ictrl_domain_size,
            p.util_average,
            p.e_total,
            p.e_baseline,
            p.savings_fraction,
            p.analytic_estimate,
            p.estimate_error,
            p.toggles
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupingReport {
    /// Energies with free switching, in grid order.
    pub free_energy: Vec<f64>,
    /// Toggle counts with default switching costs, in grid order.
    pub toggles: Vec<u64>,
}

impl GroupingReport {
    pub fn energy_ordered(&self) -> bool {
        self.free_energy.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn toggles_ordered(&self) -> bool {
        self.toggles.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Grouping trade-off on the mixed workload: energy with `e_switch =
/// d_switch = 0`, toggles with the template's switching costs.
pub fn grouping_tradeoff(template: &str) -> Result<GroupingReport, SweepError> {
    let free = [
        ("power.e_switch".to_string(), Value::Float(0.0)),
        ("power.d_switch".to_string(), Value::Integer(0)),
    ];
    let free_energy = grouping_rows(template, &free)?
        .iter()
        .map(|r| r.metrics.energy.e_total)
        .collect();
    let toggles = grouping_rows(template, &[])?
        .iter()
        .map(|r| r.metrics.energy.ictrl_toggles + r.metrics.energy.pe_toggles)
        .collect();
    Ok(GroupingReport {
        free_energy,
        toggles,
    })
}

/// FIR loop of the fault campaigns: `T` taps, `N` inputs `k*2654 + 17`.
pub fn campaign_loop(taps: usize, n: usize) -> LoopSpec {
    let all: [u16; 8] = [3, 5, 7, 11, 13, 17, 19, 23];
    let input = (0..n).map(|k| (k as u32 * 2654 + 17) as u16).collect();
    LoopSpec::new(all.iter().cycle().take(taps).copied().collect(), input)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtReport {
    pub sweeps: Vec<CampaignSummary>,
    pub coverage: CoverageDiff,
    pub failures: Vec<String>,
}

impl FtReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const TMR_SCHEMES: &[VotingScheme] = &[
    VotingScheme::IntermediateSwMiddle,
    VotingScheme::IntermediateHw,
    VotingScheme::IntermediateSwAll,
];

/// Exhaustive single-fault sweeps (TMR with every intermediate scheme, DMR
/// with hardware voting) on a `taps`x`n` loop, plus the two-fault
/// output-vs-intermediate differential on a 2x3 loop.
pub fn ft_bench(taps: usize, n: usize) -> Result<FtReport, FtError> {
    let spec = campaign_loop(taps, n);
    let costs = VotingCosts::default();
    let mut sweeps = Vec::new();
    let mut failures = Vec::new();
    for &scheme in TMR_SCHEMES {
        let p = campaign_program(&spec, Reliability::Tmr, &FtSpec::new(scheme), &costs)?;
        let s = single_fault_sweep(&p)?;
        if s.corrected != s.runs {
            failures.push(format!(
                "tmr {}: corrected {}/{}",
                s.scheme, s.corrected, s.runs
            ));
        }
        sweeps.push(s);
    }
    let p = campaign_program(
        &spec,
        Reliability::Dmr,
        &FtSpec::new(VotingScheme::IntermediateHw),
        &costs,
    )?;
    let s = single_fault_sweep(&p)?;
    if s.detection_rate() < 1.0 || s.silent > 0 {
        failures.push(format!(
            "dmr {}: detected {}/{}, silent {}",
            s.scheme,
            s.corrected + s.detected,
            s.runs,
            s.silent
        ));
    }
    sweeps.push(s);

    let small = campaign_loop(2, 3);
    let a = campaign_program(
        &small,
        Reliability::Tmr,
        &FtSpec::new(VotingScheme::OutputHw),
        &costs,
    )?;
    let c = campaign_program(
        &small,
        Reliability::Tmr,
        &FtSpec::new(VotingScheme::IntermediateHw),
        &costs,
    )?;
    let coverage = coverage_diff(&a, &c)?;
    if !coverage.b_strictly_better() {
        failures.push(format!(
            "coverage: intermediate_hw silent set not a strict subset of output_hw: {coverage:?}"
        ));
    }
    Ok(FtReport {
        sweeps,
        coverage,
        failures,
    })
}

pub fn ft_table(r: &FtReport) -> String {
    let mut s = format!(
        "{:>4} {:>22} {:>6} {:>9} {:>8} {:>6} {:>6} {:>9}\n",
        "mode", "scheme", "runs", "corrected", "detected", "silent", "masked", "overhead"
    );
    for x in &r.sweeps {
        s += &format!(
            "{:>4} {:>22} {:>6} {:>9} {:>8} {:>6} {:>6} {:>9.3}\n",
            x.mode,
            x.scheme,
            x.runs,
            x.corrected,
            x.detected,
            x.silent,
            x.masked,
            x.timing_overhead_fraction
        );
    }
    let c = &r.coverage;
    s += &format!(
        "two-fault pairs {}: silent output_hw {} / intermediate_hw {}; only output_hw {}, only intermediate_hw {}\n",
        c.pairs, c.silent_a, c.silent_b, c.only_a, c.only_b
    );
    s
}
