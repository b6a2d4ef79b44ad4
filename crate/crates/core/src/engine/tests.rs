use std::collections::BTreeSet;

use super::*;
use crate::ft::{fir_golden, FaultEvent};

fn scenario(array: &str, power: &str, events: &str) -> String {
    format!("rng_seed = 7\n\n[array]\n{array}\n\n[power]\n{power}\n\n{events}")
}

const LINEAR4: &str = r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 4

[[events]]
action = "end"
at = 1000
"#;

#[test]
fn minimal_document_is_valid() {
    let sc = load_scenario(&scenario("rows = 4\ncols = 4", "", LINEAR4)).unwrap();
    assert_eq!(sc.events.len(), 2);
    assert_eq!(sc.array.seed_candidates.len(), 4);
}

#[test]
fn non_tiling_domain_is_rejected() {
    let err = load_scenario(&scenario(
        "rows = 4\ncols = 4",
        "ictrl_domain_size = \"3x3\"",
        LINEAR4,
    ))
    .unwrap_err();
    assert!(
        err.to_string().contains("domain size does not tile array"),
        "{err}"
    );
    assert_eq!(err.field(), Some("power.ictrl_domain_size"));
}

#[test]
fn tmr_needs_a_loop() {
    let ev = r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 4
reliability = "tmr"
"#;
    let err = load_scenario(&scenario("rows = 4\ncols = 4", "", ev)).unwrap_err();
    assert_eq!(err.field(), Some("events[0].loop"));
}

#[test]
fn unsorted_events_and_duplicate_apps_are_rejected() {
    let ev = r#"
[[events]]
action = "invade"
at = 5
app = 2
strategy = "linear"
count = 1

[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 1
"#;
    let err = load_scenario(&scenario("rows = 2\ncols = 2", "", ev)).unwrap_err();
    assert_eq!(err.field(), Some("events[1].at"));
    let ev = r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 1

[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 1
"#;
    let err = load_scenario(&scenario("rows = 2\ncols = 2", "", ev)).unwrap_err();
    assert_eq!(err.field(), Some("events[1].app"));
    assert!(matches!(
        load_scenario("[array]\nrows = 2\ncols = 2\nbogus = 1\n"),
        Err(ScenarioError::Parse(_))
    ));
}

fn invade_retreat(kind: &str, n: u32) -> String {
    scenario(
        &format!("rows = 1\ncols = 16\nictrl_kind = \"{kind}\""),
        "d_switch = 0",
        &format!(
            r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = {n}

[[events]]
action = "retreat"
at = 0
app = 1
"#
        ),
    )
}

#[test]
fn latencies_follow_the_closed_form() {
    for (kind, hop) in [("fsm", 1), ("programmable", 4)] {
        for n in [1u64, 4, 9] {
            let out = run_text(&invade_retreat(kind, n as u32), &RunOptions::default()).unwrap();
            let a = out.metrics.app(1).unwrap();
            assert!(a.complete);
            assert_eq!(
                a.invade_latency + a.claim_latency,
                2 + 2 * hop * (n - 1),
                "{kind} n={n}"
            );
            // the retreat wave goes down the chain and back
            assert_eq!(a.retreat_latency, Some(2 * hop * (n - 1)));
        }
    }
}

#[test]
fn power_gating_adds_wake_up_stalls() {
    let text = scenario("rows = 1\ncols = 16", "d_switch = 10", LINEAR4);
    let out = run_text(&text, &RunOptions::default()).unwrap();
    let a = out.metrics.app(1).unwrap();
    assert_eq!(a.invade_latency + a.claim_latency, 48);
    assert_eq!(a.stall_cycles, 40);
    assert_eq!(out.metrics.energy.stall_cycles, 40);
    assert_eq!(out.metrics.total_cycles, 1000);
}

#[test]
fn empty_event_list_is_a_zero_cycle_run() {
    let out = run_text(
        &scenario("rows = 4\ncols = 4", "", ""),
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(out.metrics.total_cycles, 0);
    assert!(out.metrics.apps.is_empty());
    assert!(out.trace.is_empty());
    assert_eq!(out.metrics.energy.e_total, 0.0);
}

#[test]
fn competing_invades_get_disjoint_claims() {
    let ev = r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 6

[[events]]
action = "invade"
at = 0
app = 2
strategy = "rectangular"
width = 2
height = 2
"#;
    let opts = RunOptions {
        trace: true,
        check_invariants: true,
    };
    let out = run_text(&scenario("rows = 4\ncols = 4", "", ev), &opts).unwrap();
    let m = &out.metrics;
    assert_eq!(m.apps.len(), 2);
    let mut seen = BTreeSet::new();
    for a in &m.apps {
        assert!(a.granted > 0);
        for r in &a.replicas {
            for c in &r.pes {
                assert!(seen.insert(*c), "{c} claimed twice");
            }
        }
    }
    assert!(
        m.invariant_violations.is_empty(),
        "{:?}",
        m.invariant_violations
    );
}

#[test]
fn trace_is_ordered_and_runs_repeat_exactly() {
    let text = scenario("rows = 4\ncols = 4", "ictrl_domain_size = 4", LINEAR4);
    let a = run_text(&text, &RunOptions::default()).unwrap();
    let b = run_text(&text, &RunOptions::default()).unwrap();
    assert_eq!(a.trace_text(), b.trace_text());
    assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    let cycles: Vec<u64> = a.trace.iter().map(|l| l[..8].parse().unwrap()).collect();
    assert!(cycles.windows(2).all(|w| w[0] <= w[1]));
    assert!(a.trace.iter().any(|l| l.contains("INFECT")));
}

const WEST_SEEDS: &str = "rows = 4\ncols = 4\nseed_candidates = [\
{ row = 0, col = 0 }, { row = 1, col = 0 }, { row = 2, col = 0 }, { row = 3, col = 0 }]";

fn tmr_scenario(faults: &str) -> String {
    scenario(
        WEST_SEEDS,
        "",
        &format!(
            r#"
[[events]]
action = "invade"
at = 0
app = 1
strategy = "linear"
count = 4
reliability = "tmr"
loop = {{ taps = [3, 5, 7, 11], input_len = 16 }}
ft = {{ scheme = "intermediate_hw" }}

{faults}
"#
        ),
    )
}

#[test]
fn replicated_loop_corrects_a_fault_and_releases() {
    let faults = r#"
[[events]]
action = "inject_faults"
at = 0
app = 1
faults = [{ iteration = 3, replica = 0, pe_offset = 1, target = "partial_sum", bit = 5 }]
"#;
    let opts = RunOptions {
        trace: true,
        check_invariants: true,
    };
    let out = run_text(&tmr_scenario(faults), &opts).unwrap();
    let a = out.metrics.app(1).unwrap();
    assert_eq!(a.replicas.len(), 3);
    let ft = a.ft.as_ref().unwrap();
    assert_eq!((ft.injected, ft.corrected, ft.silent), (1, 1, 0));
    assert_eq!(a.ft_correct, Some(true));
    assert_eq!(
        a.replicas
            .iter()
            .filter(|r| r.retreat_latency.is_some())
            .count(),
        3
    );
    assert!(out
        .trace
        .iter()
        .any(|l| l.contains("FT app=1 VOTE it=3 var=s1 corrected replica=0")));
    assert!(
        out.metrics.invariant_violations.is_empty(),
        "{:?}",
        out.metrics.invariant_violations
    );
    // everything released and switched off again
    assert_eq!(out.metrics.utilization.at(out.metrics.total_cycles), 0.0);

    let sc = load_scenario(&tmr_scenario("")).unwrap();
    let ScenarioEvent::Invade(inv) = &sc.events[0] else {
        panic!()
    };
    let spec = inv.loop_source.as_ref().unwrap().resolve(sc.rng_seed, 1);
    let clean = run(&sc, &RunOptions::default()).unwrap();
    let outputs: Vec<_> = clean
        .metrics
        .app(1)
        .unwrap()
        .outputs
        .iter()
        .map(|o| o.unwrap())
        .collect();
    assert_eq!(outputs, fir_golden(&spec));
}

#[test]
fn tmr_without_room_reports_an_error() {
    let text = tmr_scenario("")
        .replace("rows = 4\ncols = 4", "rows = 2\ncols = 4")
        .replace(", { row = 2, col = 0 }, { row = 3, col = 0 }", "");
    let out = run_text(&text, &RunOptions::default()).unwrap();
    let a = out.metrics.app(1).unwrap();
    assert!(a
        .error
        .as_deref()
        .unwrap()
        .contains("insufficient resources"));
    assert!(a.ft.is_none());
    assert_eq!(out.metrics.utilization.at(out.metrics.total_cycles), 0.0);
}

#[test]
fn late_faults_are_reported() {
    let faults = r#"
[[events]]
action = "inject_faults"
at = 900
app = 1
faults = [{ iteration = 0, replica = 0, pe_offset = 0, target = "partial_sum", bit = 0 }]
"#;
    let out = run_text(&tmr_scenario(faults), &RunOptions::default()).unwrap();
    let a = out.metrics.app(1).unwrap();
    assert_eq!(a.ft.as_ref().unwrap().injected, 0);
    assert_eq!(a.warnings.len(), 1);
    let _ = FaultEvent::partial(0, 0, 0, 0);
}

#[test]
fn held_claims_keep_power_until_the_end() {
    let text = scenario("rows = 4\ncols = 4", "d_switch = 0", LINEAR4);
    let out = run_text(&text, &RunOptions::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.utilization.peak, 0.25);
    assert!(m.utilization.average > 0.24 && m.utilization.average <= 0.25);
    assert!(m.energy.savings_fraction > 0.7);
    assert!(
        m.energy.estimate_error < 0.036,
        "{}",
        m.energy.estimate_error
    );
}

#[test]
fn sweep_over_domain_sizes() {
    let text = scenario("rows = 4\ncols = 4", "", LINEAR4);
    let axes = [Axis::parse("power.ictrl_domain_size=1,4,row").unwrap()];
    let rows = sweep(&text, &axes, &SweepOptions::default()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(
        rows[2].params[0],
        ("power.ictrl_domain_size".into(), "row".into())
    );
    let csv = to_csv(&axes, &rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("index,power.ictrl_domain_size,rng_seed,total_cycles"));
    assert!(rows.iter().all(|r| r.metrics.energy.stall_cycles > 0));
    assert_ne!(rows[0].rng_seed, rows[1].rng_seed);
    // parallel and serial order agree
    let again = sweep(&text, &axes, &SweepOptions::default()).unwrap();
    assert_eq!(to_csv(&axes, &again), csv);
}

#[test]
fn sweep_edge_cases() {
    let text = scenario("rows = 4\ncols = 4", "", LINEAR4);
    assert!(sweep(&text, &[], &SweepOptions::default())
        .unwrap()
        .is_empty());
    let err = sweep(
        &text,
        &[Axis::parse("power.bogus=1,2").unwrap()],
        &SweepOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, SweepError::InvalidPath { ref path, .. } if path == "power.bogus"));
    let err = sweep(
        &text,
        &[Axis::parse("events[9].count=1").unwrap()],
        &SweepOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, SweepError::InvalidPath { .. }));
}

#[test]
fn overrides_change_the_scenario() {
    let text = scenario("rows = 4\ncols = 4", "", LINEAR4);
    let sc = apply_overrides(
        &text,
        &[
            ("power.ictrl_domain_size".into(), parse_value("4")),
            ("events[0].count".into(), parse_value("3")),
        ],
    )
    .unwrap();
    assert_eq!(sc.power.ictrl_domain_size, crate::power::DomainSize::Quad);
    assert!(matches!(&sc.events[0], ScenarioEvent::Invade(a) if a.count == Some(3)));
    assert_eq!(parse_value("row"), toml::Value::String("row".into()));
    assert_eq!(parse_value("2.5"), toml::Value::Float(2.5));
}
