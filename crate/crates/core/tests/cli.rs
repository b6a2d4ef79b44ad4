use std::fs;
use std::path::Path;

use tcpa_sim::bench::scenarios;
use tcpa_sim::cli::main_with;

fn tcpa(args: &[&str]) -> i32 {
    main_with(std::iter::once("tcpa").chain(args.iter().copied()))
}

fn write_demo(dir: &Path) -> String {
    let p = dir.join("demo.toml");
    fs::write(&p, scenarios::DEMO).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_metrics_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let out = dir.path().join("out");
    assert_eq!(tcpa(&["simulate", &demo, "-o", out.to_str().unwrap()]), 0);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["apps"].as_array().unwrap().len(), 3);
    assert!(fs::read_to_string(out.join("trace.txt"))
        .unwrap()
        .contains("SEED app=1"));
}

#[test]
fn trace_off_skips_the_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        tcpa(&[
            "simulate",
            &demo,
            "--trace",
            "off",
            "-o",
            out.to_str().unwrap()
        ]),
        0
    );
    assert!(out.join("metrics.json").exists());
    assert!(!out.join("trace.txt").exists());
}

#[test]
fn grouped_domain_override_changes_toggles() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let toggles = |size: &str| {
        let out = dir.path().join(size);
        let set = format!("power.ictrl_domain_size={size}");
        assert_eq!(
            tcpa(&[
                "simulate",
                &demo,
                "--set",
                &set,
                "-o",
                out.to_str().unwrap()
            ]),
            0
        );
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        m["energy"]["ictrl_toggles"].as_u64().unwrap()
    };
    assert!(toggles("4") < toggles("1"));
}

#[test]
fn bad_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, scenarios::DEMO.replace("count = 8", "count = 0")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        tcpa(&["simulate", p.to_str().unwrap(), "-o", out.to_str().unwrap()]),
        1
    );
    assert!(!out.join("metrics.json").exists());
    let err = tcpa_sim::engine::load_scenario(&fs::read_to_string(&p).unwrap()).unwrap_err();
    assert_eq!(err.field(), Some("events[0].count"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tcpa(&["simulate", "/nonexistent/scenario.toml"]), 2);
    assert_eq!(tcpa(&["frobnicate"]), 2);
    assert_eq!(tcpa(&["speedup-bench", "--kind", "quantum"]), 2);
    assert_eq!(tcpa(&["sweep", "x.toml", "--axis", "novalues"]), 2);
}

#[test]
fn unknown_override_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        tcpa(&[
            "simulate",
            &demo,
            "--set",
            "power.bogus=1",
            "-o",
            out.to_str().unwrap()
        ]),
        1
    );
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let out = dir.path().join("out");
    let code = tcpa(&[
        "sweep",
        &demo,
        "--axis",
        "power.d_switch=0,10",
        "--axis",
        "power.ictrl_domain_size=1,row",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(&header[1], "power.d_switch");
    assert_eq!(&header[2], "power.ictrl_domain_size");
    assert_eq!(r.records().count(), 4);
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        tcpa(&[
            "simulate",
            &demo,
            "--seed",
            "99",
            "-o",
            out.to_str().unwrap()
        ]),
        0
    );
}

#[test]
fn speedup_bench_single_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        tcpa(&[
            "speedup-bench",
            "--sizes",
            "4",
            "--kind",
            "fsm",
            "-o",
            out.to_str().unwrap()
        ]),
        0
    );
    let mut r = csv::Reader::from_path(out.join("speedup.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let speedup = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "speedup")
        .unwrap();
    assert_eq!(&rows[0][speedup], "22.5");
}

#[test]
fn speedup_bench_without_strict_tolerates_misses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(
        tcpa(&[
            "speedup-bench",
            "--set",
            "protocol.c_per_pe=1",
            "--sizes",
            "256",
            "-o",
            o
        ]),
        0
    );
    assert_eq!(
        tcpa(&[
            "speedup-bench",
            "--set",
            "protocol.c_per_pe=1",
            "--sizes",
            "256",
            "--strict",
            "-o",
            o
        ]),
        1
    );
}

#[test]
fn energy_bench_passes_and_fails_on_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    let o = o.to_str().unwrap();
    assert_eq!(tcpa(&["energy-bench", "-o", o]), 0);
    assert_eq!(
        fs::read_to_string(dir.path().join("out/energy.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    // always-on PEs cannot save anything
    assert_eq!(
        tcpa(&[
            "energy-bench",
            "--set",
            "power.p_pe_off=10.0",
            "--set",
            "power.p_ictrl_off=1.0",
            "-o",
            o
        ]),
        1
    );
}

#[test]
fn ft_run_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    assert_eq!(
        tcpa(&[
            "ft-run",
            "--taps",
            "2",
            "--iterations",
            "4",
            "-o",
            o.to_str().unwrap()
        ]),
        0
    );
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("ft.json")).unwrap()).unwrap();
    assert_eq!(r["sweeps"].as_array().unwrap().len(), 4);
    assert!(r["failures"].as_array().unwrap().is_empty());
}

#[test]
fn validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    assert_eq!(
        tcpa(&["validate", "--scenarios", "400", "-o", o.to_str().unwrap()]),
        0
    );
}
