//! Runs a scenario file (the shipped demo by default) and prints per-app
//! results and the first trace lines.
//!
//!     cargo run --example simulate -- path/to/scenario.toml

use tcpa_sim::bench::scenarios;
use tcpa_sim::engine::{run_text, RunOptions};

fn main() {
    let text = match std::env::args().nth(1) {
        Some(p) => std::fs::read_to_string(p).expect("readable scenario"),
        None => scenarios::DEMO.to_string(),
    };
    let out = run_text(&text, &RunOptions::default()).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1)
    });
    let m = &out.metrics;
    println!("cycles {}  truncated {}", m.total_cycles, m.truncated);
    for a in &m.apps {
        println!(
            "app {:>2} {:<11} granted {:>2}/{:<2} latency {:>3} stall {:>3} speedup {:>6.2}",
            a.app,
            a.strategy,
            a.granted,
            a.requested,
            a.invade_latency + a.claim_latency,
            a.stall_cycles,
            a.speedup_vs_centralized
        );
    }
    println!(
        "energy {:.0} of {:.0} always-on, savings {:.3}",
        m.energy.e_total, m.energy.e_baseline, m.energy.savings_fraction
    );
    for line in out.trace.iter().take(12) {
        println!("  {line}");
    }
}
