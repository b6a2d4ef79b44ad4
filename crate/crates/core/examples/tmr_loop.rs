//! A TMR-protected FIR with one injected bit flip, run through the engine.

use tcpa_sim::bench::scenarios;
use tcpa_sim::engine::{run_text, RunOptions};

fn main() {
    let out = run_text(scenarios::TMR_FIR, &RunOptions::default()).unwrap();
    let app = out.metrics.app(1).unwrap();
    for r in &app.replicas {
        println!("replica {} on {:?}", r.replica, r.pes);
    }
    let ft = app.ft.as_ref().unwrap();
    println!(
        "votes {} detected {} corrected {} silent {} outputs correct {:?}",
        ft.votes, ft.detected, ft.corrected, ft.silent, app.ft_correct
    );
    for line in out
        .trace
        .iter()
        .filter(|l| l.contains(" FT ") && !l.ends_with("match"))
    {
        println!("  {line}");
    }
}
