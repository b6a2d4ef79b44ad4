//! Randomized multi-application protocol runs checked against the invariants.

use tcpa_sim::protocol::ProtocolParams;
use tcpa_sim::validation::{fuzz, FuzzConfig};

fn main() {
    let n = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let cfg = FuzzConfig {
        scenarios: n,
        ..Default::default()
    };
    let r = fuzz(&cfg, &ProtocolParams::default());
    println!(
        "{} scenarios: {} invades, {} rejected, {} claims, {} retreats",
        r.scenarios, r.invades, r.rejected, r.claims, r.retreats
    );
    println!(
        "violations: disjointness {} termination {} retreat {} shape {} state {}",
        r.disjointness_violations,
        r.termination_violations,
        r.retreat_violations,
        r.shape_violations,
        r.state_violations
    );
    for (case, v) in &r.failures {
        println!("{case:?}: {v:?}");
    }
}
