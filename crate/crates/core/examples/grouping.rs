//! Domain granularity: idle energy against switching activity.

use tcpa_sim::bench::{grouping_tradeoff, scenarios};

fn main() {
    let r = grouping_tradeoff(scenarios::MIXED_GROUPING).unwrap();
    for (k, size) in ["1", "4", "row"].iter().enumerate() {
        println!(
            "domain {size:>3}: energy (free switching) {:>9.0}  toggles {:>4}",
            r.free_energy[k], r.toggles[k]
        );
    }
    println!(
        "energy ordered: {}  toggles ordered: {}",
        r.energy_ordered(),
        r.toggles_ordered()
    );
}
