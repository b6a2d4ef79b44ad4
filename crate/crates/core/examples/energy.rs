//! Savings and estimator error of the low-utilization workload per domain size.

use tcpa_sim::bench::{energy_bench, energy_table, scenarios};

fn main() {
    let r = energy_bench(scenarios::ENERGY_LOW_UTIL, &[]).unwrap();
    print!("{}", energy_table(&r.points));
    for f in &r.failures {
        println!("FAIL {f}");
    }
}
