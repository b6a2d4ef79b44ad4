//! Parameter sweep over a scenario, printed as CSV.

use tcpa_sim::bench::scenarios;
use tcpa_sim::engine::{sweep, to_csv, Axis, SweepOptions};

fn main() {
    let axes = [
        Axis::parse("power.d_switch=0,10,40").unwrap(),
        Axis::parse("power.ictrl_domain_size=1,4,row").unwrap(),
    ];
    let rows = sweep(scenarios::DEMO, &axes, &SweepOptions::default()).unwrap();
    print!("{}", to_csv(&axes, &rows));
}
