//! Exhaustive single-fault sweeps and the two-fault scheme comparison.

use tcpa_sim::bench::{ft_bench, ft_table};

fn main() {
    let r = ft_bench(4, 16).unwrap();
    print!("{}", ft_table(&r));
    println!("passed: {}", r.passed());
}
