//! Distributed claim latency against the centralized manager model.

use tcpa_sim::array::ICtrlKind;
use tcpa_sim::bench::{scenarios, speedup_bench, speedup_table, SPEEDUP_SIZES};

fn main() {
    let kinds = [ICtrlKind::Fsm, ICtrlKind::Programmable];
    let rows = speedup_bench(scenarios::SPEEDUP, SPEEDUP_SIZES, &kinds, &[]).unwrap();
    print!("{}", speedup_table(&rows));
}
