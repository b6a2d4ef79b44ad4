//! Single linear claims on an empty array, both controller kinds.

use tcpa_sim::array::{build_array, ArrayConfig, ICtrlKind};
use tcpa_sim::protocol::{invade, retreat, InvadeRequest, ProtocolParams};

fn main() {
    let params = ProtocolParams::default();
    println!("{:>3} {:>6} {:>6} {:>8}", "n", "fsm", "prog", "retreat");
    for n in 1..=16u32 {
        let mut row = Vec::new();
        let mut back = 0;
        for kind in [ICtrlKind::Fsm, ICtrlKind::Programmable] {
            let mut state = build_array(ArrayConfig::new(4, 4).with_kind(kind)).unwrap();
            let claim = invade(&mut state, InvadeRequest::linear(1, n), &params).unwrap();
            row.push(claim.total_latency());
            if kind == ICtrlKind::Fsm {
                back = retreat(&mut state, &claim, &params).unwrap();
            }
        }
        println!("{n:>3} {:>6} {:>6} {back:>8}", row[0], row[1]);
    }
}
