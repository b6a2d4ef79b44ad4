//! Three applications racing for a 6x6 array, printed as an ownership map.

use tcpa_sim::array::{build_array, ArrayConfig, Coord};
use tcpa_sim::protocol::{invade_concurrent, InvadeRequest, ProtocolParams};

fn main() {
    let mut state = build_array(ArrayConfig::new(6, 6)).unwrap();
    let requests = vec![
        InvadeRequest::linear(1, 10),
        InvadeRequest::rectangular(2, 3, 3).at(1),
        InvadeRequest::linear(3, 7).at(2),
    ];
    let claims = invade_concurrent(&mut state, &requests, &ProtocolParams::default());
    for c in claims.iter().flatten() {
        println!(
            "app {} seed {:?} granted {}/{} latency {}",
            c.key.app,
            c.seed,
            c.granted,
            c.requested,
            c.total_latency()
        );
    }
    for r in 0..6 {
        let line: String = (0..6)
            .map(|col| match state.pe(Coord::new(r, col)).owner {
                Some(k) => char::from(b'0' + k.app as u8),
                None => '.',
            })
            .collect();
        println!("{line}");
    }
}
