use proptest::prelude::*;

use tcpa_sim::array::{build_array, ArrayConfig, Coord, ICtrlKind};
use tcpa_sim::engine::{apply_overrides, point_seed, run, RunOptions};
use tcpa_sim::ft::{vote, VoteOutcome};
use tcpa_sim::protocol::{invade, retreat, InvadeRequest, ProtocolParams, Reliability};
use tcpa_sim::validation::{check_case, engine_scenario, FuzzCase};
use toml::Value;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_claim_latency_is_closed_form(rows in 2usize..8, cols in 2usize..8, fsm in any::<bool>(), frac in 0.0f64..1.0) {
        let n = 1 + ((rows * cols - 1) as f64 * frac) as u32;
        let kind = if fsm { ICtrlKind::Fsm } else { ICtrlKind::Programmable };
        let mut s = build_array(ArrayConfig::new(rows, cols).with_kind(kind)).unwrap();
        let p = ProtocolParams::default();
        let hop = s.hop_latency();
        let claim = invade(&mut s, InvadeRequest::linear(1, n), &p).unwrap();
        if claim.complete() {
            prop_assert_eq!(claim.total_latency(), p.seed_select_cycles + 2 * hop * (u64::from(n) - 1));
            let back = retreat(&mut s, &claim, &p).unwrap();
            prop_assert_eq!(back, 2 * hop * (u64::from(n) - 1));
            for r in 0..rows {
                for c in 0..cols {
                    prop_assert!(s.pe(Coord::new(r, c)).owner.is_none());
                }
            }
        }
    }

    #[test]
    fn random_cases_keep_protocol_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = FuzzCase::random(&mut rng, 2, 8);
        let r = check_case(&case, &ProtocolParams::default());
        prop_assert_eq!(r.violations(), 0, "{:?}", r);
    }

    #[test]
    fn engine_runs_are_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = FuzzCase::random(&mut rng, 2, 5);
        let sc = engine_scenario(&case, seed);
        let opts = RunOptions { trace: true, check_invariants: true };
        let a = run(&sc, &opts).unwrap();
        let b = run(&sc, &opts).unwrap();
        prop_assert!(a.metrics.invariant_violations.is_empty(), "{:?}", a.metrics.invariant_violations);
        prop_assert_eq!(a.trace_text(), b.trace_text());
        prop_assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    }

    #[test]
    fn tmr_vote_masks_any_single_replica(v in any::<u16>(), bad in any::<u16>(), at in 0usize..3) {
        let mut vals = [v; 3];
        vals[at] = bad;
        let out = vote(&vals, Reliability::Tmr);
        prop_assert_eq!(out.value(), Some(v));
        if bad != v {
            prop_assert_eq!(out, VoteOutcome::Corrected { value: v, faulty: at });
        }
    }

    #[test]
    fn dmr_compare_never_picks_a_side(a in any::<u16>(), b in any::<u16>()) {
        let out = vote(&[a, b], Reliability::Dmr);
        if a == b {
            prop_assert_eq!(out, VoteOutcome::Match(a));
        } else {
            prop_assert_eq!(out, VoteOutcome::Mismatch);
        }
    }

    #[test]
    fn energy_never_exceeds_always_on(d_switch in 0i64..30, size in prop::sample::select(vec!["1", "4", "row", "array"])) {
        let set = [
            ("power.d_switch".to_string(), Value::Integer(d_switch)),
            ("power.e_switch".to_string(), Value::Float(0.0)),
            ("power.ictrl_domain_size".to_string(), Value::String(size.into())),
        ];
        let sc = apply_overrides(tcpa_sim::bench::scenarios::DEMO, &set).unwrap();
        let m = run(&sc, &RunOptions { trace: false, check_invariants: true }).unwrap().metrics;
        prop_assert!(m.energy.e_total <= m.energy.e_baseline + 1e-9);
        prop_assert!(m.invariant_violations.is_empty());
    }

    #[test]
    fn point_seeds_are_distinct(base in any::<u64>(), i in 0usize..1000, j in 0usize..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(point_seed(base, i), point_seed(base, j));
    }
}
