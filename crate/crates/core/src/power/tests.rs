use super::*;
use crate::array::{build_array, ArrayConfig, Phase};
use crate::protocol::{Completion, InvadeRequest, Protocol, ProtocolParams};

fn key(app: u32) -> ClaimKey {
    ClaimKey { app, replica: 0 }
}

/// Protocol and power stepped together, as the simulation loop does.
struct Rig {
    state: ArrayState,
    proto: Protocol,
    pm: PowerManager,
    t: Cycle,
    done: Vec<Completion>,
}

impl Rig {
    fn new(rows: usize, cols: usize, model: PowerModel) -> Self {
        let state = build_array(ArrayConfig::new(rows, cols)).unwrap();
        let pm = PowerManager::new(model, &state).unwrap();
        Rig {
            state,
            proto: Protocol::new(ProtocolParams::default()),
            pm,
            t: 0,
            done: Vec::new(),
        }
    }

    fn step(&mut self) {
        let events = self.proto.step_gated(&mut self.state, self.t, &mut self.pm);
        self.pm.cycle(&mut self.state, &events, self.t);
        self.pm.accumulate(1);
        self.done.extend(self.proto.drain_completions());
        self.t += 1;
    }

    fn run_to(&mut self, end: Cycle) {
        while self.t < end {
            self.step();
        }
    }

    fn invade(&mut self, req: InvadeRequest) -> crate::protocol::Claim {
        self.proto.submit(&self.state, req.at(self.t)).unwrap();
        loop {
            self.step();
            let found = self.done.iter().find_map(|c| match c {
                Completion::Claimed(cl) if cl.key == req.key() => Some(cl.clone()),
                _ => None,
            });
            if let Some(c) = found {
                return c;
            }
        }
    }

    fn retreat(&mut self, claim: &crate::protocol::Claim) {
        self.proto
            .begin_retreat(&self.state, claim, self.t)
            .unwrap();
        while !self.proto.is_quiescent() {
            self.step();
        }
    }
}

#[test]
fn single_ictrl_domains_pay_one_delay_per_hop() {
    let mut rig = Rig::new(4, 4, PowerModel::default());
    let claim = rig.invade(InvadeRequest::linear(1, 4));
    // seed at 2, each of 4 iCtrls waits 10 cycles, 3 hops out, 3 back
    assert_eq!(claim.total_latency(), 2 + 4 * 10 + 3 + 3);
    assert_eq!(claim.stall_cycles, 40);
    assert_eq!(rig.pm.toggles(DomainKind::ICtrl), 4);
}

#[test]
fn quad_domain_pays_one_delay() {
    let model = PowerModel {
        ictrl_domain_size: DomainSize::Quad,
        ..PowerModel::default()
    };
    let mut rig = Rig::new(2, 2, model);
    let claim = rig.invade(InvadeRequest::linear(1, 4));
    assert_eq!(claim.total_latency(), 2 + 10 + 3 + 3);
    assert_eq!(rig.pm.toggles(DomainKind::ICtrl), 1);
}

#[test]
fn shared_domain_stays_on_while_other_app_holds_a_member() {
    let model = PowerModel {
        ictrl_domain_size: DomainSize::Quad,
        ..PowerModel::default()
    };
    let mut rig = Rig::new(2, 2, model);
    let a = rig.invade(InvadeRequest::linear(1, 3));
    let b = rig.invade(InvadeRequest::linear(2, 1));
    assert_eq!(b.granted, 1);
    rig.retreat(&a);
    rig.run_to(rig.t + 20);
    assert_eq!(rig.pm.domains(DomainKind::ICtrl)[0].state, PowerState::On);
    rig.retreat(&b);
    rig.run_to(rig.t + 20);
    assert_eq!(rig.pm.domains(DomainKind::ICtrl)[0].state, PowerState::Off);
    assert!(rig.state.check_power_invariants(true).is_empty());
}

#[test]
fn retreat_powers_everything_down() {
    let mut rig = Rig::new(4, 4, PowerModel::default());
    let claim = rig.invade(InvadeRequest::linear(1, 4));
    rig.run_to(rig.t + 15);
    assert_eq!(rig.pm.pes_on(), 4);
    assert!(rig.state.check_power_invariants(true).is_empty());
    rig.retreat(&claim);
    rig.run_to(rig.t + 15);
    assert_eq!(rig.pm.pes_on(), 0);
    assert!(rig
        .state
        .pes()
        .all(|pe| pe.pe_power == PowerState::Off && pe.ictrl_power == PowerState::Off));
    // every domain went on and off once
    assert_eq!(rig.pm.total_toggles(), 16);
}

#[test]
fn accumulate_rates() {
    let state = build_array(ArrayConfig::new(4, 4)).unwrap();
    let mut pm = PowerManager::new(PowerModel::default(), &state).unwrap();
    assert_eq!(pm.accumulate(100), 0.0);

    let mut state = build_array(ArrayConfig::new(1, 1)).unwrap();
    let mut pm = PowerManager::new(PowerModel::default().free_switching(), &state).unwrap();
    state.pe_mut(Coord::new(0, 0)).owner = Some(key(1));
    let confirm = ProtocolEvent {
        cycle: 0,
        kind: EventKind::ClaimConfirm,
        from: Some(Coord::new(0, 0)),
        to: None,
        app: key(1),
        count: 1,
    };
    pm.on_protocol_events(&state, &[confirm]);
    assert_eq!(pm.accumulate(100), 1000.0);
}

#[test]
fn hand_integrated_claim_with_one_toggle_pair_per_group() {
    // 2x2 array, one domain per kind, claim busy over cycles 50..150 of 200
    let model = PowerModel {
        ictrl_domain_size: DomainSize::Array,
        pe_domain_size: DomainSize::Array,
        ..PowerModel::default().free_switching()
    };
    let model = PowerModel {
        e_switch: 50.0,
        ..model
    };
    let mut state = build_array(ArrayConfig::new(2, 2)).unwrap();
    let mut pm = PowerManager::new(model, &state).unwrap();
    let coords: Vec<Coord> = state.coords().collect();
    for t in 0..200 {
        let mut events = Vec::new();
        if t == 50 {
            for c in &coords {
                assert!(pm.ictrl_ready(*c, key(1), t));
                let pe = state.pe_mut(*c);
                pe.ictrl.phase = Phase::Claimed(key(1));
                pe.owner = Some(key(1));
                events.push(ProtocolEvent {
                    cycle: t,
                    kind: EventKind::ClaimConfirm,
                    from: Some(*c),
                    to: None,
                    app: key(1),
                    count: 1,
                });
            }
        }
        if t == 150 {
            for c in &coords {
                let pe = state.pe_mut(*c);
                pe.ictrl.reset();
                pe.owner = None;
                events.push(ProtocolEvent {
                    cycle: t,
                    kind: EventKind::RetreatConfirm,
                    from: Some(*c),
                    to: None,
                    app: key(1),
                    count: 0,
                });
            }
        }
        pm.cycle(&mut state, &events, t);
        pm.accumulate(1);
    }
    let want = 4.0 * 100.0 * (10.0 + 1.0) + 2.0 * 50.0 * 2.0;
    assert_eq!(pm.energy().total(), want);
    assert_eq!(pm.total_toggles(), 4);
}

#[test]
fn report_arithmetic() {
    let b = EnergyBreakdown {
        pe_on: 300.0,
        ..EnergyBreakdown::default()
    };
    let r = EnergyReport::new(b, 1000.0, 310.0);
    assert!((r.savings_fraction - 0.70).abs() < 1e-12);
    assert!((r.estimate_error - 10.0 / 300.0).abs() < 1e-12);
    let r = EnergyReport::new(b, 300.0, 300.0);
    assert_eq!(r.savings_fraction, 0.0);
    assert_eq!(r.e_total, r.e_by_component.total());
}

#[test]
fn analytic_extremes() {
    let m = PowerModel::default();
    assert_eq!(analytic_estimate(&[], &m, 16, 1000), 0.0);
    let full = AppEnergySummary {
        app: 1,
        granted: 16,
        busy: 1000,
        toggles: AppToggles::default(),
    };
    assert_eq!(
        analytic_estimate(&[full], &m, 16, 1000),
        m.baseline(16, 1000)
    );
}

#[test]
fn domain_sizes_parse_and_tile() {
    assert_eq!(DomainSize::parse("1"), Ok(DomainSize::Single));
    assert_eq!(DomainSize::parse("4"), Ok(DomainSize::Quad));
    assert_eq!(DomainSize::parse("row"), Ok(DomainSize::Row));
    assert_eq!(
        DomainSize::parse("3x3"),
        Ok(DomainSize::Block { rows: 3, cols: 3 })
    );
    assert!(DomainSize::parse("7").is_err());
    let err = DomainSize::parse("3x3")
        .unwrap()
        .check_tiles(4, 4, "power.ictrl_domain_size")
        .unwrap_err();
    assert_eq!(
        err.to_string(),
        "power.ictrl_domain_size: domain size does not tile array"
    );
    assert!(DomainSize::Quad.check_tiles(3, 4, "x").is_err());
    assert!(DomainSize::Row.check_tiles(3, 5, "x").is_ok());

    let m: PowerModel = toml::from_str("ictrl_domain_size = \"row\"\npe_domain_size = 4").unwrap();
    assert_eq!(m.ictrl_domain_size, DomainSize::Row);
    assert_eq!(m.pe_domain_size, DomainSize::Quad);
    assert!(toml::from_str::<PowerModel>("bogus = 1").is_err());
}

#[test]
fn zero_switching_costs_make_single_domains_cheapest() {
    let mut energies = Vec::new();
    for size in [
        DomainSize::Single,
        DomainSize::Quad,
        DomainSize::Row,
        DomainSize::Array,
    ] {
        let model = PowerModel {
            ictrl_domain_size: size,
            ..PowerModel::default().free_switching()
        };
        let mut rig = Rig::new(4, 4, model);
        let a = rig.invade(InvadeRequest::linear(1, 3));
        rig.run_to(100);
        rig.retreat(&a);
        rig.run_to(200);
        energies.push(rig.pm.energy().total());
    }
    // quad and row are not refinements of each other; only size 1 is finest
    assert!(energies.iter().all(|e| energies[0] <= *e), "{energies:?}");
    assert!(energies[0] < energies[3]);
}
