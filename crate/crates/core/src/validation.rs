//! Randomized property checks over many concurrent applications.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{
    build_array, ArrayConfig, ArrayState, ClaimKey, Coord, Cycle, ICtrlKind, Phase,
};
use crate::engine::{point_seed, run, RunOptions, Scenario, ScenarioEvent};
use crate::protocol::{
    AlwaysOn, Claim, Completion, InvadeRequest, InvasionStrategy, Protocol, ProtocolParams,
};

/// One randomized multi-application case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub rows: usize,
    pub cols: usize,
    pub kind: ICtrlKind,
    pub apps: Vec<FuzzApp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzApp {
    pub app: u32,
    pub strategy: InvasionStrategy,
    pub issue: Cycle,
    /// Cycles after the claim completes at which it is retreated.
    pub retreat_after: Option<Cycle>,
}

impl FuzzCase {
    pub fn random(rng: &mut impl Rng, min_apps: usize, max_apps: usize) -> Self {
        let rows = rng.random_range(2..=8);
        let cols = rng.random_range(2..=8);
        let kind = if rng.random_bool(0.5) {
            ICtrlKind::Fsm
        } else {
            ICtrlKind::Programmable
        };
        let n = rng.random_range(min_apps..=max_apps);
        let apps = (0..n)
            .map(|k| {
                let strategy = if rng.random_bool(0.6) {
                    InvasionStrategy::Linear {
                        count: rng.random_range(1..=(rows * cols) as u32),
                    }
                } else {
                    InvasionStrategy::Rectangular {
                        width: rng.random_range(1..=cols as u32),
                        height: rng.random_range(1..=rows as u32),
                    }
                };
                FuzzApp {
                    app: k as u32 + 1,
                    strategy,
                    // small window so that many requests collide
                    issue: rng.random_range(0..12),
                    retreat_after: rng.random_bool(0.6).then(|| rng.random_range(0..30)),
                }
            })
            .collect();
        FuzzCase {
            rows,
            cols,
            kind,
            apps,
        }
    }

    fn config(&self) -> ArrayConfig {
        ArrayConfig::new(self.rows, self.cols).with_kind(self.kind)
    }

    /// Per-invade completion bound from the termination invariant.
    pub fn termination_bound(&self, params: &ProtocolParams) -> Cycle {
        let hop = self.config().hop_latency();
        params.seed_select_cycles + 2 * hop * (self.rows * self.cols) as Cycle
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseReport {
    pub invades: u64,
    pub rejected: u64,
    pub claims: u64,
    pub retreats: u64,
    pub disjointness: Vec<String>,
    pub termination: Vec<String>,
    pub retreat_completeness: Vec<String>,
    pub shape: Vec<String>,
    pub state: Vec<String>,
}

impl CaseReport {
    pub fn violations(&self) -> usize {
        self.disjointness.len()
            + self.termination.len()
            + self.retreat_completeness.len()
            + self.shape.len()
            + self.state.len()
    }
}

fn shape_errors(claim: &Claim) -> Vec<String> {
    let mut out = Vec::new();
    let k = claim.key;
    if claim.granted as usize != claim.pes.len() {
        out.push(format!(
            "{k}: granted {} but {} PEs",
            claim.granted,
            claim.pes.len()
        ));
    }
    let unique: BTreeSet<Coord> = claim.pes.iter().copied().collect();
    if unique.len() != claim.pes.len() {
        out.push(format!("{k}: duplicate PEs"));
    }
    if claim.pes.first().is_some_and(|c| *c != claim.seed) {
        out.push(format!("{k}: first PE is not the seed"));
    }
    match claim.strategy {
        InvasionStrategy::Linear { count } => {
            if claim.granted > count {
                out.push(format!("{k}: granted more than requested"));
            }
            for w in claim.pes.windows(2) {
                if w[0].row.abs_diff(w[1].row) + w[0].col.abs_diff(w[1].col) != 1 {
                    out.push(format!("{k}: chain broken between {} and {}", w[0], w[1]));
                }
            }
        }
        InvasionStrategy::Rectangular { width, height } if claim.granted > 0 => {
            let rows: BTreeSet<usize> = claim.pes.iter().map(|c| c.row).collect();
            let cols: BTreeSet<usize> = claim.pes.iter().map(|c| c.col).collect();
            let contiguous = |s: &BTreeSet<usize>| {
                s.last().copied().unwrap_or(0) - s.first().copied().unwrap_or(0) + 1 == s.len()
            };
            if claim.granted != width * height
                || rows.len() * cols.len() != unique.len()
                || !contiguous(&rows)
                || !contiguous(&cols)
                || !(rows.len() == height as usize && cols.len() == width as usize)
            {
                out.push(format!("{k}: not a {width}x{height} rectangle"));
            }
        }
        InvasionStrategy::Rectangular { .. } => {}
    }
    out
}

/// Nothing of `key` is left on the PE. Another wave may already have taken
/// it in the same cycle.
fn released_from(state: &ArrayState, c: Coord, key: ClaimKey) -> bool {
    let pe = state.pe(c);
    pe.owner != Some(key) && pe.ictrl.phase.key() != Some(key)
}

fn released(state: &ArrayState, c: Coord) -> bool {
    let pe = state.pe(c);
    pe.owner.is_none()
        && pe.ictrl.phase == Phase::Idle
        && pe.ictrl.pending_confirms == 0
        && state.available(c)
}

/// Steps one case through the protocol and checks every property.
pub fn check_case(case: &FuzzCase, params: &ProtocolParams) -> CaseReport {
    let mut rep = CaseReport::default();
    let mut state = build_array(case.config()).expect("fuzz arrays are valid");
    let mut protocol = Protocol::new(params.clone());
    let bound = case.termination_bound(params);
    let mut held: BTreeMap<ClaimKey, Claim> = BTreeMap::new();
    let mut retreat_at: BTreeMap<Cycle, Vec<ClaimKey>> = BTreeMap::new();
    let mut issues: Vec<FuzzApp> = case.apps.clone();
    issues.sort_by_key(|a| (a.issue, a.app));
    let mut next = 0;
    let horizon = issues.last().map_or(0, |a| a.issue) + 2 * bound + 64;
    let mut t: Cycle = 0;
    while t <= horizon {
        while next < issues.len() && issues[next].issue == t {
            let a = issues[next];
            next += 1;
            let req = InvadeRequest {
                strategy: a.strategy,
                ..InvadeRequest::linear(a.app, 1)
            }
            .at(t);
            rep.invades += 1;
            if protocol.submit(&state, req).is_err() {
                rep.rejected += 1;
            }
        }
        for key in retreat_at.remove(&t).unwrap_or_default() {
            if let Some(c) = held.get(&key) {
                if let Err(e) = protocol.begin_retreat(&state, c, t) {
                    rep.retreat_completeness
                        .push(format!("{key}: retreat refused: {e}"));
                }
            }
        }
        protocol.step_gated(&mut state, t, &mut AlwaysOn);
        for c in protocol.drain_completions() {
            match c {
                Completion::Claimed(claim) => {
                    rep.claims += 1;
                    let a = case
                        .apps
                        .iter()
                        .find(|a| a.app == claim.key.app)
                        .expect("known app");
                    if claim.completed_at - claim.issue_cycle > bound {
                        rep.termination.push(format!(
                            "{}: took {} cycles, bound {bound}",
                            claim.key,
                            claim.completed_at - claim.issue_cycle
                        ));
                    }
                    rep.shape.extend(shape_errors(&claim));
                    for other in held.values() {
                        if let Some(p) = claim.pes.iter().find(|p| other.pes.contains(p)) {
                            rep.disjointness
                                .push(format!("{} and {} both hold {p}", claim.key, other.key));
                        }
                    }
                    for p in &claim.pes {
                        if state.pe(*p).owner != Some(claim.key) {
                            rep.disjointness.push(format!(
                                "{}: {p} owned by {:?}",
                                claim.key,
                                state.pe(*p).owner
                            ));
                        }
                    }
                    if claim.granted > 0 {
                        if let Some(d) = a.retreat_after {
                            retreat_at.entry(t + 1 + d).or_default().push(claim.key);
                        }
                        held.insert(claim.key, claim);
                    }
                }
                Completion::Retreated { key, .. } => {
                    rep.retreats += 1;
                    if let Some(claim) = held.remove(&key) {
                        for p in claim
                            .pes
                            .iter()
                            .filter(|p| !released_from(&state, **p, key))
                        {
                            rep.retreat_completeness
                                .push(format!("{key}: {p} not released"));
                        }
                    }
                }
                Completion::RolledBack { key, .. } => {
                    if let Some(p) = state.coords().find(|c| state.pe(*c).owner == Some(key)) {
                        rep.retreat_completeness
                            .push(format!("{key}: {p} kept after rollback"));
                    }
                }
            }
        }
        rep.state.extend(
            state
                .check_invariants()
                .into_iter()
                .map(|v| format!("{t}: {v}")),
        );
        if next == issues.len() && retreat_at.is_empty() && protocol.is_quiescent() {
            break;
        }
        t += 1;
    }
    if !protocol.is_quiescent() {
        rep.termination
            .push(format!("not quiescent after {horizon} cycles"));
    }
    // whatever is still held must come back cleanly too
    let rest: Vec<Claim> = held.values().cloned().collect();
    for c in &rest {
        match crate::protocol::retreat(&mut state, c, params) {
            Ok(_) => {
                rep.retreats += 1;
                for p in c.pes.iter().filter(|p| !released(&state, **p)) {
                    rep.retreat_completeness
                        .push(format!("{}: {p} not released", c.key));
                }
            }
            Err(e) => rep.retreat_completeness.push(format!("{}: {e}", c.key)),
        }
    }
    if let Some(c) = state.coords().find(|c| !released(&state, *c)) {
        rep.state
            .push(format!("{c} not idle after every claim retreated"));
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzConfig {
    pub scenarios: usize,
    pub seed: u64,
    pub min_apps: usize,
    pub max_apps: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            scenarios: 10_000,
            seed: 0,
            min_apps: 2,
            max_apps: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub scenarios: usize,
    pub invades: u64,
    pub rejected: u64,
    pub claims: u64,
    pub retreats: u64,
    pub disjointness_violations: usize,
    pub termination_violations: usize,
    pub retreat_violations: usize,
    pub shape_violations: usize,
    pub state_violations: usize,
    /// The first failing cases with their messages.
    pub failures: Vec<(FuzzCase, Vec<String>)>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.disjointness_violations
            + self.termination_violations
            + self.retreat_violations
            + self.shape_violations
            + self.state_violations
            == 0
    }
}

pub fn fuzz_case(cfg: &FuzzConfig, index: usize) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, index));
    FuzzCase::random(&mut rng, cfg.min_apps, cfg.max_apps)
}

/// Runs `cfg.scenarios` random cases in parallel.
pub fn fuzz(cfg: &FuzzConfig, params: &ProtocolParams) -> FuzzReport {
    let reports: Vec<(usize, CaseReport)> = (0..cfg.scenarios)
        .into_par_iter()
        .map(|i| (i, check_case(&fuzz_case(cfg, i), params)))
        .collect();
    let mut out = FuzzReport {
        scenarios: cfg.scenarios,
        ..FuzzReport::default()
    };
    for (i, r) in reports {
        out.invades += r.invades;
        out.rejected += r.rejected;
        out.claims += r.claims;
        out.retreats += r.retreats;
        out.disjointness_violations += r.disjointness.len();
        out.termination_violations += r.termination.len();
        out.retreat_violations += r.retreat_completeness.len();
        out.shape_violations += r.shape.len();
        out.state_violations += r.state.len();
        if r.violations() > 0 && out.failures.len() < 5 {
            let msgs = [
                r.disjointness,
                r.termination,
                r.retreat_completeness,
                r.shape,
                r.state,
            ]
            .concat();
            out.failures.push((fuzz_case(cfg, i), msgs));
        }
    }
    out
}

/// Builds an engine scenario from a fuzz case, with power gating on.
pub fn engine_scenario(case: &FuzzCase, seed: u64) -> Scenario {
    let mut events: Vec<ScenarioEvent> = Vec::new();
    let mut apps = case.apps.clone();
    apps.sort_by_key(|a| (a.issue, a.app));
    for a in &apps {
        let (strategy, count, width, height) = match a.strategy {
            InvasionStrategy::Linear { count } => {
                (crate::engine::StrategyKind::Linear, Some(count), None, None)
            }
            InvasionStrategy::Rectangular { width, height } => (
                crate::engine::StrategyKind::Rectangular,
                None,
                Some(width),
                Some(height),
            ),
        };
        events.push(ScenarioEvent::Invade(crate::engine::InvadeAction {
            at: a.issue,
            app: a.app,
            strategy,
            count,
            width,
            height,
            reliability: Default::default(),
            program: None,
            loop_source: None,
            ft: None,
        }));
    }
    let mut retreats: Vec<(Cycle, u32)> = apps
        .iter()
        .filter_map(|a| a.retreat_after.map(|d| (a.issue + d, a.app)))
        .collect();
    retreats.sort();
    let mut merged: Vec<ScenarioEvent> = Vec::new();
    let mut r = retreats.into_iter().peekable();
    for e in events {
        while r.peek().is_some_and(|(at, _)| *at < e.at()) {
            let (at, app) = r.next().expect("peeked");
            merged.push(ScenarioEvent::Retreat { at, app });
        }
        merged.push(e);
    }
    merged.extend(r.map(|(at, app)| ScenarioEvent::Retreat { at, app }));
    Scenario {
        rng_seed: seed,
        max_cycles: 100_000,
        array: case.config().resolved(),
        protocol: ProtocolParams::default(),
        power: Default::default(),
        voting: Default::default(),
        events: merged,
    }
}

/// Runs fuzz cases through the full engine with power gating and checks the
/// cross-module invariants every cycle. Returns the violations found.
pub fn engine_fuzz(cfg: &FuzzConfig) -> Vec<String> {
    (0..cfg.scenarios)
        .into_par_iter()
        .flat_map_iter(|i| {
            let case = fuzz_case(cfg, i);
            let sc = engine_scenario(&case, cfg.seed);
            let opts = RunOptions {
                trace: false,
                check_invariants: true,
            };
            let mut v = Vec::new();
            match run(&sc, &opts) {
                Ok(out) => {
                    if out.metrics.truncated {
                        v.push(format!("case {i}: did not finish"));
                    }
                    v.extend(
                        out.metrics
                            .invariant_violations
                            .iter()
                            .map(|m| format!("case {i}: {m}")),
                    );
                }
                Err(e) => v.push(format!("case {i}: {e}")),
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_fuzz_is_clean() {
        let cfg = FuzzConfig {
            scenarios: 300,
            seed: 11,
            ..FuzzConfig::default()
        };
        let r = fuzz(&cfg, &ProtocolParams::default());
        assert!(r.passed(), "{:#?}", r.failures);
        assert!(r.claims > 0 && r.retreats > 0 && r.rejected < r.invades);
    }

    #[test]
    fn engine_fuzz_is_clean() {
        let cfg = FuzzConfig {
            scenarios: 60,
            seed: 5,
            ..FuzzConfig::default()
        };
        let v = engine_fuzz(&cfg);
        assert!(v.is_empty(), "{v:#?}");
    }

    #[test]
    fn shape_check_catches_broken_chains() {
        let claim = Claim {
            key: ClaimKey { app: 1, replica: 0 },
            strategy: InvasionStrategy::Linear { count: 2 },
            seed: Coord::new(0, 0),
            pes: vec![Coord::new(0, 0), Coord::new(1, 1)],
            requested: 2,
            granted: 2,
            invade_latency: 0,
            claim_latency: 0,
            stall_cycles: 0,
            issue_cycle: 0,
            completed_at: 0,
        };
        assert_eq!(shape_errors(&claim).len(), 1);
    }

    #[test]
    fn cases_are_reproducible() {
        let cfg = FuzzConfig::default();
        assert_eq!(fuzz_case(&cfg, 42), fuzz_case(&cfg, 42));
        assert_ne!(fuzz_case(&cfg, 42), fuzz_case(&cfg, 43));
    }
}
