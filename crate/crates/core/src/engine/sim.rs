use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use log::debug;

use super::metrics::{AppMetrics, Metrics, ReplicaMetrics, Utilization};
use super::scenario::{InvadeAction, Scenario, ScenarioError, ScenarioEvent};
use crate::array::{build_array, ArrayState, ClaimKey, Cycle};
use crate::ft::{
    execute_with_faults, fir_golden, plan_from_claims, replicate_loop, ArrayMigrator, FaultEvent,
    LoopSpec, Migrator,
};
use crate::power::{self, AppEnergySummary, PowerManager};
use crate::protocol::{
    self, centralized_baseline_cycles, Claim, Completion, InvadeRequest, Protocol, ProtocolParams,
    Reliability,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
    /// Checks the array and power invariants after every cycle and records
    /// violations in the metrics.
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            trace: true,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    /// One record per line, in cycle order.
    pub trace: Vec<String>,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        let mut s = self.trace.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Pending,
    Claiming,
    Powering,
    Holding,
    Running { end: Cycle },
    Releasing,
    Done,
}

struct Segment {
    key: ClaimKey,
    granted: u32,
    from: Cycle,
    to: Option<Cycle>,
}

struct App {
    action: InvadeAction,
    loop_spec: Option<LoopSpec>,
    faults: Vec<FaultEvent>,
    claims: Vec<Claim>,
    stage: Stage,
    retreat_requested: bool,
    outstanding: usize,
    segments: Vec<Segment>,
    m: AppMetrics,
}

impl App {
    fn replicated(&self) -> bool {
        self.action.reliability != Reliability::None
    }
}

/// Claim migration inside a running simulation: the old chains are released
/// and new ones claimed at once, then the power domains follow.
struct EngineMigrator<'a> {
    state: &'a mut ArrayState,
    power: &'a mut PowerManager,
    params: &'a ProtocolParams,
    cycle: Cycle,
}

impl Migrator for EngineMigrator<'_> {
    fn migrate(
        &mut self,
        claims: &[Claim],
        implicated: &[usize],
        chain_len: u32,
    ) -> Option<Vec<Claim>> {
        let cause = claims.first()?.key;
        let fresh = ArrayMigrator {
            state: self.state,
            params: self.params,
        }
        .migrate(claims, implicated, chain_len);
        for c in fresh.iter().flatten() {
            self.power.wake(&c.pes, c.key, self.cycle);
        }
        self.power.reconcile_all(self.state, cause, self.cycle);
        self.power.mirror(self.state);
        fresh
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    opts: RunOptions,
    state: ArrayState,
    protocol: Protocol,
    power: PowerManager,
    apps: Vec<App>,
    by_id: BTreeMap<u32, usize>,
    next_event: usize,
    deferred: BinaryHeap<Reverse<(Cycle, u64, String)>>,
    seq: u64,
    trace: Vec<String>,
    util: Utilization,
    violations: Vec<String>,
}

/// Runs a validated scenario.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, ScenarioError> {
    sc.validate()?;
    let state = build_array(sc.array.clone())?;
    let power = PowerManager::new(sc.power.clone(), &state)?;
    let mut sim = Sim {
        sc,
        opts: *opts,
        protocol: Protocol::new(sc.protocol.clone()),
        power,
        state,
        apps: Vec::new(),
        by_id: BTreeMap::new(),
        next_event: 0,
        deferred: BinaryHeap::new(),
        seq: 0,
        trace: Vec::new(),
        util: Utilization::default(),
        violations: Vec::new(),
    };
    for ev in &sc.events {
        if let ScenarioEvent::Invade(a) = ev {
            sim.by_id.insert(a.app, sim.apps.len());
            let loop_spec = a
                .loop_source
                .as_ref()
                .map(|l| l.resolve(sc.rng_seed, a.app));
            let strategy = a.invasion();
            sim.apps.push(App {
                action: a.clone(),
                loop_spec,
                faults: Vec::new(),
                claims: Vec::new(),
                stage: Stage::Pending,
                retreat_requested: false,
                outstanding: 0,
                segments: Vec::new(),
                m: AppMetrics::new(
                    a.app,
                    strategy.to_string(),
                    a.reliability,
                    strategy.requested(),
                ),
            });
        }
    }
    Ok(sim.run())
}

/// Parses, validates and runs a scenario document.
pub fn run_text(text: &str, opts: &RunOptions) -> Result<RunOutput, ScenarioError> {
    run(&super::scenario::load_scenario(text)?, opts)
}

impl Sim<'_> {
    fn run(mut self) -> RunOutput {
        let pes = self.state.config().pe_count();
        let mut t: Cycle = 0;
        let mut truncated = false;
        let end_at = self.sc.events.iter().find_map(|e| match e {
            ScenarioEvent::End { at } => Some(*at),
            _ => None,
        });
        loop {
            if end_at.is_some_and(|at| t >= at) || self.finished() {
                break;
            }
            if t >= self.sc.max_cycles {
                truncated = true;
                break;
            }
            self.cycle(t);
            t += 1;
            // nothing can happen before the next wake-up point
            if let Some(next) = self.idle_until(t) {
                let skip = next.min(self.sc.max_cycles) - t;
                if skip > 0 {
                    self.power.accumulate(skip);
                    t += skip;
                }
            }
        }
        let span = t;
        for a in &mut self.apps {
            for s in a.segments.iter_mut().filter(|s| s.to.is_none()) {
                s.to = Some(span);
            }
        }
        self.util.finish(span);
        let summaries = self.energy_summaries();
        let stall = self.apps.iter().map(|a| a.m.stall_cycles).sum();
        let energy = power::report(&self.power, pes, &summaries, stall);
        debug!("run finished after {span} cycles");
        RunOutput {
            metrics: Metrics {
                total_cycles: span,
                truncated,
                apps: self.apps.into_iter().map(|a| a.m).collect(),
                energy,
                utilization: self.util,
                invariant_violations: self.violations,
            },
            trace: self.trace,
        }
    }

    fn finished(&self) -> bool {
        self.next_event == self.sc.events.len()
            && self.protocol.is_quiescent()
            && self.deferred.is_empty()
            && self.power.is_stable()
            && self
                .apps
                .iter()
                .all(|a| matches!(a.stage, Stage::Done | Stage::Holding))
    }

    /// First cycle at or after `t` where something may happen, when that is
    /// later than `t`.
    fn idle_until(&self, t: Cycle) -> Option<Cycle> {
        if !self.power.is_stable() || self.apps.iter().any(|a| matches!(a.stage, Stage::Powering)) {
            return None;
        }
        let mut next = Cycle::MAX;
        if let Some(ev) = self.sc.events.get(self.next_event) {
            next = next.min(ev.at());
        }
        if let Some(c) = self.protocol.next_arrival() {
            next = next.min(c);
        }
        if let Some(Reverse((c, _, _))) = self.deferred.peek() {
            next = next.min(*c);
        }
        for a in &self.apps {
            if let Stage::Running { end } = a.stage {
                next = next.min(end);
            }
        }
        (next != Cycle::MAX && next > t).then_some(next)
    }

    fn cycle(&mut self, t: Cycle) {
        self.fire_events(t);
        let events = self
            .protocol
            .step_gated(&mut self.state, t, &mut self.power);
        self.power.cycle(&mut self.state, &events, t);
        for c in self.protocol.drain_completions() {
            self.complete(c, t);
        }
        self.advance_apps(t);
        self.power.accumulate(1);
        let pes = self.state.config().pe_count();
        self.util.record(t, self.power.pes_on() as f64 / pes as f64);

        let transitions = self.power.drain_transitions();
        if self.opts.trace {
            self.trace.extend(events.iter().map(ToString::to_string));
            self.trace
                .extend(transitions.iter().map(ToString::to_string));
        }
        while self.deferred.peek().is_some_and(|r| r.0 .0 <= t) {
            let Reverse((_, _, line)) = self.deferred.pop().expect("peeked");
            if self.opts.trace {
                self.trace.push(line);
            }
        }
        if self.opts.check_invariants {
            self.check(t);
        }
    }

    fn check(&mut self, t: Cycle) {
        let strict = self.sc.power.pe_domain_size == power::DomainSize::Single;
        let mut found = self.state.check_invariants();
        found.extend(self.state.check_power_invariants(strict));
        let mirrored = self.state.pes().filter(|p| p.pe_power.is_on()).count();
        if mirrored != self.power.pes_on() {
            found.push(format!(
                "power manager counts {} PEs on, array {mirrored}",
                self.power.pes_on()
            ));
        }
        self.violations
            .extend(found.into_iter().map(|v| format!("{t:08} {v}")));
    }

    fn defer(&mut self, cycle: Cycle, line: String) {
        self.seq += 1;
        self.deferred.push(Reverse((cycle, self.seq, line)));
    }

    fn note(&mut self, t: Cycle, idx: usize, what: &str) {
        let line = format!("{t:08} APP app={} {what}", self.apps[idx].action.app);
        if self.opts.trace {
            self.trace.push(line);
        }
    }

    fn fail(&mut self, t: Cycle, idx: usize, msg: String) {
        self.note(t, idx, &format!("error: {msg}"));
        self.apps[idx].m.error = Some(msg);
    }

    fn fire_events(&mut self, t: Cycle) {
        while let Some(ev) = self.sc.events.get(self.next_event) {
            if ev.at() > t || matches!(ev, ScenarioEvent::End { .. }) {
                break;
            }
            self.next_event += 1;
            match ev {
                ScenarioEvent::Invade(a) => {
                    let idx = self.by_id[&a.app];
                    self.apps[idx].stage = Stage::Claiming;
                    self.submit(idx, 0, t);
                }
                ScenarioEvent::Retreat { app, .. } => {
                    let idx = self.by_id[app];
                    let app = &mut self.apps[idx];
                    app.retreat_requested = true;
                    if !app.replicated() && matches!(app.stage, Stage::Holding | Stage::Powering) {
                        self.release(idx, t);
                    }
                }
                ScenarioEvent::InjectFaults { app, faults, .. } => {
                    let idx = self.by_id[app];
                    let app = &mut self.apps[idx];
                    match app.stage {
                        Stage::Pending | Stage::Claiming | Stage::Powering => {
                            app.faults.extend(faults.iter().copied())
                        }
                        _ => app
                            .m
                            .warnings
                            .push(format!("faults at cycle {t} arrived after loop start")),
                    }
                }
                ScenarioEvent::End { .. } => unreachable!(),
            }
        }
    }

    fn submit(&mut self, idx: usize, replica: u8, t: Cycle) {
        let a = &self.apps[idx].action;
        let req = InvadeRequest {
            app_id: a.app,
            replica,
            strategy: a.invasion(),
            reliability: a.reliability,
            issue_cycle: t,
        };
        if let Err(e) = self.protocol.submit(&self.state, req) {
            let msg = match a.reliability {
                Reliability::None => e.to_string(),
                mode => format!(
                    "{} ({e})",
                    crate::ft::FtError::InsufficientResources {
                        replicas: mode.replicas(),
                        chain: req.strategy.requested(),
                    }
                ),
            };
            self.fail(t, idx, msg);
            self.release(idx, t + 1);
        }
    }

    fn complete(&mut self, c: Completion, t: Cycle) {
        match c {
            Completion::Claimed(claim) => {
                let idx = self.by_id[&claim.key.app];
                let app = &mut self.apps[idx];
                app.m.replicas.push(ReplicaMetrics {
                    replica: claim.key.replica,
                    granted: claim.granted,
                    invade_latency: claim.invade_latency,
                    claim_latency: claim.claim_latency,
                    stall_cycles: claim.stall_cycles,
                    retreat_latency: None,
                    pes: claim.pes.clone(),
                });
                app.m.granted += claim.granted;
                app.m.invade_latency += claim.invade_latency;
                app.m.claim_latency += claim.claim_latency;
                app.m.stall_cycles += claim.stall_cycles;
                app.m.speedup_vs_centralized =
                    centralized_baseline_cycles(&self.sc.protocol, app.m.granted) as f64
                        / (app.m.invade_latency + app.m.claim_latency).max(1) as f64;
                let ok = claim.complete();
                if claim.granted > 0 {
                    app.segments.push(Segment {
                        key: claim.key,
                        granted: claim.granted,
                        from: t,
                        to: None,
                    });
                    app.claims.push(claim.clone());
                }
                let replicas = app.action.reliability.replicas();
                if !app.replicated() {
                    app.m.complete = ok;
                    app.m.claimed_at = Some(t);
                    if claim.granted == 0 {
                        app.stage = Stage::Done;
                    } else if app.retreat_requested {
                        self.release(idx, t + 1);
                    } else {
                        app.stage = Stage::Powering;
                    }
                } else if !ok {
                    let msg = crate::ft::FtError::InsufficientResources {
                        replicas,
                        chain: claim.requested,
                    }
                    .to_string();
                    self.fail(t, idx, msg);
                    self.release(idx, t + 1);
                } else if app.claims.len() < replicas {
                    let next = app.claims.len() as u8;
                    self.submit(idx, next, t);
                } else {
                    app.m.complete = true;
                    app.m.claimed_at = Some(t);
                    app.stage = Stage::Powering;
                }
            }
            Completion::Retreated {
                key,
                latency,
                completed_at,
            } => {
                let idx = self.by_id[&key.app];
                let app = &mut self.apps[idx];
                if let Some(r) = app
                    .m
                    .replicas
                    .iter_mut()
                    .rev()
                    .find(|r| r.replica == key.replica)
                {
                    r.retreat_latency = Some(latency);
                }
                app.m.retreat_latency = app.m.retreat_latency.max(Some(latency));
                if let Some(s) = app
                    .segments
                    .iter_mut()
                    .find(|s| s.key == key && s.to.is_none())
                {
                    s.to = Some(completed_at + 1);
                }
                app.outstanding = app.outstanding.saturating_sub(1);
                if app.outstanding == 0 && app.stage == Stage::Releasing {
                    app.stage = Stage::Done;
                    app.m.released_at = Some(completed_at);
                }
            }
            Completion::RolledBack { .. } => {}
        }
    }

    /// Starts the retreat of every claim the application holds.
    fn release(&mut self, idx: usize, cycle: Cycle) {
        let claims = std::mem::take(&mut self.apps[idx].claims);
        let mut started = 0;
        for c in &claims {
            match self.protocol.begin_retreat(&self.state, c, cycle) {
                Ok(()) => started += 1,
                Err(e) => self.apps[idx].m.warnings.push(e.to_string()),
            }
        }
        let app = &mut self.apps[idx];
        app.outstanding += started;
        app.stage = if app.outstanding > 0 {
            Stage::Releasing
        } else {
            Stage::Done
        };
    }

    fn advance_apps(&mut self, t: Cycle) {
        for idx in 0..self.apps.len() {
            match self.apps[idx].stage {
                Stage::Running { end } if end <= t => {
                    self.note(t, idx, "loop done");
                    self.release(idx, t + 1);
                }
                Stage::Powering => {
                    let powered = self.apps[idx]
                        .claims
                        .iter()
                        .flat_map(|c| &c.pes)
                        .all(|c| self.state.pe(*c).pe_power.is_on());
                    if powered {
                        self.start(idx, t);
                    }
                }
                _ => {}
            }
        }
    }

    /// Loads the program and, for replicated applications, runs the loop.
    fn start(&mut self, idx: usize, t: Cycle) {
        let program = self.apps[idx]
            .action
            .program
            .unwrap_or(self.apps[idx].action.app);
        let mut done = t;
        for c in self.apps[idx].claims.clone() {
            match protocol::infect(&mut self.state, &c, program, &self.sc.protocol, t) {
                Ok(out) => {
                    done = done.max(out.done_at);
                    for e in out.events {
                        self.defer(e.cycle, e.to_string());
                    }
                }
                Err(e) => self.apps[idx].m.warnings.push(e.to_string()),
            }
        }
        if !self.apps[idx].replicated() {
            self.apps[idx].stage = Stage::Holding;
            return;
        }
        let begin = done + 1;
        let app = &self.apps[idx];
        let spec = app.action.ft_spec();
        let loop_spec = app.loop_spec.clone().expect("validated");
        let result = plan_from_claims(
            app.claims.clone(),
            app.action.reliability,
            &loop_spec,
            &spec,
        )
        .and_then(|plan| {
            replicate_loop(&loop_spec, &plan, &self.sc.voting, self.state.hop_latency())
        })
        .and_then(|program| {
            let mut migrator = EngineMigrator {
                state: &mut self.state,
                power: &mut self.power,
                params: &self.sc.protocol,
                cycle: t,
            };
            execute_with_faults(&program, &app.faults, &mut migrator)
                .map(|out| (program.plan.warnings.clone(), out))
        });
        let (warnings, out) = match result {
            Ok(r) => r,
            Err(e) => {
                self.fail(t, idx, e.to_string());
                self.release(idx, t + 1);
                return;
            }
        };
        let app_id = self.apps[idx].action.app;
        for r in &out.records {
            self.defer(
                begin + r.offset,
                format!("{:08} FT app={app_id} {}", begin + r.offset, r.action),
            );
        }
        let app = &mut self.apps[idx];
        app.m.warnings.extend(warnings);
        if out.stats.migrations > 0 || out.stats.aborted {
            for s in app.segments.iter_mut().filter(|s| s.to.is_none()) {
                s.to = Some(t);
            }
            for c in &out.claims {
                app.segments.push(Segment {
                    key: c.key,
                    granted: c.granted,
                    from: t,
                    to: None,
                });
            }
        }
        app.claims = out.claims.clone();
        app.m.ft_correct = Some(out.matches(&fir_golden(&loop_spec)));
        app.m.ft = Some(out.stats.clone());
        app.m.outputs = out.outputs.clone();
        app.stage = Stage::Running {
            end: begin + out.cycles,
        };
        self.note(t, idx, &format!("loop start at={begin}"));
    }

    fn energy_summaries(&self) -> Vec<AppEnergySummary> {
        let toggles = self.power.app_toggles();
        let mut out = Vec::new();
        for a in &self.apps {
            let t = toggles.get(&a.action.app).copied().unwrap_or_default();
            let first = out.len();
            for s in &a.segments {
                out.push(AppEnergySummary {
                    app: a.action.app,
                    granted: u64::from(s.granted),
                    busy: s.to.unwrap_or(s.from) - s.from,
                    toggles: Default::default(),
                });
            }
            if out.len() == first {
                out.push(AppEnergySummary {
                    app: a.action.app,
                    ..Default::default()
                });
            }
            out[first].toggles = t;
        }
        out
    }
}
