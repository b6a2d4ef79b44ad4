//! Distributed invade / infect / retreat protocol.
//!
//! Every PE's invasion controller reacts only to signals from its four
//! neighbors (or, for the seed, from the control processor). Invasion waves
//! travel one hop per `hop_latency` cycles, claim confirmations travel back
//! along the same path in reverse, and retreat waves follow the claim tree
//! out and back again. [`Protocol`] advances all in-flight waves of all
//! applications together, one cycle at a time.

mod engine;
pub mod seed;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{ArrayState, ClaimKey, Coord, Cycle};

pub use engine::{AlwaysOn, Completion, IctrlGate, Protocol};
pub use seed::{probe, select_seed};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("no available invasion seed for application {app}")]
    NoSeedAvailable { app: u32 },
    #[error("claim {key} is stale (already retreated or never granted)")]
    StaleClaim { key: ClaimKey },
    #[error("invalid request for application {app}: {reason}")]
    InvalidRequest { app: u32, reason: String },
    #[error("claim {key} is already in flight")]
    DuplicateClaim { key: ClaimKey },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvasionStrategy {
    Linear { count: u32 },
    Rectangular { width: u32, height: u32 },
}

impl InvasionStrategy {
    pub fn requested(&self) -> u32 {
        match *self {
            InvasionStrategy::Linear { count } => count,
            InvasionStrategy::Rectangular { width, height } => width * height,
        }
    }
}

impl fmt::Display for InvasionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvasionStrategy::Linear { count } => write!(f, "linear{{{count}}}"),
            InvasionStrategy::Rectangular { width, height } => {
                write!(f, "rect{{{width}x{height}}}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    #[default]
    None,
    Dmr,
    Tmr,
}

impl Reliability {
    pub fn replicas(&self) -> usize {
        match self {
            Reliability::None => 1,
            Reliability::Dmr => 2,
            Reliability::Tmr => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvadeRequest {
    pub app_id: u32,
    #[serde(default)]
    pub replica: u8,
    pub strategy: InvasionStrategy,
    #[serde(default)]
    pub reliability: Reliability,
    #[serde(default)]
    pub issue_cycle: Cycle,
}

impl InvadeRequest {
    pub fn linear(app_id: u32, count: u32) -> Self {
        InvadeRequest {
            app_id,
            replica: 0,
            strategy: InvasionStrategy::Linear { count },
            reliability: Reliability::None,
            issue_cycle: 0,
        }
    }

    pub fn rectangular(app_id: u32, width: u32, height: u32) -> Self {
        InvadeRequest {
            strategy: InvasionStrategy::Rectangular { width, height },
            ..InvadeRequest::linear(app_id, 1)
        }
    }

    pub fn at(mut self, cycle: Cycle) -> Self {
        self.issue_cycle = cycle;
        self
    }

    pub fn key(&self) -> ClaimKey {
        ClaimKey {
            app: self.app_id,
            replica: self.replica,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |reason: &str| ProtocolError::InvalidRequest {
            app: self.app_id,
            reason: reason.to_string(),
        };
        match self.strategy {
            InvasionStrategy::Linear { count: 0 } => Err(bad("linear count must be >= 1")),
            InvasionStrategy::Rectangular { width, height } if width == 0 || height == 0 => {
                Err(bad("rectangle sides must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

fn default_seed_select() -> Cycle {
    2
}
fn default_config_load() -> Cycle {
    1
}
fn default_c_fixed() -> Cycle {
    100
}
fn default_c_per_pe() -> Cycle {
    20
}

/// Control-processor timing constants and the centralized-manager cost model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    #[serde(default = "default_seed_select")]
    pub seed_select_cycles: Cycle,
    #[serde(default = "default_config_load")]
    pub config_load_cycles_per_pe: Cycle,
    #[serde(default = "default_c_fixed")]
    pub c_fixed: Cycle,
    #[serde(default = "default_c_per_pe")]
    pub c_per_pe: Cycle,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            seed_select_cycles: 2,
            config_load_cycles_per_pe: 1,
            c_fixed: 100,
            c_per_pe: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub key: ClaimKey,
    pub strategy: InvasionStrategy,
    pub seed: Coord,
    /// Claimed PEs in invasion order; `pes[0]` is the seed.
    pub pes: Vec<Coord>,
    pub requested: u32,
    pub granted: u32,
    /// Issue to the last invade signal.
    pub invade_latency: Cycle,
    /// Last invade signal to the confirmation reaching the seed.
    pub claim_latency: Cycle,
    /// Cycles the wave spent waiting on iCtrl power domains.
    pub stall_cycles: Cycle,
    pub issue_cycle: Cycle,
    pub completed_at: Cycle,
}

impl Claim {
    pub fn complete(&self) -> bool {
        self.granted == self.requested
    }

    pub fn total_latency(&self) -> Cycle {
        self.invade_latency + self.claim_latency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    SeedSelected,
    InvadeSignal,
    ClaimConfirm,
    RetreatSignal,
    RetreatConfirm,
    InfectLoaded,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::SeedSelected => "SEED",
            EventKind::InvadeSignal => "INVADE",
            EventKind::ClaimConfirm => "CLAIM",
            EventKind::RetreatSignal => "RETREAT",
            EventKind::RetreatConfirm => "RETREAT_ACK",
            EventKind::InfectLoaded => "INFECT",
        };
        f.write_str(s)
    }
}

/// One signal delivery. `None` on either end stands for the control
/// processor. For confirmations `count` is the number of PEs granted by the
/// sender's sub-tree (0 for a rejection or a failed rectangle).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolEvent {
    pub cycle: Cycle,
    pub kind: EventKind,
    pub from: Option<Coord>,
    pub to: Option<Coord>,
    pub app: ClaimKey,
    pub count: u32,
}

impl fmt::Display for ProtocolEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = |c: Option<Coord>| c.map_or("cp".to_string(), |c| c.to_string());
        write!(
            f,
            "{:08} {} app={} from={} to={} n={}",
            self.cycle,
            self.kind,
            self.app,
            end(self.from),
            end(self.to),
            self.count
        )
    }
}

/// Runs one invasion to quiescence on its own and returns the resulting claim.
pub fn invade(
    state: &mut ArrayState,
    request: InvadeRequest,
    params: &ProtocolParams,
) -> Result<Claim, ProtocolError> {
    let mut protocol = Protocol::new(params.clone());
    protocol.submit(state, request)?;
    protocol.run_until_quiescent(state, request.issue_cycle, &mut AlwaysOn);
    protocol
        .drain_completions()
        .into_iter()
        .find_map(|c| match c {
            Completion::Claimed(claim) if claim.key == request.key() => Some(claim),
            _ => None,
        })
        .ok_or(ProtocolError::StaleClaim { key: request.key() })
}

/// Issues several requests in the same cycle and steps them together.
pub fn invade_concurrent(
    state: &mut ArrayState,
    requests: &[InvadeRequest],
    params: &ProtocolParams,
) -> Vec<Result<Claim, ProtocolError>> {
    let mut protocol = Protocol::new(params.clone());
    let start = requests.iter().map(|r| r.issue_cycle).min().unwrap_or(0);
    let submitted: Vec<_> = requests
        .iter()
        .map(|r| protocol.submit(state, *r).map(|_| r.key()))
        .collect();
    protocol.run_until_quiescent(state, start, &mut AlwaysOn);
    let mut claims: Vec<Claim> = protocol
        .drain_completions()
        .into_iter()
        .filter_map(|c| match c {
            Completion::Claimed(claim) => Some(claim),
            _ => None,
        })
        .collect();
    submitted
        .into_iter()
        .map(|s| {
            let key = s?;
            let i = claims
                .iter()
                .position(|c| c.key == key)
                .ok_or(ProtocolError::StaleClaim { key })?;
            Ok(claims.swap_remove(i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfectOutcome {
    pub events: Vec<ProtocolEvent>,
    pub done_at: Cycle,
}

/// Loads `program` into every claimed PE, pipelined along the claim order.
pub fn infect(
    state: &mut ArrayState,
    claim: &Claim,
    program: u32,
    params: &ProtocolParams,
    start: Cycle,
) -> Result<InfectOutcome, ProtocolError> {
    check_live(state, claim)?;
    let per_pe = params.config_load_cycles_per_pe.max(1);
    let mut events = Vec::with_capacity(claim.pes.len());
    for (k, c) in claim.pes.iter().enumerate() {
        state.pe_mut(*c).program = Some(program);
        events.push(ProtocolEvent {
            cycle: start + per_pe + k as Cycle,
            kind: EventKind::InfectLoaded,
            from: None,
            to: Some(*c),
            app: claim.key,
            count: program,
        });
    }
    Ok(InfectOutcome {
        done_at: start + per_pe + claim.pes.len() as Cycle - 1,
        events,
    })
}

/// Releases a claim through a retreat wave and returns its latency.
pub fn retreat(
    state: &mut ArrayState,
    claim: &Claim,
    params: &ProtocolParams,
) -> Result<Cycle, ProtocolError> {
    let mut protocol = Protocol::new(params.clone());
    protocol.begin_retreat(state, claim, 0)?;
    protocol.run_until_quiescent(state, 0, &mut AlwaysOn);
    protocol
        .drain_completions()
        .into_iter()
        .find_map(|c| match c {
            Completion::Retreated { key, latency, .. } if key == claim.key => Some(latency),
            _ => None,
        })
        .ok_or(ProtocolError::StaleClaim { key: claim.key })
}

pub(crate) fn check_live(state: &ArrayState, claim: &Claim) -> Result<(), ProtocolError> {
    let stale = ProtocolError::StaleClaim { key: claim.key };
    if claim.granted == 0 || claim.pes.is_empty() {
        return Err(stale);
    }
    for c in &claim.pes {
        if !state.in_bounds(*c) || state.pe(*c).owner != Some(claim.key) {
            return Err(stale);
        }
    }
    Ok(())
}

/// Cycles a purely software resource manager on the control processor would
/// spend scanning and reserving `granted` PEs.
pub fn centralized_baseline_cycles(params: &ProtocolParams, granted: u32) -> Cycle {
    params.c_fixed + params.c_per_pe * granted as Cycle
}

pub fn speedup(params: &ProtocolParams, claim: &Claim) -> f64 {
    centralized_baseline_cycles(params, claim.granted) as f64 / claim.total_latency().max(1) as f64
}
