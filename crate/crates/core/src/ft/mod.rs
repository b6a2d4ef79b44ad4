//! On-demand DMR/TMR loop execution.
//!
//! A replicated application claims two or three identical `Linear{T}` chains
//! and runs a T-tap systolic FIR on each. Voting operations are inserted at
//! the plan's vote points according to one of four voter placements, faults
//! are single-bit flips in named registers, and a detected but uncorrectable
//! disagreement triggers the recovery policy (halt, rewind, migrate).

mod campaign;
mod exec;
mod plan;
mod vote;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Coord;
use crate::protocol::{Claim, Reliability};

pub use campaign::{
    campaign_program, classify, coverage_diff, fault_space, silent_pairs, single_fault_sweep,
    CampaignSummary, CoverageDiff, FaultClass,
};
pub use exec::{execute_with_faults, fir_golden, FtAction, FtOutcome, FtRecord};
pub use plan::{
    overhead_report, plan_from_claims, plan_replication, replicate_loop, ArrayMigrator, Migrator,
    NoMigration, OverheadReport, ReplicatedProgram, VoteOp, VoteVar,
};
pub use vote::{vote, VoteOutcome};

pub type Word = u16;
pub const WORD_BITS: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FtError {
    #[error("insufficient resources for {replicas} replicas of {chain} PEs")]
    InsufficientResources { replicas: usize, chain: u32 },
    #[error("invalid replication plan: {0}")]
    InvalidPlan(String),
    #[error("invalid loop: {0}")]
    InvalidLoop(String),
    #[error("invalid fault #{index}: {reason}")]
    InvalidFault { index: usize, reason: String },
}

fn default_len() -> usize {
    0
}

/// A T-tap FIR, `y[i] = sum_j a[j] * x[i-j]` in wrapping 16-bit arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub taps: Vec<Word>,
    pub input: Vec<Word>,
    /// Iterations per frame; 0 means the whole input.
    #[serde(default = "default_len")]
    pub frame_size: usize,
    /// Iterations per input buffer; 0 means one frame.
    #[serde(default = "default_len")]
    pub buffer_size: usize,
}

impl LoopSpec {
    pub fn new(taps: Vec<Word>, input: Vec<Word>) -> Self {
        LoopSpec {
            taps,
            input,
            frame_size: 0,
            buffer_size: 0,
        }
    }

    pub fn with_buffers(mut self, buffer_size: usize, frame_size: usize) -> Self {
        self.buffer_size = buffer_size;
        self.frame_size = frame_size;
        self
    }

    pub fn taps_len(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn frame(&self) -> usize {
        if self.frame_size == 0 {
            self.len()
        } else {
            self.frame_size
        }
    }

    pub fn buffer(&self) -> usize {
        if self.buffer_size == 0 {
            self.frame()
        } else {
            self.buffer_size
        }
    }

    pub fn validate(&self) -> Result<(), FtError> {
        let bad = |s: &str| Err(FtError::InvalidLoop(s.to_string()));
        if self.taps.is_empty() {
            return bad("at least one tap is required");
        }
        if self.len() < self.taps_len() {
            return bad("input must be at least as long as the tap count");
        }
        if !self.len().is_multiple_of(self.frame()) || !self.frame().is_multiple_of(self.buffer()) {
            return bad(
                "buffer_size must divide frame_size and frame_size must divide the input length",
            );
        }
        Ok(())
    }
}

/// Voter placement, after the four TMR variants of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VotingScheme {
    /// Hardware voter on the output border PE of the middle replica.
    #[serde(rename = "output_hw")]
    OutputHw,
    /// Software voting of intermediates on the middle replica, with the
    /// voted value propagated to the others.
    #[serde(rename = "intermediate_sw_middle")]
    IntermediateSwMiddle,
    /// Hardware voters in every middle-replica PE.
    #[serde(rename = "intermediate_hw")]
    IntermediateHw,
    /// Software voting on every replica.
    #[serde(rename = "intermediate_sw_all")]
    IntermediateSwAll,
}

impl VotingScheme {
    pub const ALL: [VotingScheme; 4] = [
        VotingScheme::OutputHw,
        VotingScheme::IntermediateSwMiddle,
        VotingScheme::IntermediateHw,
        VotingScheme::IntermediateSwAll,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            VotingScheme::OutputHw => "output_hw",
            VotingScheme::IntermediateSwMiddle => "intermediate_sw_middle",
            VotingScheme::IntermediateHw => "intermediate_hw",
            VotingScheme::IntermediateSwAll => "intermediate_sw_all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        VotingScheme::ALL.into_iter().find(|v| v.label() == s)
    }

    pub fn is_hardware(&self) -> bool {
        matches!(self, VotingScheme::OutputHw | VotingScheme::IntermediateHw)
    }

    pub fn default_voted_vars(&self) -> VotedVars {
        match self {
            VotingScheme::OutputHw => VotedVars::OutputsOnly,
            _ => VotedVars::OutputsAndPartials,
        }
    }

    /// Added cycles of one vote.
    pub fn vote_cost(&self, costs: &VotingCosts, replicas: usize, hop: u64) -> u64 {
        match self {
            // overlapped with the output transfer
            VotingScheme::OutputHw => 0,
            VotingScheme::IntermediateHw => costs.v_hw,
            VotingScheme::IntermediateSwMiddle => costs.v_sw + costs.propagation_hops * hop,
            VotingScheme::IntermediateSwAll => costs.v_sw + (replicas as u64 - 1) * hop,
        }
    }
}

impl fmt::Display for VotingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotedVars {
    OutputsOnly,
    OutputsAndPartials,
}

fn d_v_hw() -> u64 {
    1
}
fn d_v_sw() -> u64 {
    8
}
fn d_prop() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingCosts {
    #[serde(default = "d_v_hw")]
    pub v_hw: u64,
    #[serde(default = "d_v_sw")]
    pub v_sw: u64,
    /// Hops charged to push a voted value from the middle replica to the
    /// others.
    #[serde(default = "d_prop")]
    pub propagation_hops: u64,
}

impl Default for VotingCosts {
    fn default() -> Self {
        VotingCosts {
            v_hw: 1,
            v_sw: 8,
            propagation_hops: 1,
        }
    }
}

impl VotingCosts {
    pub fn validate(&self) -> Result<(), FtError> {
        if self.v_hw > self.v_sw {
            return Err(FtError::InvalidPlan("v_hw must not exceed v_sw".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewindTarget {
    PreviousIteration,
    BufferStart,
    FrameStart,
}

fn d_migrate() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryPolicy {
    pub rewind_target: RewindTarget,
    #[serde(default = "d_migrate")]
    pub migrate_threshold: u32,
}

impl RecoveryPolicy {
    pub fn new(rewind_target: RewindTarget) -> Self {
        RecoveryPolicy {
            rewind_target,
            migrate_threshold: 3,
        }
    }
}

/// How a replicated application is protected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtSpec {
    pub scheme: VotingScheme,
    #[serde(default = "one")]
    pub vote_every: usize,
    #[serde(default)]
    pub voted_vars: Option<VotedVars>,
    /// No policy means fail-safe halt on the first uncorrectable vote.
    #[serde(default)]
    pub recovery: Option<RecoveryPolicy>,
    /// Overrides the scheme's default voter placement.
    #[serde(default)]
    pub voter_pes: Option<Vec<Coord>>,
}

fn one() -> usize {
    1
}

impl FtSpec {
    pub fn new(scheme: VotingScheme) -> Self {
        FtSpec {
            scheme,
            vote_every: 1,
            voted_vars: None,
            recovery: None,
            voter_pes: None,
        }
    }

    pub fn every(mut self, k: usize) -> Self {
        self.vote_every = k;
        self
    }

    pub fn voting(mut self, vars: VotedVars) -> Self {
        self.voted_vars = Some(vars);
        self
    }

    pub fn recover(mut self, policy: RecoveryPolicy) -> Self {
        self.recovery = Some(policy);
        self
    }

    pub fn vars(&self) -> VotedVars {
        self.voted_vars.unwrap_or(self.scheme.default_voted_vars())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub mode: Reliability,
    pub replica_claims: Vec<Claim>,
    pub scheme: VotingScheme,
    pub vote_every: usize,
    pub voted_vars: VotedVars,
    pub voter_pes: Vec<Coord>,
    pub recovery: Option<RecoveryPolicy>,
    pub warnings: Vec<String>,
}

impl ReplicationPlan {
    pub fn replicas(&self) -> usize {
        self.mode.replicas()
    }

    /// Replica that holds the voters and whose value is used when no vote
    /// happens.
    pub fn primary(&self) -> usize {
        primary_replica(self.mode)
    }

    pub fn chains(&self) -> Vec<Vec<Coord>> {
        self.replica_claims.iter().map(|c| c.pes.clone()).collect()
    }
}

pub(crate) fn primary_replica(mode: Reliability) -> usize {
    match mode {
        Reliability::Tmr => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    PartialSum,
    Output,
}

/// Single-bit flip of a register at one iteration of one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub iteration: usize,
    pub replica: usize,
    pub pe_offset: usize,
    pub target: FaultTarget,
    pub bit: u8,
    /// Fires again whenever the iteration is replayed on the same PE.
    #[serde(default)]
    pub recurring: bool,
}

impl FaultEvent {
    pub fn partial(iteration: usize, replica: usize, pe_offset: usize, bit: u8) -> Self {
        FaultEvent {
            iteration,
            replica,
            pe_offset,
            target: FaultTarget::PartialSum,
            bit,
            recurring: false,
        }
    }

    pub fn output(iteration: usize, replica: usize, taps: usize, bit: u8) -> Self {
        FaultEvent {
            target: FaultTarget::Output,
            ..FaultEvent::partial(iteration, replica, taps - 1, bit)
        }
    }

    pub fn recurring(mut self) -> Self {
        self.recurring = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewindCounts {
    pub previous_iteration: u64,
    pub buffer_start: u64,
    pub frame_start: u64,
}

impl RewindCounts {
    pub fn total(&self) -> u64 {
        self.previous_iteration + self.buffer_start + self.frame_start
    }

    fn bump(&mut self, t: RewindTarget) {
        match t {
            RewindTarget::PreviousIteration => self.previous_iteration += 1,
            RewindTarget::BufferStart => self.buffer_start += 1,
            RewindTarget::FrameStart => self.frame_start += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FtStats {
    pub injected: u64,
    /// Votes whose replicas disagreed.
    pub detected: u64,
    pub corrected: u64,
    /// Valid outputs that differ from the golden result.
    pub silent: u64,
    pub halts: u64,
    pub rewinds: RewindCounts,
    pub migrations: u64,
    pub votes: u64,
    pub timing_overhead_fraction: f64,
    pub protected_cycles: u64,
    pub unprotected_cycles: u64,
    pub voter_fu_count: usize,
    pub aborted: bool,
}
