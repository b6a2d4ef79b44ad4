use log::warn;
use serde::{Deserialize, Serialize};

use super::{
    primary_replica, FtError, FtSpec, LoopSpec, ReplicationPlan, RewindTarget, VotedVars,
    VotingCosts, VotingScheme,
};
use crate::array::{ArrayState, Coord};
use crate::protocol::{self, Claim, InvadeRequest, ProtocolParams, Reliability};

/// Releases and re-claims the replica chains of an application after
/// repeated uncorrectable votes.
pub trait Migrator {
    /// Retreats every claim in `claims`, quarantines the PEs of the replicas
    /// listed in `implicated` and claims fresh chains of `chain_len` PEs.
    /// Returns `None` (with nothing left claimed) when no room is left.
    fn migrate(
        &mut self,
        claims: &[Claim],
        implicated: &[usize],
        chain_len: u32,
    ) -> Option<Vec<Claim>>;
}

/// Migration is impossible; the run aborts instead.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoMigration;

impl Migrator for NoMigration {
    fn migrate(&mut self, _: &[Claim], _: &[usize], _: u32) -> Option<Vec<Claim>> {
        None
    }
}

/// Migrates directly on an array with self-contained protocol runs.
pub struct ArrayMigrator<'a> {
    pub state: &'a mut ArrayState,
    pub params: &'a ProtocolParams,
}

impl Migrator for ArrayMigrator<'_> {
    fn migrate(
        &mut self,
        claims: &[Claim],
        implicated: &[usize],
        chain_len: u32,
    ) -> Option<Vec<Claim>> {
        for c in claims {
            // already released claims are skipped
            let _ = protocol::retreat(self.state, c, self.params);
        }
        for r in implicated {
            for pe in &claims[*r].pes {
                self.state.quarantine(*pe);
            }
        }
        let first = claims.first()?;
        let mode = match claims.len() {
            2 => Reliability::Dmr,
            _ => Reliability::Tmr,
        };
        claim_chains(self.state, first.key.app, mode, chain_len, self.params).ok()
    }
}

/// Claims one `Linear{t}` chain per replica, one after the other. On any
/// partial or failed claim every chain is retreated again.
pub fn claim_chains(
    state: &mut ArrayState,
    app_id: u32,
    mode: Reliability,
    t: u32,
    params: &ProtocolParams,
) -> Result<Vec<Claim>, FtError> {
    let replicas = mode.replicas();
    let mut claims: Vec<Claim> = Vec::with_capacity(replicas);
    for r in 0..replicas {
        let req = InvadeRequest {
            replica: r as u8,
            reliability: mode,
            ..InvadeRequest::linear(app_id, t)
        };
        match protocol::invade(state, req, params) {
            Ok(c) if c.complete() => claims.push(c),
            other => {
                if let Ok(c) = other {
                    if c.granted > 0 {
                        claims.push(c);
                    }
                }
                for c in &claims {
                    let _ = protocol::retreat(state, c, params);
                }
                return Err(FtError::InsufficientResources { replicas, chain: t });
            }
        }
    }
    Ok(claims)
}

pub(crate) fn default_voters(
    scheme: VotingScheme,
    chains: &[Vec<Coord>],
    primary: usize,
) -> Vec<Coord> {
    let chain = &chains[primary];
    match scheme {
        VotingScheme::OutputHw => vec![*chain.last().expect("non-empty chain")],
        VotingScheme::IntermediateHw => chain.clone(),
        _ => Vec::new(),
    }
}

/// Checks the plan against its scheme.
pub fn validate_plan(plan: &ReplicationPlan) -> Result<(), FtError> {
    let bad = |s: &str| Err(FtError::InvalidPlan(s.to_string()));
    if plan.mode == Reliability::None {
        return bad("reliability must be dmr or tmr");
    }
    if plan.replica_claims.len() != plan.replicas() {
        return bad("replica claim count does not match the mode");
    }
    if plan.vote_every == 0 {
        return bad("vote_every must be >= 1");
    }
    if plan.scheme == VotingScheme::OutputHw && plan.voted_vars != VotedVars::OutputsOnly {
        return bad("output_hw votes outputs only");
    }
    if let Some(p) = &plan.recovery {
        if p.migrate_threshold == 0 {
            return bad("migrate_threshold must be >= 1");
        }
    }
    let chains = plan.chains();
    let len = chains[0].len();
    let mut seen = std::collections::BTreeSet::new();
    for c in chains.iter().flatten() {
        if !seen.insert(*c) {
            return bad("replica claims overlap");
        }
    }
    if chains.iter().any(|c| c.len() != len || c.is_empty()) {
        return bad("replica claims differ in shape");
    }
    if plan.scheme.is_hardware() {
        let need = default_voters(plan.scheme, &chains, plan.primary());
        if need.iter().any(|c| !plan.voter_pes.contains(c)) {
            return bad("hardware voters are missing from the voting replica");
        }
    }
    Ok(())
}

/// Claims the replica chains and places the voters.
pub fn plan_replication(
    state: &mut ArrayState,
    request: &InvadeRequest,
    loop_spec: &LoopSpec,
    spec: &FtSpec,
    params: &ProtocolParams,
) -> Result<ReplicationPlan, FtError> {
    loop_spec.validate()?;
    if request.reliability == Reliability::None {
        return Err(FtError::InvalidPlan(
            "reliability must be dmr or tmr".into(),
        ));
    }
    let t = loop_spec.taps_len() as u32;
    let claims = claim_chains(state, request.app_id, request.reliability, t, params)?;
    plan_from_claims(claims.clone(), request.reliability, loop_spec, spec).inspect_err(|_| {
        for c in &claims {
            let _ = protocol::retreat(state, c, params);
        }
    })
}

/// Builds the plan over chains that are already claimed.
pub fn plan_from_claims(
    claims: Vec<Claim>,
    mode: Reliability,
    loop_spec: &LoopSpec,
    spec: &FtSpec,
) -> Result<ReplicationPlan, FtError> {
    let t = loop_spec.taps_len();
    let mut warnings = Vec::new();
    let mut recovery = spec.recovery;
    if let Some(p) = recovery.as_mut() {
        // partial sums live across T iterations
        if p.rewind_target == RewindTarget::PreviousIteration && t > 1 {
            let msg = format!(
                "rewind to the previous iteration is unsafe with {t} taps; using buffer start"
            );
            warn!("{msg}");
            warnings.push(msg);
            p.rewind_target = RewindTarget::BufferStart;
        }
    }
    let chains: Vec<Vec<Coord>> = claims.iter().map(|c| c.pes.clone()).collect();
    let primary = primary_replica(mode);
    let plan = ReplicationPlan {
        mode,
        voter_pes: spec
            .voter_pes
            .clone()
            .unwrap_or_else(|| default_voters(spec.scheme, &chains, primary)),
        replica_claims: claims,
        scheme: spec.scheme,
        vote_every: spec.vote_every,
        voted_vars: spec.vars(),
        recovery,
        warnings,
    };
    validate_plan(&plan)?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteVar {
    Partial(usize),
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOp {
    pub iteration: usize,
    pub var: VoteVar,
}

/// Replicated loop with its inserted voting operations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatedProgram {
    pub loop_spec: LoopSpec,
    pub plan: ReplicationPlan,
    /// Voting operations in execution order.
    pub votes: Vec<VoteOp>,
    /// Added cycles per vote.
    pub vote_cost: u64,
    /// Voted intermediates are written back into every replica.
    pub resync: bool,
    /// DMR compares instead of voting.
    pub compare_only: bool,
    pub voter_fu_count: usize,
}

impl ReplicatedProgram {
    pub fn is_vote_iteration(&self, i: usize) -> bool {
        (i + 1).is_multiple_of(self.plan.vote_every)
    }
}

pub fn replicate_loop(
    loop_spec: &LoopSpec,
    plan: &ReplicationPlan,
    costs: &VotingCosts,
    hop: u64,
) -> Result<ReplicatedProgram, FtError> {
    loop_spec.validate()?;
    validate_plan(plan)?;
    costs.validate()?;
    if plan.replica_claims[0].pes.len() != loop_spec.taps_len() {
        return Err(FtError::InvalidPlan(
            "chain length differs from the tap count".into(),
        ));
    }
    let t = loop_spec.taps_len();
    let mut votes = Vec::new();
    for i in (0..loop_spec.len()).filter(|i| (i + 1) % plan.vote_every == 0) {
        if plan.voted_vars == VotedVars::OutputsAndPartials {
            votes.extend((0..t).map(|p| VoteOp {
                iteration: i,
                var: VoteVar::Partial(p),
            }));
        }
        votes.push(VoteOp {
            iteration: i,
            var: VoteVar::Output,
        });
    }
    Ok(ReplicatedProgram {
        loop_spec: loop_spec.clone(),
        plan: plan.clone(),
        votes,
        vote_cost: plan.scheme.vote_cost(costs, plan.replicas(), hop),
        resync: plan.scheme != VotingScheme::OutputHw,
        compare_only: plan.mode == Reliability::Dmr,
        voter_fu_count: if plan.scheme.is_hardware() {
            plan.voter_pes.len()
        } else {
            0
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub unprotected_cycles: u64,
    pub protected_cycles: u64,
    pub timing_overhead_fraction: f64,
    pub voter_fu_count: usize,
    /// PEs claimed by all replicas together.
    pub claimed_pes: usize,
    /// PEs claimed beyond the unreplicated run.
    pub extra_pes: usize,
    pub votes: usize,
}

/// Fault-free cost of the program.
pub fn overhead_report(program: &ReplicatedProgram) -> OverheadReport {
    let t = program.loop_spec.taps_len() as u64;
    let unprotected = t - 1 + program.loop_spec.len() as u64;
    let protected = unprotected + program.votes.len() as u64 * program.vote_cost;
    let claimed: usize = program
        .plan
        .replica_claims
        .iter()
        .map(|c| c.pes.len())
        .sum();
    OverheadReport {
        unprotected_cycles: unprotected,
        protected_cycles: protected,
        timing_overhead_fraction: (protected - unprotected) as f64 / unprotected as f64,
        voter_fu_count: program.voter_fu_count,
        claimed_pes: claimed,
        extra_pes: claimed - program.loop_spec.taps_len(),
        votes: program.votes.len(),
    }
}
