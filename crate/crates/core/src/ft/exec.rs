use std::fmt;

use serde::{Deserialize, Serialize};

use super::plan::{Migrator, ReplicatedProgram, VoteVar};
use super::{
    vote, FaultEvent, FaultTarget, FtError, FtStats, LoopSpec, RewindTarget, VoteOutcome, Word,
    WORD_BITS,
};
use crate::array::Coord;
use crate::protocol::Claim;

/// Direct FIR evaluation used as ground truth.
pub fn fir_golden(spec: &LoopSpec) -> Vec<Word> {
    (0..spec.len())
        .map(|i| {
            spec.taps
                .iter()
                .enumerate()
                .filter(|(j, _)| *j <= i)
                .fold(0u16, |acc, (j, a)| {
                    acc.wrapping_add(a.wrapping_mul(spec.input[i - j]))
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtAction {
    Vote {
        iteration: usize,
        var: VoteVar,
        outcome: VoteOutcome,
    },
    Rewind {
        iteration: usize,
        to: usize,
        target: RewindTarget,
    },
    Halt {
        iteration: usize,
    },
    Migrate {
        iteration: usize,
        implicated: Vec<usize>,
    },
    Abort {
        iteration: usize,
    },
}

impl fmt::Display for FtAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FtAction::Vote {
                iteration,
                var,
                outcome,
            } => {
                let var = match var {
                    VoteVar::Partial(p) => format!("s{p}"),
                    VoteVar::Output => "y".to_string(),
                };
                write!(f, "VOTE it={iteration} var={var} {}", outcome.label())?;
                match outcome {
                    VoteOutcome::Corrected { faulty, .. } => write!(f, " replica={faulty}"),
                    _ => Ok(()),
                }
            }
            FtAction::Rewind {
                iteration,
                to,
                target,
            } => {
                write!(f, "REWIND it={iteration} to={to} target={target:?}")
            }
            FtAction::Halt { iteration } => write!(f, "HALT it={iteration}"),
            FtAction::Migrate {
                iteration,
                implicated,
            } => {
                write!(f, "MIGRATE it={iteration} replicas={implicated:?}")
            }
            FtAction::Abort { iteration } => write!(f, "ABORT it={iteration}"),
        }
    }
}

/// An FT action at a cycle offset from the start of the loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtRecord {
    pub offset: u64,
    pub action: FtAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtOutcome {
    /// `None` for outputs never produced (halt or abort).
    pub outputs: Vec<Option<Word>>,
    pub valid: bool,
    pub stats: FtStats,
    pub records: Vec<FtRecord>,
    /// Claims holding the replicas at the end (changed by migration).
    pub claims: Vec<Claim>,
    pub cycles: u64,
}

impl FtOutcome {
    pub fn matches(&self, golden: &[Word]) -> bool {
        self.valid
            && self.outputs.len() == golden.len()
            && self.outputs.iter().zip(golden).all(|(o, g)| *o == Some(*g))
    }
}

fn check_faults(program: &ReplicatedProgram, faults: &[FaultEvent]) -> Result<(), FtError> {
    let t = program.loop_spec.taps_len();
    for (index, f) in faults.iter().enumerate() {
        let reason = if f.iteration >= program.loop_spec.len() {
            "iteration out of range"
        } else if f.replica >= program.plan.replicas() {
            "replica out of range"
        } else if f.pe_offset >= t {
            "pe_offset out of range"
        } else if f.target == FaultTarget::Output && f.pe_offset != t - 1 {
            "output faults sit on the last PE of the chain"
        } else if f.bit >= WORD_BITS {
            "bit out of range"
        } else {
            continue;
        };
        return Err(FtError::InvalidFault {
            index,
            reason: reason.to_string(),
        });
    }
    Ok(())
}

/// Replicas whose value is not the majority one; all when none exists.
fn implicated(values: &[Word]) -> Vec<usize> {
    let majority = values
        .iter()
        .find(|v| values.iter().filter(|w| w == v).count() * 2 > values.len());
    (0..values.len())
        .filter(|r| majority != Some(&values[*r]))
        .collect()
}

struct Run<'a> {
    program: &'a ReplicatedProgram,
    faults: &'a [FaultEvent],
    bound: Vec<Coord>,
    fired: Vec<bool>,
    chains: Vec<Vec<Coord>>,
    claims: Vec<Claim>,
    stats: FtStats,
    records: Vec<FtRecord>,
    clock: u64,
}

enum Flow {
    Continue,
    Restart(usize),
    Stop,
}

impl Run<'_> {
    fn inject(&mut self, i: usize, target: FaultTarget, p: usize, values: &mut [Word]) {
        for (k, f) in self.faults.iter().enumerate() {
            if f.iteration != i || f.target != target || f.pe_offset != p {
                continue;
            }
            if self.fired[k] && !f.recurring {
                continue;
            }
            // a fault belongs to the PE it was planned on
            if self.chains[f.replica][p] != self.bound[k] {
                continue;
            }
            self.fired[k] = true;
            self.stats.injected += 1;
            values[f.replica] ^= 1 << f.bit;
        }
    }

    fn rewind_start(&self, i: usize) -> usize {
        let spec = &self.program.loop_spec;
        match self.program.plan.recovery.map(|p| p.rewind_target) {
            Some(RewindTarget::PreviousIteration) => i.saturating_sub(1),
            Some(RewindTarget::FrameStart) => i / spec.frame() * spec.frame(),
            _ => i / spec.buffer() * spec.buffer(),
        }
    }

    fn record(&mut self, action: FtAction) {
        self.records.push(FtRecord {
            offset: self.clock,
            action,
        });
    }
}

/// Runs the replicated FIR with fault injection, voting and recovery.
pub fn execute_with_faults(
    program: &ReplicatedProgram,
    faults: &[FaultEvent],
    migrator: &mut dyn Migrator,
) -> Result<FtOutcome, FtError> {
    check_faults(program, faults)?;
    let spec = &program.loop_spec;
    let (n, t) = (spec.len(), spec.taps_len());
    let replicas = program.plan.replicas();
    let primary = program.plan.primary();
    let mode = program.plan.mode;
    let partial_votes = program.plan.voted_vars == super::VotedVars::OutputsAndPartials;
    let chains = program.plan.chains();
    let mut run = Run {
        program,
        faults,
        bound: faults
            .iter()
            .map(|f| chains[f.replica][f.pe_offset])
            .collect(),
        fired: vec![false; faults.len()],
        chains,
        claims: program.plan.replica_claims.clone(),
        stats: FtStats {
            voter_fu_count: program.voter_fu_count,
            unprotected_cycles: (t - 1 + n) as u64,
            ..FtStats::default()
        },
        records: Vec::new(),
        clock: (t - 1) as u64,
    };
    let mut outputs: Vec<Option<Word>> = vec![None; n];
    let mut valid = true;
    let mut last_point: Option<(usize, VoteVar)> = None;
    let mut streak = 0u32;
    let mut executed = 0usize;
    // guards against a policy that can never make progress
    let budget = n * 64 + 64;

    let mut i = 0;
    'iter: while i < n {
        executed += 1;
        if executed > budget {
            run.stats.aborted = true;
            valid = false;
            run.record(FtAction::Abort { iteration: i });
            break;
        }
        run.clock += 1;
        let voting = program.is_vote_iteration(i);
        let mut s = vec![0 as Word; replicas];
        let mut points: Vec<(VoteVar, bool)> = Vec::with_capacity(t + 1);
        for p in 0..t {
            points.push((VoteVar::Partial(p), voting && partial_votes));
        }
        points.push((VoteVar::Output, voting));

        for (var, voted) in points {
            match var {
                VoteVar::Partial(p) => {
                    let term = if p <= i {
                        spec.taps[p].wrapping_mul(spec.input[i - p])
                    } else {
                        0
                    };
                    for v in s.iter_mut() {
                        *v = v.wrapping_add(term);
                    }
                    run.inject(i, super::FaultTarget::PartialSum, p, &mut s);
                }
                VoteVar::Output => run.inject(i, super::FaultTarget::Output, t - 1, &mut s),
            }
            if !voted {
                if var == VoteVar::Output {
                    outputs[i] = Some(s[primary]);
                }
                continue;
            }
            let outcome = vote(&s, mode);
            run.clock += program.vote_cost;
            run.stats.votes += 1;
            run.record(FtAction::Vote {
                iteration: i,
                var,
                outcome,
            });
            if !matches!(outcome, VoteOutcome::Match(_)) {
                run.stats.detected += 1;
            }
            let flow = match outcome {
                VoteOutcome::Match(v) | VoteOutcome::Corrected { value: v, .. } => {
                    if let VoteOutcome::Corrected { .. } = outcome {
                        run.stats.corrected += 1;
                    }
                    if var == VoteVar::Output {
                        outputs[i] = Some(v);
                    } else if program.resync {
                        s.iter_mut().for_each(|x| *x = v);
                    }
                    Flow::Continue
                }
                VoteOutcome::Mismatch => {
                    let point = (i, var);
                    streak = if last_point == Some(point) {
                        streak + 1
                    } else {
                        1
                    };
                    last_point = Some(point);
                    match program.plan.recovery {
                        None => {
                            run.stats.halts += 1;
                            run.record(FtAction::Halt { iteration: i });
                            Flow::Stop
                        }
                        Some(policy) if streak >= policy.migrate_threshold => {
                            let bad = implicated(&s);
                            run.record(FtAction::Migrate {
                                iteration: i,
                                implicated: bad.clone(),
                            });
                            match migrator.migrate(&run.claims, &bad, t as u32) {
                                Some(claims) => {
                                    run.stats.migrations += 1;
                                    run.clock +=
                                        claims.iter().map(Claim::total_latency).max().unwrap_or(0)
                                            + (t - 1) as u64;
                                    run.chains = claims.iter().map(|c| c.pes.clone()).collect();
                                    run.claims = claims;
                                    streak = 0;
                                    last_point = None;
                                    Flow::Restart(run.rewind_start(i))
                                }
                                None => {
                                    run.claims.clear();
                                    run.stats.aborted = true;
                                    run.record(FtAction::Abort { iteration: i });
                                    valid = false;
                                    Flow::Stop
                                }
                            }
                        }
                        Some(policy) => {
                            let to = run.rewind_start(i);
                            run.stats.rewinds.bump(policy.rewind_target);
                            run.clock += (t - 1) as u64;
                            run.record(FtAction::Rewind {
                                iteration: i,
                                to,
                                target: policy.rewind_target,
                            });
                            Flow::Restart(to)
                        }
                    }
                }
            };
            match flow {
                Flow::Continue => {}
                Flow::Restart(to) => {
                    i = to;
                    continue 'iter;
                }
                Flow::Stop => {
                    outputs[i..].iter_mut().for_each(|o| *o = None);
                    break 'iter;
                }
            }
        }
        i += 1;
    }

    if outputs.iter().any(Option::is_none) {
        valid = false;
    }
    let golden = fir_golden(spec);
    run.stats.silent = outputs
        .iter()
        .zip(&golden)
        .filter(|(o, g)| matches!(o, Some(v) if v != *g))
        .count() as u64;
    run.stats.protected_cycles = run.clock;
    run.stats.timing_overhead_fraction = (run.clock as f64 - run.stats.unprotected_cycles as f64)
        / run.stats.unprotected_cycles as f64;
    Ok(FtOutcome {
        outputs,
        valid,
        cycles: run.clock,
        stats: run.stats,
        records: run.records,
        claims: run.claims,
    })
}
