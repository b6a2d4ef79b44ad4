//! Exhaustive fault-injection campaigns over a replicated loop.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exec::{execute_with_faults, fir_golden};
use super::plan::{
    overhead_report, plan_replication, replicate_loop, NoMigration, ReplicatedProgram,
};
use super::{FaultEvent, FtError, FtSpec, LoopSpec, VotingCosts, WORD_BITS};
use crate::array::{build_array, ArrayConfig, Coord};
use crate::protocol::{InvadeRequest, ProtocolParams, Reliability};

/// Replicated program on a fresh array with one row per replica.
pub fn campaign_program(
    spec: &LoopSpec,
    mode: Reliability,
    ft: &FtSpec,
    costs: &VotingCosts,
) -> Result<ReplicatedProgram, FtError> {
    let rows = mode.replicas();
    let cols = spec.taps_len();
    let config =
        ArrayConfig::new(rows, cols).with_seeds((0..rows).map(|r| Coord::new(r, 0)).collect());
    let mut state = build_array(config).map_err(|e| FtError::InvalidPlan(e.to_string()))?;
    let params = ProtocolParams::default();
    let request = InvadeRequest {
        reliability: mode,
        ..InvadeRequest::linear(1, cols as u32)
    };
    let plan = plan_replication(&mut state, &request, spec, ft, &params)?;
    replicate_loop(spec, &plan, costs, state.hop_latency())
}

/// Every single-bit fault: all iterations, replicas, chain positions (the
/// partial sum of each PE and the output register of the last) and bits.
pub fn fault_space(spec: &LoopSpec, replicas: usize) -> Vec<FaultEvent> {
    let t = spec.taps_len();
    let mut out = Vec::new();
    for iteration in 0..spec.len() {
        for replica in 0..replicas {
            for p in 0..=t {
                for bit in 0..WORD_BITS {
                    out.push(if p < t {
                        FaultEvent::partial(iteration, replica, p, bit)
                    } else {
                        FaultEvent::output(iteration, replica, t, bit)
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    /// Outputs equal the reference and at least one vote repaired a value.
    Corrected,
    /// A disagreement was caught; no wrong output was committed.
    Detected,
    /// A wrong output was committed.
    Silent,
    /// Outputs equal the reference without any vote noticing.
    Masked,
}

pub fn classify(
    program: &ReplicatedProgram,
    faults: &[FaultEvent],
    golden: &[u16],
) -> Result<FaultClass, FtError> {
    let out = execute_with_faults(program, faults, &mut NoMigration)?;
    Ok(if out.stats.silent > 0 {
        FaultClass::Silent
    } else if out.matches(golden) && out.stats.detected == 0 {
        FaultClass::Masked
    } else if out.matches(golden) && out.stats.corrected > 0 && out.stats.rewinds.total() == 0 {
        FaultClass::Corrected
    } else {
        FaultClass::Detected
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub scheme: String,
    pub mode: String,
    pub runs: u64,
    pub corrected: u64,
    pub detected: u64,
    pub silent: u64,
    pub masked: u64,
    pub timing_overhead_fraction: f64,
}

impl CampaignSummary {
    pub fn correction_rate(&self) -> f64 {
        rate(self.corrected, self.runs)
    }

    /// Faults caught by a vote, corrected or not.
    pub fn detection_rate(&self) -> f64 {
        rate(self.corrected + self.detected, self.runs)
    }

    pub fn silent_rate(&self) -> f64 {
        rate(self.silent, self.runs)
    }
}

fn rate(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Runs every single fault of [`fault_space`] once.
pub fn single_fault_sweep(program: &ReplicatedProgram) -> Result<CampaignSummary, FtError> {
    let golden = fir_golden(&program.loop_spec);
    let space = fault_space(&program.loop_spec, program.plan.replicas());
    let classes: Vec<FaultClass> = space
        .par_iter()
        .map(|f| classify(program, std::slice::from_ref(f), &golden))
        .collect::<Result<_, _>>()?;
    let count = |c: FaultClass| classes.iter().filter(|x| **x == c).count() as u64;
    Ok(CampaignSummary {
        scheme: program.plan.scheme.label().to_string(),
        mode: format!("{:?}", program.plan.mode).to_lowercase(),
        runs: classes.len() as u64,
        corrected: count(FaultClass::Corrected),
        detected: count(FaultClass::Detected),
        silent: count(FaultClass::Silent),
        masked: count(FaultClass::Masked),
        timing_overhead_fraction: overhead_report(program).timing_overhead_fraction,
    })
}

/// Index pairs `(i, j)`, `i < j`, into [`fault_space`] whose combined
/// injection commits a wrong output.
pub fn silent_pairs(program: &ReplicatedProgram) -> Result<BTreeSet<(usize, usize)>, FtError> {
    let golden = fir_golden(&program.loop_spec);
    let space = fault_space(&program.loop_spec, program.plan.replicas());
    let n = space.len();
    let found: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = Vec::new();
            for j in i + 1..n {
                let pair = [space[i], space[j]];
                if classify(program, &pair, &golden)? == FaultClass::Silent {
                    v.push((i, j));
                }
            }
            Ok(v)
        })
        .collect::<Result<_, FtError>>()?;
    Ok(found.into_iter().flatten().collect())
}

/// Silent pair sets of two schemes over the same loop and fault space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageDiff {
    pub pairs: u64,
    pub silent_a: u64,
    pub silent_b: u64,
    /// Silent under `b` but not under `a`.
    pub only_b: u64,
    /// Silent under `a` but not under `b`.
    pub only_a: u64,
}

impl CoverageDiff {
    /// The silent set of `b` is a strict subset of that of `a`.
    pub fn b_strictly_better(&self) -> bool {
        self.only_b == 0 && self.only_a > 0
    }
}

pub fn coverage_diff(
    a: &ReplicatedProgram,
    b: &ReplicatedProgram,
) -> Result<CoverageDiff, FtError> {
    let sa = silent_pairs(a)?;
    let sb = silent_pairs(b)?;
    let n = fault_space(&a.loop_spec, a.plan.replicas()).len() as u64;
    Ok(CoverageDiff {
        pairs: n * n.saturating_sub(1) / 2,
        silent_a: sa.len() as u64,
        silent_b: sb.len() as u64,
        only_b: sb.difference(&sa).count() as u64,
        only_a: sa.difference(&sb).count() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ft::VotingScheme;

    fn small() -> LoopSpec {
        LoopSpec::new(vec![3, 5], vec![7, 1000, 65535])
    }

    #[test]
    fn fault_space_size() {
        let spec = small();
        // 3 iterations x 3 replicas x (2 partials + output) x 16 bits
        assert_eq!(fault_space(&spec, 3).len(), 3 * 3 * 3 * 16);
    }

    #[test]
    fn tmr_intermediate_hw_corrects_every_single_fault() {
        let p = campaign_program(
            &small(),
            Reliability::Tmr,
            &FtSpec::new(VotingScheme::IntermediateHw),
            &VotingCosts::default(),
        )
        .unwrap();
        let s = single_fault_sweep(&p).unwrap();
        assert_eq!(s.corrected, s.runs);
        assert_eq!(s.correction_rate(), 1.0);
    }

    #[test]
    fn dmr_detects_every_single_fault() {
        let p = campaign_program(
            &small(),
            Reliability::Dmr,
            &FtSpec::new(VotingScheme::IntermediateHw),
            &VotingCosts::default(),
        )
        .unwrap();
        let s = single_fault_sweep(&p).unwrap();
        assert_eq!((s.detected, s.silent, s.corrected), (s.runs, 0, 0));
    }

    #[test]
    fn output_voting_leaves_a_coverage_gap() {
        let spec = LoopSpec::new(vec![3, 5], vec![7, 1000]);
        let prog = |scheme| {
            campaign_program(
                &spec,
                Reliability::Tmr,
                &FtSpec::new(scheme),
                &VotingCosts::default(),
            )
            .unwrap()
        };
        let d = coverage_diff(
            &prog(VotingScheme::OutputHw),
            &prog(VotingScheme::IntermediateHw),
        )
        .unwrap();
        assert!(d.b_strictly_better(), "{d:?}");
        assert_eq!(d.pairs, 288 * 287 / 2);
    }

    #[test]
    fn classes_of_simple_cases() {
        let p = campaign_program(
            &small(),
            Reliability::Tmr,
            &FtSpec::new(VotingScheme::OutputHw),
            &VotingCosts::default(),
        )
        .unwrap();
        let golden = fir_golden(&p.loop_spec);
        assert_eq!(classify(&p, &[], &golden).unwrap(), FaultClass::Masked);
        let same = [
            FaultEvent::partial(1, 0, 0, 3),
            FaultEvent::partial(1, 2, 0, 3),
        ];
        assert_eq!(classify(&p, &same, &golden).unwrap(), FaultClass::Silent);
        let one = [FaultEvent::output(0, 0, 2, 15)];
        assert_eq!(classify(&p, &one, &golden).unwrap(), FaultClass::Corrected);
    }
}
