use serde::{Deserialize, Serialize};

use super::Word;
use crate::protocol::Reliability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteOutcome {
    Match(Word),
    Corrected { value: Word, faulty: usize },
    Mismatch,
}

impl VoteOutcome {
    pub fn value(&self) -> Option<Word> {
        match *self {
            VoteOutcome::Match(v) | VoteOutcome::Corrected { value: v, .. } => Some(v),
            VoteOutcome::Mismatch => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VoteOutcome::Match(_) => "match",
            VoteOutcome::Corrected { .. } => "corrected",
            VoteOutcome::Mismatch => "mismatch",
        }
    }
}

/// Majority vote (TMR) or comparison (DMR).
///
/// # Panics
/// When the number of values does not match the mode.
pub fn vote(values: &[Word], mode: Reliability) -> VoteOutcome {
    assert!(
        mode != Reliability::None && values.len() == mode.replicas(),
        "vote over {} values in mode {mode:?}",
        values.len()
    );
    match *values {
        [a, b] if a == b => VoteOutcome::Match(a),
        [_, _] => VoteOutcome::Mismatch,
        [a, b, c] if a == b && b == c => VoteOutcome::Match(a),
        [a, b, _] if a == b => VoteOutcome::Corrected {
            value: a,
            faulty: 2,
        },
        [a, _, c] if a == c => VoteOutcome::Corrected {
            value: a,
            faulty: 1,
        },
        [_, b, c] if b == c => VoteOutcome::Corrected {
            value: b,
            faulty: 0,
        },
        _ => VoteOutcome::Mismatch,
    }
}
