use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{ArrayConfig, ConfigError, Cycle};
use crate::ft::{FaultEvent, FtSpec, LoopSpec, VotingCosts, Word};
use crate::power::PowerModel;
use crate::protocol::{InvasionStrategy, ProtocolParams, Reliability};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(#[from] ConfigError),
}

impl ScenarioError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Parse(_) => None,
            ScenarioError::Invalid(e) => Some(e.field()),
        }
    }
}

fn d_max_cycles() -> Cycle {
    10_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub rng_seed: u64,
    /// Safety stop for runs that never reach quiescence.
    #[serde(default = "d_max_cycles")]
    pub max_cycles: Cycle,
    pub array: ArrayConfig,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub power: PowerModel,
    #[serde(default)]
    pub voting: VotingCosts,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Linear,
    Rectangular,
}

/// Loop kernel of a replicated application. The input is either listed or
/// generated from the scenario seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSource {
    pub taps: Vec<Word>,
    #[serde(default)]
    pub input: Option<Vec<Word>>,
    #[serde(default)]
    pub input_len: Option<usize>,
    #[serde(default)]
    pub frame_size: usize,
    #[serde(default)]
    pub buffer_size: usize,
}

impl LoopSource {
    pub fn resolve(&self, rng_seed: u64, app: u32) -> LoopSpec {
        let input = match (&self.input, self.input_len) {
            (Some(x), _) => x.clone(),
            (None, n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ (u64::from(app) << 32));
                (0..n.unwrap_or(0)).map(|_| rng.random()).collect()
            }
        };
        LoopSpec::new(self.taps.clone(), input).with_buffers(self.buffer_size, self.frame_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvadeAction {
    pub at: Cycle,
    pub app: u32,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub reliability: Reliability,
    /// Program loaded during infect; defaults to the application id.
    #[serde(default)]
    pub program: Option<u32>,
    #[serde(default, rename = "loop")]
    pub loop_source: Option<LoopSource>,
    #[serde(default)]
    pub ft: Option<FtSpec>,
}

impl InvadeAction {
    pub fn invasion(&self) -> InvasionStrategy {
        match self.strategy {
            StrategyKind::Linear => InvasionStrategy::Linear {
                count: self.count.unwrap_or(0),
            },
            StrategyKind::Rectangular => InvasionStrategy::Rectangular {
                width: self.width.unwrap_or(0),
                height: self.height.unwrap_or(0),
            },
        }
    }

    pub fn ft_spec(&self) -> FtSpec {
        self.ft
            .clone()
            .unwrap_or(FtSpec::new(crate::ft::VotingScheme::IntermediateHw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    Invade(InvadeAction),
    Retreat {
        at: Cycle,
        app: u32,
    },
    InjectFaults {
        at: Cycle,
        app: u32,
        faults: Vec<FaultEvent>,
    },
    End {
        at: Cycle,
    },
}

impl ScenarioEvent {
    pub fn at(&self) -> Cycle {
        match self {
            ScenarioEvent::Invade(a) => a.at,
            ScenarioEvent::Retreat { at, .. }
            | ScenarioEvent::InjectFaults { at, .. }
            | ScenarioEvent::End { at } => *at,
        }
    }
}

/// Parses a TOML scenario without semantic checks.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// Parses and fully validates a scenario.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut s = parse_scenario(text)?;
    s.array = s.array.resolved();
    s.validate()?;
    Ok(s)
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.array.validate()?;
        self.power.validate(self.array.rows, self.array.cols)?;
        self.voting
            .validate()
            .map_err(|e| ConfigError::new("voting", e.to_string()))?;
        let mut apps = BTreeSet::new();
        let mut last = 0;
        for (i, ev) in self.events.iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            if ev.at() < last {
                return Err(ConfigError::new(
                    field("at"),
                    "events must be sorted by cycle",
                ));
            }
            last = ev.at();
            match ev {
                ScenarioEvent::Invade(a) => {
                    if !apps.insert(a.app) {
                        return Err(ConfigError::new(
                            field("app"),
                            format!("application {} invades twice", a.app),
                        ));
                    }
                    match a.strategy {
                        StrategyKind::Linear if a.count.unwrap_or(0) == 0 => {
                            return Err(ConfigError::new(
                                field("count"),
                                "linear invasions need count >= 1",
                            ));
                        }
                        StrategyKind::Rectangular
                            if a.width.unwrap_or(0) == 0 || a.height.unwrap_or(0) == 0 =>
                        {
                            return Err(ConfigError::new(
                                field("width"),
                                "rectangular invasions need width and height >= 1",
                            ));
                        }
                        _ => {}
                    }
                    if a.reliability != Reliability::None {
                        let Some(src) = &a.loop_source else {
                            return Err(ConfigError::new(
                                field("loop"),
                                "dmr/tmr invasions need a loop kernel",
                            ));
                        };
                        if src.input.is_none() && src.input_len.is_none() {
                            return Err(ConfigError::new(
                                field("loop.input"),
                                "give input or input_len",
                            ));
                        }
                        let spec = src.resolve(self.rng_seed, a.app);
                        spec.validate()
                            .map_err(|e| ConfigError::new(field("loop"), e.to_string()))?;
                        if a.strategy != StrategyKind::Linear
                            || a.count != Some(spec.taps_len() as u32)
                        {
                            return Err(ConfigError::new(
                                field("count"),
                                "replicated loops claim linear chains of one PE per tap",
                            ));
                        }
                        let ft = a.ft_spec();
                        if ft.vote_every == 0 {
                            return Err(ConfigError::new(field("ft.vote_every"), "must be >= 1"));
                        }
                        if let Some(p) = ft.recovery {
                            if p.migrate_threshold == 0 {
                                return Err(ConfigError::new(
                                    field("ft.recovery.migrate_threshold"),
                                    "must be >= 1",
                                ));
                            }
                        }
                    } else if a.ft.is_some() || a.loop_source.is_some() {
                        return Err(ConfigError::new(
                            field("reliability"),
                            "loop/ft need dmr or tmr",
                        ));
                    }
                }
                ScenarioEvent::Retreat { app, .. } | ScenarioEvent::InjectFaults { app, .. } => {
                    if !apps.contains(app) {
                        return Err(ConfigError::new(
                            field("app"),
                            format!("application {app} has not invaded"),
                        ));
                    }
                }
                ScenarioEvent::End { .. } if i + 1 != self.events.len() => {
                    return Err(ConfigError::new(
                        field("action"),
                        "end must be the last event",
                    ));
                }
                ScenarioEvent::End { .. } => {}
            }
        }
        Ok(())
    }
}
