//! Processor-array topology and per-PE state.
//!
//! The array is a homogeneous `rows x cols` grid of processing elements with
//! 4-neighbor adjacency. Each PE carries the state of its invasion controller
//! (iCtrl), the power state of both the iCtrl and the processing unit, and the
//! claim that currently owns it. No protocol logic lives here; the invasion
//! engine and the power manager mutate this state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Cycle = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> &str {
        match self {
            ConfigError::Invalid { field, .. } => field,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    /// Fixed neighbor order used everywhere wave propagation iterates.
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::E => Direction::W,
            Direction::S => Direction::N,
            Direction::W => Direction::E,
        }
    }

    pub fn clockwise(self) -> Direction {
        match self {
            Direction::N => Direction::E,
            Direction::E => Direction::S,
            Direction::S => Direction::W,
            Direction::W => Direction::N,
        }
    }

    fn bit(self) -> u8 {
        match self {
            Direction::N => 1,
            Direction::E => 2,
            Direction::S => 4,
            Direction::W => 8,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::N => "N",
            Direction::E => "E",
            Direction::S => "S",
            Direction::W => "W",
        };
        f.write_str(s)
    }
}

/// Small set of directions, iterated in N, E, S, W order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DirSet(u8);

impl DirSet {
    pub fn insert(&mut self, d: Direction) {
        self.0 |= d.bit();
    }

    pub fn remove(&mut self, d: Direction) {
        self.0 &= !d.bit();
    }

    pub fn contains(&self, d: Direction) -> bool {
        self.0 & d.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Direction> + '_ {
        Direction::ALL.into_iter().filter(|d| self.contains(*d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ICtrlKind {
    #[default]
    Fsm,
    Programmable,
}

/// Identifies one claim on the array. Plain applications use replica 0;
/// replicated (DMR/TMR) applications own one claim per replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClaimKey {
    pub app: u32,
    pub replica: u8,
}

impl ClaimKey {
    pub const fn app(app: u32) -> Self {
        ClaimKey { app, replica: 0 }
    }
}

impl fmt::Display for ClaimKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.app, self.replica)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    Idle,
    Invading(ClaimKey),
    Claimed(ClaimKey),
    Retreating(ClaimKey),
}

impl Phase {
    pub fn key(&self) -> Option<ClaimKey> {
        match *self {
            Phase::Idle => None,
            Phase::Invading(k) | Phase::Claimed(k) | Phase::Retreating(k) => Some(k),
        }
    }
}

/// Role of a PE inside an in-flight invasion, used by the iCtrl to decide
/// where to forward and how to aggregate confirmations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveRole {
    Linear {
        remaining: u32,
        heading: Direction,
    },
    RectRow {
        remaining_w: u32,
        height: u32,
        row_dir: Direction,
        col_dir: Direction,
    },
    RectCol {
        remaining_h: u32,
        col_dir: Direction,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ICtrlState {
    pub phase: Phase,
    /// Direction toward the PE that invaded this one (unset for the seed).
    pub parent_dir: Option<Direction>,
    /// Neighbors this PE forwarded the invasion to and that accepted it
    /// (or whose answer is still outstanding).
    pub child_dirs: DirSet,
    pub pending_confirms: u32,
    pub role: Option<WaveRole>,
    /// Linear waves: neighbors already tried and found unavailable.
    pub tried: DirSet,
    /// PEs granted by the sub-tree below this one (confirmation aggregate).
    pub granted_below: u32,
    /// Rectangular waves: some target in this sub-tree was unavailable.
    pub failed: bool,
}

impl ICtrlState {
    pub fn reset(&mut self) {
        *self = ICtrlState::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerState {
    #[default]
    Off,
    SwitchingOn(u32),
    On,
    SwitchingOff(u32),
}

impl PowerState {
    pub fn is_on(&self) -> bool {
        matches!(self, PowerState::On)
    }

    /// Consumes on-power (switching is charged conservatively at the on rate).
    pub fn draws_power(&self) -> bool {
        !matches!(self, PowerState::Off)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorElement {
    pub coord: Coord,
    pub ictrl: ICtrlState,
    pub pe_power: PowerState,
    pub ictrl_power: PowerState,
    pub owner: Option<ClaimKey>,
    pub program: Option<u32>,
    pub quarantined: bool,
}

impl ProcessorElement {
    fn new(coord: Coord) -> Self {
        ProcessorElement {
            coord,
            ictrl: ICtrlState::default(),
            pe_power: PowerState::Off,
            ictrl_power: PowerState::Off,
            owner: None,
            program: None,
            quarantined: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    #[default]
    Fifo,
    Ram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoBufferBank {
    pub edge: Direction,
    pub index: usize,
    pub mode: BufferMode,
    pub size: usize,
    pub concat_group: Option<u32>,
}

fn default_hop_fsm() -> u64 {
    1
}
fn default_hop_prog() -> u64 {
    4
}
fn default_control_channels() -> u32 {
    1
}
fn default_data_channels() -> u32 {
    2
}
fn default_buffer_banks() -> usize {
    2
}
fn default_bank_words() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub ictrl_kind: ICtrlKind,
    #[serde(default = "default_hop_fsm")]
    pub hop_latency_fsm: u64,
    #[serde(default = "default_hop_prog")]
    pub hop_latency_prog: u64,
    /// Border PEs wired to the control processor. Empty means "the four
    /// corners" and is expanded by [`ArrayConfig::resolved`].
    #[serde(default)]
    pub seed_candidates: Vec<Coord>,
    #[serde(default = "default_control_channels")]
    pub control_channels: u32,
    /// Recorded only; no word-level data routing is simulated.
    #[serde(default = "default_data_channels")]
    pub data_channels: u32,
    #[serde(default = "default_buffer_banks")]
    pub buffer_banks: usize,
    #[serde(default = "default_bank_words")]
    pub bank_words: usize,
}

impl ArrayConfig {
    /// Configuration with default parameters and the four corners as seeds.
    pub fn new(rows: usize, cols: usize) -> Self {
        ArrayConfig {
            rows,
            cols,
            ictrl_kind: ICtrlKind::Fsm,
            hop_latency_fsm: 1,
            hop_latency_prog: 4,
            seed_candidates: Vec::new(),
            control_channels: 1,
            data_channels: 2,
            buffer_banks: 2,
            bank_words: 1024,
        }
        .resolved()
    }

    pub fn with_kind(mut self, kind: ICtrlKind) -> Self {
        self.ictrl_kind = kind;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<Coord>) -> Self {
        self.seed_candidates = seeds;
        self
    }

    /// Fills in the default seed candidates (distinct corners) when none are given.
    pub fn resolved(mut self) -> Self {
        if self.seed_candidates.is_empty() && self.rows > 0 && self.cols > 0 {
            let r = self.rows - 1;
            let c = self.cols - 1;
            let corners = BTreeSet::from([
                Coord::new(0, 0),
                Coord::new(0, c),
                Coord::new(r, 0),
                Coord::new(r, c),
            ]);
            self.seed_candidates = corners.into_iter().collect();
        }
        self
    }

    pub fn hop_latency(&self) -> u64 {
        match self.ictrl_kind {
            ICtrlKind::Fsm => self.hop_latency_fsm,
            ICtrlKind::Programmable => self.hop_latency_prog,
        }
    }

    pub fn pe_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn on_border(&self, c: Coord) -> bool {
        self.in_bounds(c)
            && (c.row == 0 || c.col == 0 || c.row + 1 == self.rows || c.col + 1 == self.cols)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rows == 0 {
            return Err(ConfigError::new("array.rows", "must be at least 1"));
        }
        if self.cols == 0 {
            return Err(ConfigError::new("array.cols", "must be at least 1"));
        }
        if self.hop_latency_fsm == 0 {
            return Err(ConfigError::new(
                "array.hop_latency_fsm",
                "must be at least 1 cycle",
            ));
        }
        if self.hop_latency_prog == 0 {
            return Err(ConfigError::new(
                "array.hop_latency_prog",
                "must be at least 1 cycle",
            ));
        }
        if self.seed_candidates.is_empty() {
            return Err(ConfigError::new(
                "array.seed_candidates",
                "must not be empty",
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.seed_candidates.iter().enumerate() {
            let field = format!("array.seed_candidates[{i}]");
            if !self.in_bounds(*s) {
                return Err(ConfigError::new(
                    field,
                    format!("({s}) is outside the array"),
                ));
            }
            if !self.on_border(*s) {
                return Err(ConfigError::new(
                    field,
                    format!("({s}) is not on the array border"),
                ));
            }
            if !seen.insert(*s) {
                return Err(ConfigError::new(field, format!("({s}) is listed twice")));
            }
        }
        Ok(())
    }
}

/// The whole grid plus its peripheral buffer banks.
#[derive(Debug, Clone)]
pub struct ArrayState {
    config: ArrayConfig,
    pes: Vec<ProcessorElement>,
    pub buffers: Vec<IoBufferBank>,
}

impl ArrayState {
    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.rows
    }

    pub fn cols(&self) -> usize {
        self.config.cols
    }

    pub fn hop_latency(&self) -> u64 {
        self.config.hop_latency()
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        self.config.in_bounds(c)
    }

    fn index(&self, c: Coord) -> usize {
        assert!(self.in_bounds(c), "coordinate ({c}) out of bounds");
        c.row * self.config.cols + c.col
    }

    pub fn pe(&self, c: Coord) -> &ProcessorElement {
        &self.pes[self.index(c)]
    }

    pub fn pe_mut(&mut self, c: Coord) -> &mut ProcessorElement {
        let i = self.index(c);
        &mut self.pes[i]
    }

    pub fn pes(&self) -> impl Iterator<Item = &ProcessorElement> {
        self.pes.iter()
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        let cols = self.config.cols;
        (0..self.config.rows).flat_map(move |r| (0..cols).map(move |c| Coord::new(r, c)))
    }

    pub fn step_dir(&self, c: Coord, d: Direction) -> Option<Coord> {
        let n = match d {
            Direction::N => Coord::new(c.row.checked_sub(1)?, c.col),
            Direction::E => Coord::new(c.row, c.col + 1),
            Direction::S => Coord::new(c.row + 1, c.col),
            Direction::W => Coord::new(c.row, c.col.checked_sub(1)?),
        };
        self.in_bounds(n).then_some(n)
    }

    /// In-bounds 4-neighborhood in N, E, S, W order.
    pub fn neighbors(&self, c: Coord) -> Vec<(Direction, Coord)> {
        Direction::ALL
            .into_iter()
            .filter_map(|d| self.step_dir(c, d).map(|n| (d, n)))
            .collect()
    }

    pub fn available(&self, c: Coord) -> bool {
        let pe = self.pe(c);
        pe.ictrl.phase == Phase::Idle && !pe.quarantined
    }

    pub fn owned_by(&self, key: ClaimKey) -> Vec<Coord> {
        self.pes
            .iter()
            .filter(|p| p.owner == Some(key))
            .map(|p| p.coord)
            .collect()
    }

    pub fn quarantine(&mut self, c: Coord) {
        self.pe_mut(c).quarantined = true;
    }

    /// Checks the per-PE bookkeeping and ownership invariants.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        for pe in &self.pes {
            let c = pe.coord;
            let ic = &pe.ictrl;
            if ic.phase == Phase::Idle
                && (ic.parent_dir.is_some()
                    || !ic.child_dirs.is_empty()
                    || ic.pending_confirms != 0)
            {
                out.push(format!("({c}) idle iCtrl carries wave bookkeeping"));
            }
            if ic.pending_confirms as usize > ic.child_dirs.len() {
                out.push(format!("({c}) pending confirms exceed children"));
            }
            match (pe.owner, ic.phase) {
                (Some(o), Phase::Claimed(k)) | (Some(o), Phase::Retreating(k)) if o == k => {}
                (None, Phase::Claimed(k)) => {
                    out.push(format!("({c}) claimed by {k} without owner"))
                }
                (None, _) => {}
                (Some(o), p) => out.push(format!("({c}) owned by {o} in phase {p:?}")),
            }
        }
        out
    }

    /// Power-state implications, meaningful only when a power manager drives
    /// the PE power fields. `strict_pe_power` enables the "processing unit
    /// powered only when owned" rule, which holds only for single-PE domains.
    pub fn check_power_invariants(&self, strict_pe_power: bool) -> Vec<String> {
        let mut out = Vec::new();
        for pe in &self.pes {
            let c = pe.coord;
            if strict_pe_power && pe.pe_power.is_on() && pe.owner.is_none() {
                out.push(format!("({c}) processing unit on without owner"));
            }
            if pe.ictrl_power == PowerState::Off && pe.ictrl.phase != Phase::Idle {
                out.push(format!(
                    "({c}) iCtrl unpowered but in phase {:?}",
                    pe.ictrl.phase
                ));
            }
        }
        out
    }
}

pub fn build_array(config: ArrayConfig) -> Result<ArrayState, ConfigError> {
    let config = config.resolved();
    config.validate()?;
    let pes = (0..config.rows)
        .flat_map(|r| (0..config.cols).map(move |c| ProcessorElement::new(Coord::new(r, c))))
        .collect();
    let mut buffers = Vec::new();
    for edge in Direction::ALL {
        for index in 0..config.buffer_banks {
            buffers.push(IoBufferBank {
                edge,
                index,
                mode: BufferMode::Fifo,
                size: config.bank_words,
                concat_group: None,
            });
        }
    }
    Ok(ArrayState {
        config,
        pes,
        buffers,
    })
}

/// Concatenates adjacent banks on one edge into a larger memory.
pub fn concat_banks(
    state: &mut ArrayState,
    edge: Direction,
    first: usize,
    count: usize,
    group: u32,
) -> Result<usize, ConfigError> {
    if count == 0 || first + count > state.config.buffer_banks {
        return Err(ConfigError::new(
            "buffers",
            format!(
                "banks {first}..{} do not exist on edge {edge}",
                first + count
            ),
        ));
    }
    let mut total = 0;
    for b in state.buffers.iter_mut() {
        if b.edge == edge && b.index >= first && b.index < first + count {
            if b.concat_group.is_some_and(|g| g != group) {
                return Err(ConfigError::new(
                    "buffers",
                    format!("bank {} already grouped", b.index),
                ));
            }
            b.concat_group = Some(group);
            total += b.size;
        }
    }
    Ok(total)
}
