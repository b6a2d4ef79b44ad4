//! Hierarchical power gating of iCtrls and processing units.
//!
//! Two sets of power domains cover the array: one for invasion controllers
//! and one for processing units. An invade signal reaching an idle PE wakes
//! its iCtrl domain (the wave stalls until the domain is on), a claim
//! confirmation wakes the PE domain, and a retreat confirmation switches both
//! off once no member of the domain still needs power.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::array::{ArrayState, ClaimKey, ConfigError, Coord, Cycle, PowerState};
use crate::protocol::{EventKind, IctrlGate, ProtocolEvent};

/// Grouping granularity of a power domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawDomainSize", into = "RawDomainSize")]
pub enum DomainSize {
    #[default]
    Single,
    /// 2x2 block of neighboring PEs.
    Quad,
    Row,
    Array,
    Block {
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawDomainSize {
    Count(u64),
    Name(String),
}

impl TryFrom<RawDomainSize> for DomainSize {
    type Error = String;

    fn try_from(raw: RawDomainSize) -> Result<Self, String> {
        match raw {
            RawDomainSize::Count(n) => DomainSize::parse(&n.to_string()),
            RawDomainSize::Name(s) => DomainSize::parse(&s),
        }
    }
}

impl From<DomainSize> for RawDomainSize {
    fn from(d: DomainSize) -> Self {
        match d {
            DomainSize::Single => RawDomainSize::Count(1),
            DomainSize::Quad => RawDomainSize::Count(4),
            other => RawDomainSize::Name(other.to_string()),
        }
    }
}

impl DomainSize {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "1" => Ok(DomainSize::Single),
            "4" | "quad" => Ok(DomainSize::Quad),
            "row" => Ok(DomainSize::Row),
            "array" => Ok(DomainSize::Array),
            _ => {
                let parsed = s
                    .split_once('x')
                    .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
                match parsed {
                    Some((rows, cols)) if rows > 0 && cols > 0 => {
                        Ok(DomainSize::Block { rows, cols })
                    }
                    _ => Err(format!(
                        "invalid domain size '{s}' (expected 1, 4, row, array or RxC)"
                    )),
                }
            }
        }
    }

    /// Domain extent (rows, cols) on a `rows x cols` array.
    pub fn extent(&self, rows: usize, cols: usize) -> (usize, usize) {
        match *self {
            DomainSize::Single => (1, 1),
            DomainSize::Quad => (2, 2),
            DomainSize::Row => (1, cols),
            DomainSize::Array => (rows, cols),
            DomainSize::Block { rows, cols } => (rows, cols),
        }
    }

    pub fn check_tiles(&self, rows: usize, cols: usize, field: &str) -> Result<(), ConfigError> {
        let (dr, dc) = self.extent(rows, cols);
        if !rows.is_multiple_of(dr) || !cols.is_multiple_of(dc) {
            return Err(ConfigError::new(field, "domain size does not tile array"));
        }
        Ok(())
    }
}

impl fmt::Display for DomainSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainSize::Single => f.write_str("1"),
            DomainSize::Quad => f.write_str("4"),
            DomainSize::Row => f.write_str("row"),
            DomainSize::Array => f.write_str("array"),
            DomainSize::Block { rows, cols } => write!(f, "{rows}x{cols}"),
        }
    }
}

fn d_pe_on() -> f64 {
    10.0
}
fn d_ictrl_on() -> f64 {
    1.0
}
fn d_e_switch() -> f64 {
    50.0
}
fn d_switch() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    #[serde(default = "d_pe_on")]
    pub p_pe_on: f64,
    #[serde(default)]
    pub p_pe_off: f64,
    #[serde(default = "d_ictrl_on")]
    pub p_ictrl_on: f64,
    #[serde(default)]
    pub p_ictrl_off: f64,
    #[serde(default = "d_e_switch")]
    pub e_switch: f64,
    #[serde(default = "d_switch")]
    pub d_switch: u32,
    #[serde(default)]
    pub ictrl_domain_size: DomainSize,
    #[serde(default)]
    pub pe_domain_size: DomainSize,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            p_pe_on: 10.0,
            p_pe_off: 0.0,
            p_ictrl_on: 1.0,
            p_ictrl_off: 0.0,
            e_switch: 50.0,
            d_switch: 10,
            ictrl_domain_size: DomainSize::Single,
            pe_domain_size: DomainSize::Single,
        }
    }
}

impl PowerModel {
    /// No switching energy and no switching delay.
    pub fn free_switching(mut self) -> Self {
        self.e_switch = 0.0;
        self.d_switch = 0;
        self
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), ConfigError> {
        let rates = [
            ("power.p_pe_on", self.p_pe_on),
            ("power.p_pe_off", self.p_pe_off),
            ("power.p_ictrl_on", self.p_ictrl_on),
            ("power.p_ictrl_off", self.p_ictrl_off),
            ("power.e_switch", self.e_switch),
        ];
        for (field, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::new(field, "must be a finite value >= 0"));
            }
        }
        self.ictrl_domain_size
            .check_tiles(rows, cols, "power.ictrl_domain_size")?;
        self.pe_domain_size
            .check_tiles(rows, cols, "power.pe_domain_size")
    }

    /// Every PE and iCtrl on for `span` cycles.
    pub fn baseline(&self, pes: usize, span: Cycle) -> f64 {
        pes as f64 * (self.p_pe_on + self.p_ictrl_on) * span as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    ICtrl,
    Pe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerDomain {
    pub id: usize,
    pub kind: DomainKind,
    pub members: Vec<Coord>,
    pub state: PowerState,
    pub toggle_count: u64,
    wake_pending: Option<ClaimKey>,
    release_pending: Option<ClaimKey>,
}

/// One domain state change, for the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerTransition {
    pub cycle: Cycle,
    pub kind: DomainKind,
    pub domain: usize,
    pub to: PowerState,
}

fn state_label(s: PowerState) -> &'static str {
    match s {
        PowerState::Off => "off",
        PowerState::SwitchingOn(_) => "switching_on",
        PowerState::On => "on",
        PowerState::SwitchingOff(_) => "switching_off",
    }
}

impl fmt::Display for PowerTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DomainKind::ICtrl => "ictrl",
            DomainKind::Pe => "pe",
        };
        write!(
            f,
            "{:08} POWER {}#{} {}",
            self.cycle,
            kind,
            self.domain,
            state_label(self.to)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub pe_on: f64,
    pub pe_off: f64,
    pub ictrl_on: f64,
    pub ictrl_off: f64,
    pub switching: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.pe_on + self.pe_off + self.ictrl_on + self.ictrl_off + self.switching
    }
}

/// Toggles caused by one application, with the member counts of the toggled
/// domains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppToggles {
    pub ictrl_on: u64,
    pub ictrl_off: u64,
    pub pe_on: u64,
    pub pe_off: u64,
    /// Sum of member counts over iCtrl domains this app switched on.
    pub ictrl_on_members: u64,
    pub pe_on_members: u64,
    /// Sum of member counts over every toggle (both directions).
    pub ictrl_toggle_members: u64,
    pub pe_toggle_members: u64,
}

impl AppToggles {
    pub fn total(&self) -> u64 {
        self.ictrl_on + self.ictrl_off + self.pe_on + self.pe_off
    }
}

pub struct PowerManager {
    model: PowerModel,
    cols: usize,
    ictrl: Vec<PowerDomain>,
    pe: Vec<PowerDomain>,
    ictrl_of: Vec<usize>,
    pe_of: Vec<usize>,
    energy: EnergyBreakdown,
    cycles: Cycle,
    by_app: BTreeMap<u32, AppToggles>,
    transitions: Vec<PowerTransition>,
}

fn build_domains(
    kind: DomainKind,
    size: DomainSize,
    rows: usize,
    cols: usize,
) -> (Vec<PowerDomain>, Vec<usize>) {
    let (dr, dc) = size.extent(rows, cols);
    let per_row = cols / dc;
    let mut of = vec![0; rows * cols];
    let mut domains: Vec<PowerDomain> = (0..(rows / dr) * per_row)
        .map(|id| PowerDomain {
            id,
            kind,
            members: Vec::with_capacity(dr * dc),
            state: PowerState::Off,
            toggle_count: 0,
            wake_pending: None,
            release_pending: None,
        })
        .collect();
    for r in 0..rows {
        for c in 0..cols {
            let id = (r / dr) * per_row + c / dc;
            of[r * cols + c] = id;
            domains[id].members.push(Coord::new(r, c));
        }
    }
    (domains, of)
}

impl PowerManager {
    pub fn new(model: PowerModel, state: &ArrayState) -> Result<Self, ConfigError> {
        let (rows, cols) = (state.rows(), state.cols());
        model.validate(rows, cols)?;
        let (ictrl, ictrl_of) =
            build_domains(DomainKind::ICtrl, model.ictrl_domain_size, rows, cols);
        let (pe, pe_of) = build_domains(DomainKind::Pe, model.pe_domain_size, rows, cols);
        Ok(PowerManager {
            model,
            cols,
            ictrl,
            pe,
            ictrl_of,
            pe_of,
            energy: EnergyBreakdown::default(),
            cycles: 0,
            by_app: BTreeMap::new(),
            transitions: Vec::new(),
        })
    }

    pub fn model(&self) -> &PowerModel {
        &self.model
    }

    pub fn domains(&self, kind: DomainKind) -> &[PowerDomain] {
        match kind {
            DomainKind::ICtrl => &self.ictrl,
            DomainKind::Pe => &self.pe,
        }
    }

    pub fn domain_of(&self, kind: DomainKind, c: Coord) -> usize {
        match kind {
            DomainKind::ICtrl => self.ictrl_of[c.row * self.cols + c.col],
            DomainKind::Pe => self.pe_of[c.row * self.cols + c.col],
        }
    }

    pub fn toggles(&self, kind: DomainKind) -> u64 {
        self.domains(kind).iter().map(|d| d.toggle_count).sum()
    }

    pub fn total_toggles(&self) -> u64 {
        self.toggles(DomainKind::ICtrl) + self.toggles(DomainKind::Pe)
    }

    pub fn app_toggles(&self) -> &BTreeMap<u32, AppToggles> {
        &self.by_app
    }

    pub fn energy(&self) -> EnergyBreakdown {
        self.energy
    }

    pub fn cycles(&self) -> Cycle {
        self.cycles
    }

    pub fn drain_transitions(&mut self) -> Vec<PowerTransition> {
        std::mem::take(&mut self.transitions)
    }

    /// No domain is switching.
    pub fn is_stable(&self) -> bool {
        self.ictrl
            .iter()
            .chain(&self.pe)
            .all(|d| matches!(d.state, PowerState::On | PowerState::Off))
    }

    /// Powers up both domains of every PE in `pes`, e.g. for a claim made
    /// outside the gated protocol.
    pub fn wake(&mut self, pes: &[Coord], cause: ClaimKey, cycle: Cycle) {
        for c in pes {
            for kind in [DomainKind::ICtrl, DomainKind::Pe] {
                let id = self.domain_of(kind, *c);
                self.request_on(kind, id, cause, cycle);
            }
        }
    }

    /// Number of PEs whose processing unit is fully on.
    pub fn pes_on(&self) -> usize {
        self.pe
            .iter()
            .filter(|d| d.state.is_on())
            .map(|d| d.members.len())
            .sum()
    }

    fn dom_mut(&mut self, kind: DomainKind, id: usize) -> &mut PowerDomain {
        match kind {
            DomainKind::ICtrl => &mut self.ictrl[id],
            DomainKind::Pe => &mut self.pe[id],
        }
    }

    fn needed(&self, state: &ArrayState, kind: DomainKind, id: usize) -> bool {
        let d = &self.domains(kind)[id];
        d.members.iter().any(|c| {
            let pe = state.pe(*c);
            match kind {
                DomainKind::ICtrl => pe.ictrl.phase.key().is_some(),
                DomainKind::Pe => pe.owner.is_some(),
            }
        })
    }

    fn toggle(
        &mut self,
        kind: DomainKind,
        id: usize,
        to: PowerState,
        cause: ClaimKey,
        cycle: Cycle,
    ) {
        let e_switch = self.model.e_switch;
        let dom = self.dom_mut(kind, id);
        dom.state = to;
        dom.toggle_count += 1;
        let members = dom.members.len() as u64;
        self.energy.switching += e_switch;
        let on = matches!(to, PowerState::SwitchingOn(_) | PowerState::On);
        let t = self.by_app.entry(cause.app).or_default();
        match (kind, on) {
            (DomainKind::ICtrl, true) => {
                t.ictrl_on += 1;
                t.ictrl_on_members += members;
            }
            (DomainKind::ICtrl, false) => t.ictrl_off += 1,
            (DomainKind::Pe, true) => {
                t.pe_on += 1;
                t.pe_on_members += members;
            }
            (DomainKind::Pe, false) => t.pe_off += 1,
        }
        match kind {
            DomainKind::ICtrl => t.ictrl_toggle_members += members,
            DomainKind::Pe => t.pe_toggle_members += members,
        }
        self.transitions.push(PowerTransition {
            cycle,
            kind,
            domain: id,
            to,
        });
    }

    fn start_on(&mut self, kind: DomainKind, id: usize, cause: ClaimKey, cycle: Cycle) {
        let to = match self.model.d_switch {
            0 => PowerState::On,
            d => PowerState::SwitchingOn(d),
        };
        self.toggle(kind, id, to, cause, cycle);
    }

    fn start_off(&mut self, kind: DomainKind, id: usize, cause: ClaimKey, cycle: Cycle) {
        let to = match self.model.d_switch {
            0 => PowerState::Off,
            d => PowerState::SwitchingOff(d),
        };
        self.toggle(kind, id, to, cause, cycle);
    }

    /// Wake request; returns true when the domain is already on.
    fn request_on(&mut self, kind: DomainKind, id: usize, cause: ClaimKey, cycle: Cycle) -> bool {
        let dom = self.dom_mut(kind, id);
        dom.release_pending = None;
        match dom.state {
            PowerState::On => return true,
            PowerState::SwitchingOn(_) => {}
            PowerState::SwitchingOff(_) => dom.wake_pending = Some(cause),
            PowerState::Off => self.start_on(kind, id, cause, cycle),
        }
        self.domains(kind)[id].state.is_on()
    }

    fn request_off(
        &mut self,
        state: &ArrayState,
        kind: DomainKind,
        id: usize,
        cause: ClaimKey,
        cycle: Cycle,
    ) {
        if self.needed(state, kind, id) {
            return;
        }
        let dom = self.dom_mut(kind, id);
        match dom.state {
            PowerState::On => self.start_off(kind, id, cause, cycle),
            PowerState::SwitchingOn(_) => dom.release_pending = Some(cause),
            PowerState::SwitchingOff(_) | PowerState::Off => dom.wake_pending = None,
        }
    }

    /// Power reaction to the protocol signals delivered this cycle.
    pub fn on_protocol_events(&mut self, state: &ArrayState, events: &[ProtocolEvent]) {
        for e in events {
            match (e.kind, e.from) {
                (EventKind::ClaimConfirm, Some(c)) if e.count > 0 => {
                    let id = self.domain_of(DomainKind::Pe, c);
                    self.request_on(DomainKind::Pe, id, e.app, e.cycle);
                }
                (EventKind::RetreatConfirm, Some(c)) => {
                    for kind in [DomainKind::ICtrl, DomainKind::Pe] {
                        let id = self.domain_of(kind, c);
                        self.request_off(state, kind, id, e.app, e.cycle);
                    }
                }
                _ => {}
            }
        }
    }

    /// Switches off every on domain with no member needing power, e.g. after
    /// claims were dropped outside the retreat wave.
    pub fn reconcile_all(&mut self, state: &ArrayState, cause: ClaimKey, cycle: Cycle) {
        for kind in [DomainKind::ICtrl, DomainKind::Pe] {
            for id in 0..self.domains(kind).len() {
                self.request_off(state, kind, id, cause, cycle);
            }
        }
    }

    /// Advances switching domains by one cycle and finishes pending
    /// requests of domains that reached a stable state.
    pub fn tick(&mut self, state: &ArrayState, cycle: Cycle) {
        for kind in [DomainKind::ICtrl, DomainKind::Pe] {
            for id in 0..self.domains(kind).len() {
                let dom = self.dom_mut(kind, id);
                match dom.state {
                    PowerState::SwitchingOn(r) if r > 1 => {
                        dom.state = PowerState::SwitchingOn(r - 1)
                    }
                    PowerState::SwitchingOff(r) if r > 1 => {
                        dom.state = PowerState::SwitchingOff(r - 1)
                    }
                    PowerState::SwitchingOn(_) => {
                        dom.state = PowerState::On;
                        let release = dom.release_pending.take();
                        self.transitions.push(PowerTransition {
                            cycle,
                            kind,
                            domain: id,
                            to: PowerState::On,
                        });
                        if let Some(cause) = release {
                            self.request_off(state, kind, id, cause, cycle);
                        }
                    }
                    PowerState::SwitchingOff(_) => {
                        dom.state = PowerState::Off;
                        let wake = dom.wake_pending.take();
                        self.transitions.push(PowerTransition {
                            cycle,
                            kind,
                            domain: id,
                            to: PowerState::Off,
                        });
                        if let Some(cause) = wake {
                            self.start_on(kind, id, cause, cycle);
                        }
                    }
                    PowerState::On | PowerState::Off => {}
                }
            }
        }
    }

    /// Copies domain states into the per-PE power fields.
    pub fn mirror(&self, state: &mut ArrayState) {
        for d in &self.ictrl {
            for c in &d.members {
                state.pe_mut(*c).ictrl_power = d.state;
            }
        }
        for d in &self.pe {
            for c in &d.members {
                state.pe_mut(*c).pe_power = d.state;
            }
        }
    }

    /// The power phase of one simulated cycle.
    pub fn cycle(&mut self, state: &mut ArrayState, events: &[ProtocolEvent], cycle: Cycle) {
        self.on_protocol_events(state, events);
        self.tick(state, cycle);
        self.mirror(state);
    }

    /// Charges `span` cycles at the current domain states.
    pub fn accumulate(&mut self, span: Cycle) -> f64 {
        let m = &self.model;
        let mut delta = EnergyBreakdown::default();
        for d in &self.pe {
            let n = d.members.len() as f64 * span as f64;
            if d.state.draws_power() {
                delta.pe_on += n * m.p_pe_on;
            } else {
                delta.pe_off += n * m.p_pe_off;
            }
        }
        for d in &self.ictrl {
            let n = d.members.len() as f64 * span as f64;
            if d.state.draws_power() {
                delta.ictrl_on += n * m.p_ictrl_on;
            } else {
                delta.ictrl_off += n * m.p_ictrl_off;
            }
        }
        self.energy.pe_on += delta.pe_on;
        self.energy.pe_off += delta.pe_off;
        self.energy.ictrl_on += delta.ictrl_on;
        self.energy.ictrl_off += delta.ictrl_off;
        self.cycles += span;
        delta.total()
    }
}

impl IctrlGate for PowerManager {
    fn ictrl_ready(&mut self, at: Coord, key: ClaimKey, cycle: Cycle) -> bool {
        let id = self.domain_of(DomainKind::ICtrl, at);
        self.request_on(DomainKind::ICtrl, id, key, cycle)
    }
}

/// Per-application inputs of the closed-form energy model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AppEnergySummary {
    pub app: u32,
    pub granted: u64,
    /// Cycles from claim confirmation to retreat confirmation.
    pub busy: Cycle,
    pub toggles: AppToggles,
}

/// Closed-form energy: busy claimed PEs, idle members kept on by grouped
/// domains, switching energy and switching intervals, plus leakage of
/// everything else.
pub fn analytic_estimate(
    apps: &[AppEnergySummary],
    model: &PowerModel,
    pes: usize,
    span: Cycle,
) -> f64 {
    let mut e = 0.0;
    let mut pe_on_cycles = 0.0;
    let mut ictrl_on_cycles = 0.0;
    let d = model.d_switch as f64;
    for a in apps {
        let busy = a.busy as f64;
        let granted = a.granted as f64;
        let t = &a.toggles;
        let idle_ictrl = (t.ictrl_on_members as f64 - granted).max(0.0);
        let idle_pe = (t.pe_on_members as f64 - granted).max(0.0);
        e += granted * busy * (model.p_pe_on + model.p_ictrl_on);
        e += idle_ictrl * busy * model.p_ictrl_on + idle_pe * busy * model.p_pe_on;
        e += t.total() as f64 * model.e_switch;
        e += d
            * (t.ictrl_toggle_members as f64 * model.p_ictrl_on
                + t.pe_toggle_members as f64 * model.p_pe_on);
        pe_on_cycles += (granted + idle_pe) * busy + d * t.pe_toggle_members as f64;
        ictrl_on_cycles += (granted + idle_ictrl) * busy + d * t.ictrl_toggle_members as f64;
    }
    let all = pes as f64 * span as f64;
    e + model.p_pe_off * (all - pe_on_cycles).max(0.0)
        + model.p_ictrl_off * (all - ictrl_on_cycles).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_total: f64,
    pub e_baseline: f64,
    pub savings_fraction: f64,
    pub e_by_component: EnergyBreakdown,
    pub stall_cycles: Cycle,
    pub analytic_estimate: f64,
    pub estimate_error: f64,
    pub ictrl_toggles: u64,
    pub pe_toggles: u64,
    pub span: Cycle,
}

impl EnergyReport {
    /// `savings_fraction` is 0 for an empty span; `estimate_error` is 0 when
    /// both figures are 0 and 1 when only the simulated one is.
    pub fn new(breakdown: EnergyBreakdown, baseline: f64, analytic: f64) -> Self {
        let e_total = breakdown.total();
        let savings_fraction = if baseline > 0.0 {
            1.0 - e_total / baseline
        } else {
            0.0
        };
        let estimate_error = if e_total > 0.0 {
            (analytic - e_total).abs() / e_total
        } else if analytic == 0.0 {
            0.0
        } else {
            1.0
        };
        EnergyReport {
            e_total,
            e_baseline: baseline,
            savings_fraction,
            e_by_component: breakdown,
            stall_cycles: 0,
            analytic_estimate: analytic,
            estimate_error,
            ictrl_toggles: 0,
            pe_toggles: 0,
            span: 0,
        }
    }
}

/// Assembles the report of a finished run.
pub fn report(
    pm: &PowerManager,
    pes: usize,
    apps: &[AppEnergySummary],
    stall_cycles: Cycle,
) -> EnergyReport {
    let span = pm.cycles();
    let analytic = analytic_estimate(apps, pm.model(), pes, span);
    EnergyReport {
        stall_cycles,
        ictrl_toggles: pm.toggles(DomainKind::ICtrl),
        pe_toggles: pm.toggles(DomainKind::Pe),
        span,
        ..EnergyReport::new(pm.energy(), pm.model().baseline(pes, span), analytic)
    }
}

#[cfg(test)]
mod tests;
