use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::seed::{linear_preference, rect_directions, select_seed_excluding, SEED_HEADING};
use super::{
    check_live, Claim, EventKind, InvadeRequest, InvasionStrategy, ProtocolError, ProtocolEvent,
    ProtocolParams,
};
use crate::array::{ArrayState, ClaimKey, Coord, Cycle, Direction, Phase, WaveRole};

/// Power interlock between the protocol and the iCtrl power domains.
pub trait IctrlGate {
    /// True when the iCtrl at `at` is powered and can process a signal this
    /// cycle. Answering false must also start powering it up.
    fn ictrl_ready(&mut self, at: Coord, key: ClaimKey, cycle: Cycle) -> bool;
}

/// Gate for arrays without power gating.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysOn;

impl IctrlGate for AlwaysOn {
    fn ictrl_ready(&mut self, _at: Coord, _key: ClaimKey, _cycle: Cycle) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Claimed(Claim),
    Retreated {
        key: ClaimKey,
        latency: Cycle,
        completed_at: Cycle,
    },
    /// A failed rectangle finished releasing its partially invaded PEs.
    RolledBack {
        key: ClaimKey,
        completed_at: Cycle,
    },
}

#[derive(Debug, Clone, Copy)]
enum Signal {
    Invade {
        from: Option<Coord>,
        to: Coord,
        role: WaveRole,
    },
    Confirm {
        from: Coord,
        to: Coord,
        granted: u32,
        accepted: bool,
    },
    Retreat {
        from: Option<Coord>,
        to: Coord,
    },
    RetreatAck {
        from: Coord,
        to: Coord,
    },
}

#[derive(Debug, Clone, Copy)]
struct Message {
    arrive: Cycle,
    key: ClaimKey,
    seq: u64,
    signal: Signal,
}

impl Message {
    fn order(&self) -> (Cycle, ClaimKey, u64) {
        (self.arrive, self.key, self.seq)
    }
}

impl PartialEq for Message {
    fn eq(&self, other: &Self) -> bool {
        self.order() == other.order()
    }
}
impl Eq for Message {}
impl PartialOrd for Message {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Message {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order().cmp(&other.order())
    }
}

#[derive(Debug)]
struct Flight {
    request: InvadeRequest,
    seed: Coord,
    log: Vec<Coord>,
    last_invade: Cycle,
    stall: Cycle,
    last_stall: Option<Cycle>,
}

#[derive(Debug)]
struct RetreatFlight {
    start: Cycle,
    rollback: bool,
}

fn dir_between(from: Coord, to: Coord) -> Direction {
    if to.row < from.row {
        Direction::N
    } else if to.row > from.row {
        Direction::S
    } else if to.col > from.col {
        Direction::E
    } else {
        Direction::W
    }
}

/// Cycle-stepped engine carrying every in-flight wave on one array.
#[derive(Debug)]
pub struct Protocol {
    params: ProtocolParams,
    queue: BinaryHeap<Reverse<Message>>,
    flights: BTreeMap<ClaimKey, Flight>,
    retreats: BTreeMap<ClaimKey, RetreatFlight>,
    reserved_seeds: BTreeSet<Coord>,
    completions: Vec<Completion>,
    seq: u64,
}

struct Ctx<'a, G: IctrlGate + ?Sized> {
    state: &'a mut ArrayState,
    gate: &'a mut G,
    events: &'a mut Vec<ProtocolEvent>,
    cycle: Cycle,
    hop: Cycle,
}

impl Protocol {
    pub fn new(params: ProtocolParams) -> Self {
        Protocol {
            params,
            queue: BinaryHeap::new(),
            flights: BTreeMap::new(),
            retreats: BTreeMap::new(),
            reserved_seeds: BTreeSet::new(),
            completions: Vec::new(),
            seq: 0,
        }
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    /// Arrival cycle of the next queued signal.
    pub fn next_arrival(&self) -> Option<Cycle> {
        self.queue.peek().map(|m| m.0.arrive)
    }

    pub fn is_active(&self, key: ClaimKey) -> bool {
        self.flights.contains_key(&key) || self.retreats.contains_key(&key)
    }

    pub fn drain_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    fn push(&mut self, arrive: Cycle, key: ClaimKey, signal: Signal) {
        self.seq += 1;
        self.queue.push(Reverse(Message {
            arrive,
            key,
            seq: self.seq,
            signal,
        }));
    }

    /// Control-processor side of an invade request: picks the seed and
    /// schedules the first invade signal after the selection overhead.
    pub fn submit(
        &mut self,
        state: &ArrayState,
        request: InvadeRequest,
    ) -> Result<Coord, ProtocolError> {
        request.validate()?;
        let key = request.key();
        if self.is_active(key) {
            return Err(ProtocolError::DuplicateClaim { key });
        }
        let seed = select_seed_excluding(state, &request, &self.reserved_seeds)?;
        self.reserved_seeds.insert(seed);
        let role = match request.strategy {
            InvasionStrategy::Linear { count } => WaveRole::Linear {
                remaining: count,
                heading: SEED_HEADING,
            },
            InvasionStrategy::Rectangular { width, height } => {
                // a rectangle that cannot fit fails at the seed's first step
                let (row_dir, col_dir) = rect_directions(state, seed, width, height)
                    .unwrap_or((Direction::E, Direction::S));
                WaveRole::RectRow {
                    remaining_w: width,
                    height,
                    row_dir,
                    col_dir,
                }
            }
        };
        self.flights.insert(
            key,
            Flight {
                request,
                seed,
                log: Vec::new(),
                last_invade: request.issue_cycle,
                stall: 0,
                last_stall: None,
            },
        );
        self.push(
            request.issue_cycle + self.params.seed_select_cycles,
            key,
            Signal::Invade {
                from: None,
                to: seed,
                role,
            },
        );
        Ok(seed)
    }

    /// Starts the retreat wave of a granted claim at `cycle`.
    pub fn begin_retreat(
        &mut self,
        state: &ArrayState,
        claim: &Claim,
        cycle: Cycle,
    ) -> Result<(), ProtocolError> {
        check_live(state, claim)?;
        if self.retreats.contains_key(&claim.key)
            || state.pe(claim.seed).ictrl.phase != Phase::Claimed(claim.key)
        {
            return Err(ProtocolError::StaleClaim { key: claim.key });
        }
        self.retreats.insert(
            claim.key,
            RetreatFlight {
                start: cycle,
                rollback: false,
            },
        );
        self.push(
            cycle,
            claim.key,
            Signal::Retreat {
                from: None,
                to: claim.seed,
            },
        );
        Ok(())
    }

    pub fn step(&mut self, state: &mut ArrayState, cycle: Cycle) -> Vec<ProtocolEvent> {
        self.step_gated(state, cycle, &mut AlwaysOn)
    }

    /// Delivers every signal due at `cycle`, in (claim, send order) order so
    /// that the lower claim wins when two waves reach the same PE together.
    pub fn step_gated<G: IctrlGate + ?Sized>(
        &mut self,
        state: &mut ArrayState,
        cycle: Cycle,
        gate: &mut G,
    ) -> Vec<ProtocolEvent> {
        let mut events = Vec::new();
        let hop = state.hop_latency();
        let mut ctx = Ctx {
            state,
            gate,
            events: &mut events,
            cycle,
            hop,
        };
        while self.queue.peek().is_some_and(|m| m.0.arrive <= cycle) {
            let Reverse(msg) = self.queue.pop().expect("peeked");
            self.deliver(&mut ctx, msg);
        }
        events
    }

    pub fn run_until_quiescent<G: IctrlGate + ?Sized>(
        &mut self,
        state: &mut ArrayState,
        start: Cycle,
        gate: &mut G,
    ) -> (Vec<ProtocolEvent>, Cycle) {
        let mut events = Vec::new();
        let mut t = start;
        loop {
            events.extend(self.step_gated(state, t, gate));
            if self.is_quiescent() {
                return (events, t);
            }
            t += 1;
        }
    }

    fn deliver<G: IctrlGate + ?Sized>(&mut self, ctx: &mut Ctx<'_, G>, msg: Message) {
        let key = msg.key;
        match msg.signal {
            Signal::Invade { from, to, role } => {
                let free = ctx.state.available(to);
                if free && !ctx.gate.ictrl_ready(to, key, ctx.cycle) {
                    if let Some(f) = self.flights.get_mut(&key) {
                        if f.last_stall != Some(ctx.cycle) {
                            f.stall += 1;
                            f.last_stall = Some(ctx.cycle);
                        }
                    }
                    self.queue.push(Reverse(Message {
                        arrive: ctx.cycle + 1,
                        ..msg
                    }));
                    return;
                }
                if let Some(f) = self.flights.get_mut(&key) {
                    f.last_invade = ctx.cycle;
                }
                if from.is_none() {
                    self.reserved_seeds.remove(&to);
                    ctx.events.push(event(
                        ctx.cycle,
                        EventKind::SeedSelected,
                        None,
                        Some(to),
                        key,
                        0,
                    ));
                }
                ctx.events.push(event(
                    ctx.cycle,
                    EventKind::InvadeSignal,
                    from,
                    Some(to),
                    key,
                    0,
                ));
                if !free {
                    match from {
                        Some(f) => self.push(
                            ctx.cycle + ctx.hop,
                            key,
                            Signal::Confirm {
                                from: to,
                                to: f,
                                granted: 0,
                                accepted: false,
                            },
                        ),
                        None => self.report(key, 0, ctx.cycle),
                    }
                    return;
                }
                let ic = &mut ctx.state.pe_mut(to).ictrl;
                ic.reset();
                ic.phase = Phase::Invading(key);
                ic.parent_dir = from.map(|f| dir_between(to, f));
                ic.role = Some(role);
                if let Some(f) = self.flights.get_mut(&key) {
                    f.log.push(to);
                }
                self.advance(ctx, to, key);
            }
            Signal::Confirm {
                from,
                to,
                granted,
                accepted,
            } => {
                ctx.events.push(event(
                    ctx.cycle,
                    EventKind::ClaimConfirm,
                    Some(from),
                    Some(to),
                    key,
                    granted,
                ));
                if accepted && granted > 0 {
                    let child = ctx.state.pe_mut(from);
                    child.ictrl.phase = Phase::Claimed(key);
                    child.owner = Some(key);
                }
                let d = dir_between(to, from);
                let ic = &mut ctx.state.pe_mut(to).ictrl;
                ic.pending_confirms -= 1;
                if !accepted {
                    ic.child_dirs.remove(d);
                    match ic.role {
                        Some(WaveRole::Linear { .. }) => self.advance(ctx, to, key),
                        _ => {
                            ic.failed = true;
                            if ic.pending_confirms == 0 {
                                self.finish(ctx, to, key);
                            }
                        }
                    }
                } else {
                    ic.granted_below += granted;
                    if granted == 0 {
                        ic.failed = true;
                    }
                    if ic.pending_confirms == 0 {
                        self.finish(ctx, to, key);
                    }
                }
            }
            Signal::Retreat { from, to } => self.handle_retreat(ctx, from, to, key),
            Signal::RetreatAck { from, to } => {
                release(ctx.state, from);
                ctx.events.push(event(
                    ctx.cycle,
                    EventKind::RetreatConfirm,
                    Some(from),
                    Some(to),
                    key,
                    0,
                ));
                let ic = &mut ctx.state.pe_mut(to).ictrl;
                ic.pending_confirms -= 1;
                if ic.pending_confirms == 0 {
                    self.ack(ctx, to, key);
                }
            }
        }
    }

    /// Forwarding decision of the iCtrl at `c` after it joined the wave or
    /// after one of its forward attempts was rejected.
    fn advance<G: IctrlGate + ?Sized>(&mut self, ctx: &mut Ctx<'_, G>, c: Coord, key: ClaimKey) {
        let role = ctx.state.pe(c).ictrl.role.expect("invading PE has a role");
        let mut sends: Vec<(Direction, Coord, WaveRole)> = Vec::new();
        match role {
            WaveRole::Linear { remaining, heading } => {
                if remaining > 1 {
                    let tried = ctx.state.pe(c).ictrl.tried;
                    let next = linear_preference(heading)
                        .into_iter()
                        .filter(|d| !tried.contains(*d))
                        .find_map(|d| {
                            ctx.state
                                .step_dir(c, d)
                                .filter(|n| ctx.state.available(*n))
                                .map(|n| (d, n))
                        });
                    if let Some((d, n)) = next {
                        sends.push((
                            d,
                            n,
                            WaveRole::Linear {
                                remaining: remaining - 1,
                                heading: d,
                            },
                        ));
                    }
                }
            }
            WaveRole::RectRow {
                remaining_w,
                height,
                row_dir,
                col_dir,
            } => {
                if remaining_w > 1 {
                    sends.push((
                        row_dir,
                        c,
                        WaveRole::RectRow {
                            remaining_w: remaining_w - 1,
                            height,
                            row_dir,
                            col_dir,
                        },
                    ));
                }
                if height > 1 {
                    sends.push((
                        col_dir,
                        c,
                        WaveRole::RectCol {
                            remaining_h: height - 1,
                            col_dir,
                        },
                    ));
                }
            }
            WaveRole::RectCol {
                remaining_h,
                col_dir,
            } => {
                if remaining_h > 1 {
                    sends.push((
                        col_dir,
                        c,
                        WaveRole::RectCol {
                            remaining_h: remaining_h - 1,
                            col_dir,
                        },
                    ));
                }
            }
        }

        if !matches!(role, WaveRole::Linear { .. }) {
            // rectangles: every target must be present and free, else abort
            let mut resolved = Vec::with_capacity(sends.len());
            for (d, _, r) in &sends {
                match ctx
                    .state
                    .step_dir(c, *d)
                    .filter(|n| ctx.state.available(*n))
                {
                    Some(n) => resolved.push((*d, n, *r)),
                    None => {
                        ctx.state.pe_mut(c).ictrl.failed = true;
                        resolved.clear();
                        break;
                    }
                }
            }
            sends = resolved;
        }

        if sends.is_empty() {
            if ctx.state.pe(c).ictrl.pending_confirms == 0 {
                self.finish(ctx, c, key);
            }
            return;
        }
        for (d, n, r) in sends {
            let ic = &mut ctx.state.pe_mut(c).ictrl;
            ic.tried.insert(d);
            ic.child_dirs.insert(d);
            ic.pending_confirms += 1;
            self.push(
                ctx.cycle + ctx.hop,
                key,
                Signal::Invade {
                    from: Some(c),
                    to: n,
                    role: r,
                },
            );
        }
    }

    /// All answers are in: report the sub-tree result toward the seed.
    fn finish<G: IctrlGate + ?Sized>(&mut self, ctx: &mut Ctx<'_, G>, c: Coord, key: ClaimKey) {
        let ic = &ctx.state.pe(c).ictrl;
        let granted = if ic.failed { 0 } else { 1 + ic.granted_below };
        match ic.parent_dir {
            Some(pd) => {
                let parent = ctx.state.step_dir(c, pd).expect("parent in bounds");
                self.push(
                    ctx.cycle + ctx.hop,
                    key,
                    Signal::Confirm {
                        from: c,
                        to: parent,
                        granted,
                        accepted: true,
                    },
                );
            }
            None => {
                ctx.events.push(event(
                    ctx.cycle,
                    EventKind::ClaimConfirm,
                    Some(c),
                    None,
                    key,
                    granted,
                ));
                if granted > 0 {
                    let pe = ctx.state.pe_mut(c);
                    pe.ictrl.phase = Phase::Claimed(key);
                    pe.owner = Some(key);
                    self.report(key, granted, ctx.cycle);
                } else {
                    self.report(key, 0, ctx.cycle);
                    self.retreats.insert(
                        key,
                        RetreatFlight {
                            start: ctx.cycle,
                            rollback: true,
                        },
                    );
                    self.handle_retreat(ctx, None, c, key);
                }
            }
        }
    }

    fn report(&mut self, key: ClaimKey, granted: u32, cycle: Cycle) {
        let Some(f) = self.flights.remove(&key) else {
            return;
        };
        let pes = if granted > 0 { f.log } else { Vec::new() };
        debug_assert!(granted == 0 || pes.len() == granted as usize);
        self.completions.push(Completion::Claimed(Claim {
            key,
            strategy: f.request.strategy,
            seed: f.seed,
            pes,
            requested: f.request.strategy.requested(),
            granted,
            invade_latency: f.last_invade - f.request.issue_cycle,
            claim_latency: cycle - f.last_invade,
            stall_cycles: f.stall,
            issue_cycle: f.request.issue_cycle,
            completed_at: cycle,
        }));
    }

    fn handle_retreat<G: IctrlGate + ?Sized>(
        &mut self,
        ctx: &mut Ctx<'_, G>,
        from: Option<Coord>,
        c: Coord,
        key: ClaimKey,
    ) {
        ctx.events.push(event(
            ctx.cycle,
            EventKind::RetreatSignal,
            from,
            Some(c),
            key,
            0,
        ));
        let ic = &mut ctx.state.pe_mut(c).ictrl;
        ic.phase = Phase::Retreating(key);
        let children: Vec<Direction> = ic.child_dirs.iter().collect();
        ic.pending_confirms = children.len() as u32;
        if children.is_empty() {
            self.ack(ctx, c, key);
            return;
        }
        for d in children {
            let n = ctx.state.step_dir(c, d).expect("child in bounds");
            self.push(
                ctx.cycle + ctx.hop,
                key,
                Signal::Retreat {
                    from: Some(c),
                    to: n,
                },
            );
        }
    }

    fn ack<G: IctrlGate + ?Sized>(&mut self, ctx: &mut Ctx<'_, G>, c: Coord, key: ClaimKey) {
        match ctx.state.pe(c).ictrl.parent_dir {
            Some(pd) => {
                let parent = ctx.state.step_dir(c, pd).expect("parent in bounds");
                self.push(
                    ctx.cycle + ctx.hop,
                    key,
                    Signal::RetreatAck {
                        from: c,
                        to: parent,
                    },
                );
            }
            None => {
                release(ctx.state, c);
                ctx.events.push(event(
                    ctx.cycle,
                    EventKind::RetreatConfirm,
                    Some(c),
                    None,
                    key,
                    0,
                ));
                if let Some(r) = self.retreats.remove(&key) {
                    self.completions.push(if r.rollback {
                        Completion::RolledBack {
                            key,
                            completed_at: ctx.cycle,
                        }
                    } else {
                        Completion::Retreated {
                            key,
                            latency: ctx.cycle - r.start,
                            completed_at: ctx.cycle,
                        }
                    });
                }
            }
        }
    }
}

fn release(state: &mut ArrayState, c: Coord) {
    let pe = state.pe_mut(c);
    pe.ictrl.reset();
    pe.owner = None;
    pe.program = None;
}

fn event(
    cycle: Cycle,
    kind: EventKind,
    from: Option<Coord>,
    to: Option<Coord>,
    app: ClaimKey,
    count: u32,
) -> ProtocolEvent {
    ProtocolEvent {
        cycle,
        kind,
        from,
        to,
        app,
        count,
    }
}
