//! Exact continuous-time simulation of the collapsing-bond walk.
//!
//! Each step draws one exponential holding time at the total rate
//! `lambda + mu * |broken|` and then picks the event category in proportion
//! to its rate. A jump attempt moves the walker across a uniformly chosen
//! intact incident bond (blocked when all `2d` are broken) and the crossed
//! bond breaks with probability `p`. A repair removes a uniformly chosen
//! broken bond.

use std::io::{self, Write};

use indexmap::IndexSet;
use rand::Rng;
use rand_distr::Exp1;
use rustc_hash::FxBuildHasher;

use crate::error::{Error, Result};
use crate::lattice::{Bond, Direction, Site};
use crate::params::ModelParams;
use crate::rng;

/// Broken bonds in insertion order. Repairs pick by index, so the order must
/// depend only on the event history.
pub type BrokenSet = IndexSet<Bond, FxBuildHasher>;

/// Hard cap on events in one horizon-stopped trajectory.
pub const MAX_EVENTS: u64 = 1_000_000_000;

/// Hard cap on events in one regeneration cycle.
pub const CYCLE_EVENT_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerState {
    pub position: Site,
    pub broken: BrokenSet,
    pub clock: f64,
    pub attempts: u64,
}

/// Direction convention for jump draws. `Mirrored` lists the negative
/// direction of each axis first, which makes a mirrored run the exact
/// reflection x -> -x of the normal run on the same random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    Normal,
    Mirrored,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Jump {
        bond: Bond,
        direction: Direction,
        broke: bool,
    },
    Blocked,
    Repair {
        bond: Bond,
    },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Jump { .. } => "jump",
            EventKind::Blocked => "blocked",
            EventKind::Repair { .. } => "repair",
        }
    }
}

/// One event together with the counters right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub broken_count: usize,
    pub attempts: u64,
}

pub fn total_event_rate(state: &WalkerState, params: &ModelParams) -> f64 {
    params.lambda + params.mu * state.broken.len() as f64
}

impl WalkerState {
    /// Walker at the origin with every bond intact.
    pub fn new(dim: usize) -> Self {
        Self {
            position: Site::origin(dim),
            broken: BrokenSet::default(),
            clock: 0.0,
            attempts: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.position.dim()
    }

    pub fn broken_count(&self) -> usize {
        self.broken.len()
    }

    /// Intact bonds around the walker, in the draw order of `orientation`.
    fn intact_directions(&self, orientation: Orientation) -> smallvec::SmallVec<[Direction; 8]> {
        let mut out = smallvec::SmallVec::new();
        let first_positive = orientation == Orientation::Normal;
        for axis in 0..self.dim() {
            for positive in [first_positive, !first_positive] {
                let dir = Direction { axis, positive };
                if self.broken.is_empty() || !self.broken.contains(&Bond::incident(&self.position, dir)) {
                    out.push(dir);
                }
            }
        }
        out
    }

    pub fn step<R: Rng + ?Sized>(&mut self, params: &ModelParams, rng: &mut R) -> Event {
        self.step_until(params, rng, f64::INFINITY, Orientation::Normal)
            .expect("an unbounded step always produces an event")
    }

    /// Advances to the next event unless it would fall after `limit`; in that
    /// case the clock is set to `limit` and `None` is returned. Discarding the
    /// overshooting draw is exact because every clock is memoryless.
    pub fn step_until<R: Rng + ?Sized>(
        &mut self,
        params: &ModelParams,
        rng: &mut R,
        limit: f64,
        orientation: Orientation,
    ) -> Option<Event> {
        let rate = total_event_rate(self, params);
        let dt: f64 = rng.sample::<f64, _>(Exp1) / rate;
        if self.clock + dt > limit {
            self.clock = limit;
            return None;
        }
        self.clock += dt;
        let attempt = self.broken.is_empty() || rng.random::<f64>() * rate < params.lambda;
        let kind = if attempt {
            self.attempts += 1;
            let intact = self.intact_directions(orientation);
            match intact.len() {
                0 => EventKind::Blocked,
                n => {
                    let direction = if n == 1 {
                        intact[0]
                    } else {
                        intact[rng.random_range(0..n)]
                    };
                    let bond = Bond::incident(&self.position, direction);
                    self.position.shift(direction);
                    let broke = params.p > 0.0 && rng.random_bool(params.p);
                    if broke {
                        self.broken.insert(bond.clone());
                    }
                    EventKind::Jump { bond, direction, broke }
                }
            }
        } else {
            let idx = rng.random_range(0..self.broken.len());
            let bond = self.broken.swap_remove_index(idx).expect("index in range");
            EventKind::Repair { bond }
        };
        Some(Event {
            time: self.clock,
            kind,
            broken_count: self.broken.len(),
            attempts: self.attempts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    /// Run until time `T`; the final clock equals `T`.
    Horizon(f64),
    /// Run exactly this many events.
    Events(u64),
    /// Run until the broken set empties after at least one break.
    Regeneration,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub record: bool,
    pub orientation: Orientation,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record: true,
            orientation: Orientation::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ModelParams,
    pub seed: u64,
    /// Empty when the run was made with `record: false`.
    pub events: Vec<Event>,
    pub recorded: bool,
    pub event_count: u64,
    pub final_state: WalkerState,
}

pub fn simulate(params: &ModelParams, seed: u64, stop: StopCondition) -> Result<Trajectory> {
    simulate_with(params, seed, stop, SimOptions::default())
}

pub fn simulate_with(params: &ModelParams, seed: u64, stop: StopCondition, opts: SimOptions) -> Result<Trajectory> {
    params.validate()?;
    let (limit, max_events, cap) = match stop {
        StopCondition::Horizon(t) => {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "horizon must be finite and >= 0 (got {t})"
                )));
            }
            (t, MAX_EVENTS, MAX_EVENTS)
        }
        StopCondition::Events(n) => (f64::INFINITY, n, n),
        StopCondition::Regeneration => {
            params.require_breaks()?;
            (f64::INFINITY, CYCLE_EVENT_CAP, CYCLE_EVENT_CAP)
        }
    };
    let mut rng = rng::stream(seed);
    let mut state = WalkerState::new(params.dim);
    let mut events = Vec::new();
    let mut count = 0u64;
    let mut seen_break = false;
    loop {
        if count == max_events {
            if matches!(stop, StopCondition::Events(_)) {
                break;
            }
            return Err(Error::Truncated { cap });
        }
        let Some(event) = state.step_until(params, &mut rng, limit, opts.orientation) else {
            break;
        };
        count += 1;
        seen_break |= matches!(event.kind, EventKind::Jump { broke: true, .. });
        let done = stop == StopCondition::Regeneration && seen_break && event.broken_count == 0;
        if opts.record {
            events.push(event);
        }
        if done {
            break;
        }
    }
    Ok(Trajectory {
        params: *params,
        seed,
        events,
        recorded: opts.record,
        event_count: count,
        final_state: state,
    })
}

impl Trajectory {
    /// Positions at the requested nondecreasing times, right-continuous: the
    /// value at `t` includes any jump at exactly `t`.
    pub fn sample_positions(&self, times: &[f64]) -> Result<Vec<Site>> {
        if !self.recorded {
            return Err(Error::NoEventLog);
        }
        let end = self.final_state.clock;
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sample times must be nondecreasing".into()));
        }
        let mut out = Vec::with_capacity(times.len());
        let mut pos = Site::origin(self.params.dim);
        let mut next = 0;
        for &t in times {
            if !(0.0..=end).contains(&t) {
                return Err(Error::OutOfRange { time: t, end });
            }
            while next < self.events.len() && self.events[next].time <= t {
                if let EventKind::Jump { direction, .. } = self.events[next].kind {
                    pos.shift(direction);
                }
                next += 1;
            }
            out.push(pos.clone());
        }
        Ok(out)
    }

    /// Event log as CSV:
    /// `event_index,time,kind,dx_0..dx_{d-1},bond_site,bond_axis,broken_count,attempts`.
    /// Bond fields are empty for blocked attempts; multi-dimensional sites are
    /// `;`-joined.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.params.dim;
        write!(w, "event_index,time,kind")?;
        for a in 0..dim {
            write!(w, ",dx_{a}")?;
        }
        writeln!(w, ",bond_site,bond_axis,broken_count,attempts")?;
        for (i, e) in self.events.iter().enumerate() {
            write!(w, "{i},{},{}", e.time, e.kind.label())?;
            let (dx, bond) = match &e.kind {
                EventKind::Jump { bond, direction, .. } => (Some(*direction), Some(bond)),
                EventKind::Blocked => (None, None),
                EventKind::Repair { bond } => (None, Some(bond)),
            };
            for a in 0..dim {
                let v = dx.filter(|d| d.axis == a).map_or(0, |d| d.sign());
                write!(w, ",{v}")?;
            }
            match bond {
                Some(b) => write!(w, ",{},{}", b.site, b.axis)?,
                None => write!(w, ",,")?,
            }
            writeln!(w, ",{},{}", e.broken_count, e.attempts)?;
        }
        Ok(())
    }
}
