//! The M/M/inf queue that dominates the broken-bond count, and an explicit
//! pathwise coupling of the two.
//!
//! Coupling construction: one Poisson(`lambda`) stream of jump attempts
//! carries i.i.d. Bernoulli(`p`) marks. Every marked attempt is a queue
//! arrival and draws a service time at once. If the walker actually crosses a
//! bond on that attempt, the bond breaks and is matched to the new customer:
//! its repair is that customer's departure. Marked attempts that are blocked
//! leave an unmatched customer; unmarked attempts touch neither count. Every
//! broken bond therefore owns a distinct customer, so `b_t <= Q_t` on every
//! path.
//!
//! Random sub-streams of one seed (see [`crate::rng::substream`]):
//! attempt times, marks, jump directions, service times, and direct arrivals
//! for the standalone queue. The queue side never reads the direction stream,
//! so its event times do not depend on the walk at all.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::Exp1;
use rustc_hash::FxBuildHasher;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Bond, Direction, Site};
use crate::parallel::{blocks, Pool};
use crate::params::{busy_cycle_closed_form, ModelParams};
use crate::rng::{self, SimRng};
use crate::stats;

const STREAM_ATTEMPTS: u64 = 0;
const STREAM_MARKS: u64 = 1;
const STREAM_DIRECTIONS: u64 = 2;
const STREAM_SERVICE: u64 = 3;
const STREAM_ARRIVALS: u64 = 4;

/// Busy cycles simulated per derived stream.
pub const CYCLES_PER_BLOCK: usize = 8192;

fn exp(rng: &mut SimRng, rate: f64) -> f64 {
    rng.sample::<f64, _>(Exp1) / rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueEventKind {
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueueEvent {
    pub time: f64,
    pub kind: QueueEventKind,
    /// Customers in system right after the event.
    pub customers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueTrajectory {
    pub horizon: f64,
    pub events: Vec<QueueEvent>,
}

impl QueueTrajectory {
    pub fn final_customers(&self) -> usize {
        self.events.last().map_or(0, |e| e.customers)
    }

    /// Time average of the customer count over `[from, horizon]`.
    pub fn time_average(&self, from: f64) -> f64 {
        self.time_average_over(from, self.horizon)
    }

    /// Time average of the customer count over `[from, to]`.
    pub fn time_average_over(&self, from: f64, to: f64) -> f64 {
        self.integrate(from, to, |q| q as f64)
    }

    /// Fraction of `[from, horizon]` with at least one customer.
    pub fn busy_fraction(&self, from: f64) -> f64 {
        self.integrate(from, self.horizon, |q| if q > 0 { 1.0 } else { 0.0 })
    }

    fn integrate(&self, from: f64, to: f64, f: impl Fn(usize) -> f64) -> f64 {
        let to = to.min(self.horizon);
        if to <= from {
            return 0.0;
        }
        let overlap = |a: f64, b: f64| (b.min(to) - a.max(from)).max(0.0);
        let mut acc = 0.0;
        let mut t: f64 = 0.0;
        let mut q = 0;
        for e in &self.events {
            if t >= to {
                break;
            }
            acc += f(q) * overlap(t, e.time);
            t = e.time;
            q = e.customers;
        }
        acc += f(q) * overlap(t, self.horizon);
        acc / (to - from)
    }
}

/// Min-heap entry: departure time and customer id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Departure(f64, u64);

impl Eq for Departure {}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Where queue arrivals come from.
#[derive(Debug, Clone, Copy)]
enum Arrivals {
    /// Poisson stream at the given rate.
    Direct(f64),
    /// Marked points of a Poisson(`attempt_rate`) stream, each marked with
    /// probability `mark`. This is how arrivals arise inside the coupling.
    Thinned { attempt_rate: f64, mark: f64 },
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name} must be finite and > 0 (got {v})")))
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "horizon must be finite and >= 0 (got {horizon})"
        )))
    }
}

fn run_queue(arrivals: Arrivals, service_rate: f64, seed: u64, horizon: f64) -> QueueTrajectory {
    let mut attempt_rng = rng::substream(seed, STREAM_ATTEMPTS);
    let mut mark_rng = rng::substream(seed, STREAM_MARKS);
    let mut service_rng = rng::substream(seed, STREAM_SERVICE);
    let mut arrival_rng = rng::substream(seed, STREAM_ARRIVALS);
    // Absolute time of the next arrival after one at `from`. Attempt times
    // accumulate one gap at a time, exactly as in the coupled run.
    let mut next_arrival = |from: f64| -> f64 {
        match arrivals {
            Arrivals::Direct(rate) => from + exp(&mut arrival_rng, rate),
            Arrivals::Thinned { attempt_rate, mark } => {
                let mut at = from;
                loop {
                    at += exp(&mut attempt_rng, attempt_rate);
                    if mark_rng.random_bool(mark) {
                        return at;
                    }
                }
            }
        }
    };
    let mut heap = BinaryHeap::new();
    let mut events = Vec::new();
    let mut arrival_at = next_arrival(0.0);
    let mut id = 0u64;
    loop {
        let departure_at = heap.peek().map_or(f64::INFINITY, |d: &Departure| d.0);
        let t = arrival_at.min(departure_at);
        if t > horizon {
            break;
        }
        if arrival_at <= departure_at {
            heap.push(Departure(t + exp(&mut service_rng, service_rate), id));
            id += 1;
            events.push(QueueEvent {
                time: t,
                kind: QueueEventKind::Arrival,
                customers: heap.len(),
            });
            arrival_at = next_arrival(t);
        } else {
            heap.pop();
            events.push(QueueEvent {
                time: t,
                kind: QueueEventKind::Departure,
                customers: heap.len(),
            });
        }
    }
    QueueTrajectory { horizon, events }
}

/// M/M/inf queue from empty up to `horizon`: Poisson arrivals and an
/// independent exponential service per customer.
pub fn simulate_queue(arrival_rate: f64, service_rate: f64, seed: u64, horizon: f64) -> Result<QueueTrajectory> {
    check_rate("arrival_rate", arrival_rate)?;
    check_rate("service_rate", service_rate)?;
    check_horizon(horizon)?;
    Ok(run_queue(Arrivals::Direct(arrival_rate), service_rate, seed, horizon))
}

/// The queue as it is driven inside [`coupled_run`] for the same seed:
/// arrivals are the marked jump attempts.
pub fn simulate_thinned_queue(params: &ModelParams, seed: u64, horizon: f64) -> Result<QueueTrajectory> {
    params.require_breaks()?;
    check_horizon(horizon)?;
    Ok(run_queue(
        Arrivals::Thinned {
            attempt_rate: params.lambda,
            mark: params.p,
        },
        params.mu,
        seed,
        horizon,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusyCycleEstimate {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    /// `exp(a / s) / a`.
    pub closed_form: f64,
    /// `(mean - closed_form) / se`.
    pub z_score: f64,
}

/// Mean length of idle-plus-busy cycles, from empty to empty, over
/// `n_cycles` independent cycles.
pub fn busy_cycle_mean(
    arrival_rate: f64,
    service_rate: f64,
    n_cycles: usize,
    seed: u64,
    pool: &Pool,
) -> Result<BusyCycleEstimate> {
    Ok(busy_cycle_summary(
        &busy_cycles(arrival_rate, service_rate, n_cycles, seed, pool)?,
        arrival_rate,
        service_rate,
    ))
}

/// Idle and busy lengths of each cycle, in (block, cycle) order.
pub fn busy_cycles(
    arrival_rate: f64,
    service_rate: f64,
    n_cycles: usize,
    seed: u64,
    pool: &Pool,
) -> Result<Vec<(f64, f64)>> {
    check_rate("arrival_rate", arrival_rate)?;
    check_rate("service_rate", service_rate)?;
    if n_cycles == 0 {
        return Err(Error::InvalidArgument("n_cycles must be >= 1".into()));
    }
    let ranges = blocks(n_cycles, CYCLES_PER_BLOCK);
    let parts = pool.map(ranges.len(), |b| {
        let (lo, hi) = ranges[b];
        let mut rng = rng::stream(rng::replica_seed(seed, b as u64));
        (lo..hi)
            .map(|_| {
                let idle = exp(&mut rng, arrival_rate);
                // Birth-death chain from one customer back to zero.
                let mut busy = 0.0;
                let mut q = 1u64;
                while q > 0 {
                    let rate = arrival_rate + q as f64 * service_rate;
                    busy += exp(&mut rng, rate);
                    if rng.random::<f64>() * rate < arrival_rate {
                        q += 1;
                    } else {
                        q -= 1;
                    }
                }
                (idle, busy)
            })
            .collect::<Vec<_>>()
    });
    Ok(parts.into_iter().flatten().collect())
}

pub fn busy_cycle_summary(cycles: &[(f64, f64)], arrival_rate: f64, service_rate: f64) -> BusyCycleEstimate {
    let lengths: Vec<f64> = cycles.iter().map(|(i, b)| i + b).collect();
    let mean = stats::mean(&lengths);
    let se = stats::std_error(&lengths);
    let closed_form = busy_cycle_closed_form(arrival_rate, service_rate);
    BusyCycleEstimate {
        n: lengths.len(),
        mean,
        se,
        closed_form,
        z_score: (mean - closed_form) / se,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledEventKind {
    /// Unmarked attempt that moved the walker.
    Jump,
    /// Marked attempt that moved the walker: bond breaks, matched arrival.
    JumpBreak,
    /// Unmarked attempt with every incident bond broken.
    Blocked,
    /// Marked attempt with every incident bond broken: unmatched arrival.
    BlockedArrival,
    /// Departure of a matched customer: its bond is repaired.
    Repair,
    /// Departure of an unmatched customer.
    Service,
}

impl CoupledEventKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Jump => "jump",
            Self::JumpBreak => "jump_break",
            Self::Blocked => "blocked",
            Self::BlockedArrival => "blocked_arrival",
            Self::Repair => "repair",
            Self::Service => "service",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledEvent {
    pub time: f64,
    pub kind: CoupledEventKind,
    /// Broken bonds after the event.
    pub b: usize,
    /// Customers after the event.
    pub q: usize,
    /// Broken bonds currently matched to a customer.
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRecord {
    pub params: ModelParams,
    pub seed: u64,
    pub horizon: f64,
    pub events: Vec<CoupledEvent>,
    pub final_position: Site,
}

impl CoupledRecord {
    /// Queue arrival and departure times, for comparison with the
    /// standalone queue.
    pub fn queue_events(&self) -> Vec<QueueEvent> {
        self.events
            .iter()
            .filter_map(|e| {
                let kind = match e.kind {
                    CoupledEventKind::JumpBreak | CoupledEventKind::BlockedArrival => QueueEventKind::Arrival,
                    CoupledEventKind::Repair | CoupledEventKind::Service => QueueEventKind::Departure,
                    CoupledEventKind::Jump | CoupledEventKind::Blocked => return None,
                };
                Some(QueueEvent {
                    time: e.time,
                    kind,
                    customers: e.q,
                })
            })
            .collect()
    }

    /// Durations of the walk's completed regeneration cycles: the walk
    /// regenerates when the broken count returns to zero after a break.
    pub fn walk_cycle_durations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut start = 0.0;
        let mut seen_break = false;
        for e in &self.events {
            seen_break |= e.kind == CoupledEventKind::JumpBreak;
            if seen_break && e.b == 0 {
                out.push(e.time - start);
                start = e.time;
                seen_break = false;
            }
        }
        out
    }

    /// `time,event,b,q,matched`
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,event,b,q,matched")?;
        for e in &self.events {
            writeln!(w, "{},{},{},{},{}", e.time, e.kind.label(), e.b, e.q, e.matched)?;
        }
        Ok(())
    }
}

/// Runs the walk and its dominating queue on shared randomness up to
/// `horizon`, checking `b <= q` and `matched == b` after every event.
pub fn coupled_run(params: &ModelParams, seed: u64, horizon: f64) -> Result<CoupledRecord> {
    params.require_breaks()?;
    check_horizon(horizon)?;
    let mut attempt_rng = rng::substream(seed, STREAM_ATTEMPTS);
    let mut mark_rng = rng::substream(seed, STREAM_MARKS);
    let mut dir_rng = rng::substream(seed, STREAM_DIRECTIONS);
    let mut service_rng = rng::substream(seed, STREAM_SERVICE);

    let mut position = Site::origin(params.dim);
    // Broken bond -> matched customer, and customer -> matched bond.
    let mut broken: IndexMap<Bond, u64, FxBuildHasher> = IndexMap::default();
    let mut bond_of: rustc_hash::FxHashMap<u64, Bond> = Default::default();
    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut events = Vec::new();
    let mut attempt_at = exp(&mut attempt_rng, params.lambda);

    loop {
        let departure_at = heap.peek().map_or(f64::INFINITY, |d: &Departure| d.0);
        let t = attempt_at.min(departure_at);
        if t > horizon {
            break;
        }
        let kind = if attempt_at <= departure_at {
            attempt_at = t + exp(&mut attempt_rng, params.lambda);
            let marked = mark_rng.random_bool(params.p);
            let intact: smallvec::SmallVec<[Direction; 8]> = (0..params.dim)
                .flat_map(|axis| [true, false].map(|positive| Direction { axis, positive }))
                .filter(|&d| !broken.contains_key(&Bond::incident(&position, d)))
                .collect();
            let crossed = match intact.len() {
                0 => None,
                1 => Some(intact[0]),
                n => Some(intact[dir_rng.random_range(0..n)]),
            };
            if marked {
                let id = next_id;
                next_id += 1;
                heap.push(Departure(t + exp(&mut service_rng, params.mu), id));
                if let Some(d) = crossed {
                    let bond = Bond::incident(&position, d);
                    broken.insert(bond.clone(), id);
                    bond_of.insert(id, bond);
                }
            }
            if let Some(d) = crossed {
                position.shift(d);
            }
            match (crossed.is_some(), marked) {
                (true, true) => CoupledEventKind::JumpBreak,
                (true, false) => CoupledEventKind::Jump,
                (false, true) => CoupledEventKind::BlockedArrival,
                (false, false) => CoupledEventKind::Blocked,
            }
        } else {
            let Departure(_, id) = heap.pop().expect("departure pending");
            match bond_of.remove(&id) {
                Some(bond) => {
                    broken.swap_remove(&bond);
                    CoupledEventKind::Repair
                }
                None => CoupledEventKind::Service,
            }
        };
        let event = CoupledEvent {
            time: t,
            kind,
            b: broken.len(),
            q: heap.len(),
            matched: bond_of.len(),
        };
        if event.b > event.q || event.matched != event.b {
            return Err(Error::CouplingViolation {
                time: t,
                detail: format!("b={} q={} matched={}", event.b, event.q, event.matched),
            });
        }
        events.push(event);
    }
    Ok(CoupledRecord {
        params: *params,
        seed,
        horizon,
        events,
        final_position: position,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub runs: usize,
    pub events: u64,
    pub violations: usize,
    /// Runs on which b < q at some event (blocked marked attempts).
    pub runs_with_slack: usize,
}

/// `runs` independent coupled runs; run `i` uses `replica_seed(seed, i)`.
/// A violation on any run is counted rather than aborting the batch.
pub fn coupling_batch(
    params: &ModelParams,
    runs: usize,
    seed: u64,
    horizon: f64,
    pool: &Pool,
) -> Result<CouplingSummary> {
    params.require_breaks()?;
    check_horizon(horizon)?;
    let results = pool.map(runs, |i| {
        coupled_run(params, rng::replica_seed(seed, i as u64), horizon)
    });
    let mut summary = CouplingSummary {
        runs,
        events: 0,
        violations: 0,
        runs_with_slack: 0,
    };
    for r in results {
        match r {
            Ok(rec) => {
                summary.events += rec.events.len() as u64;
                if rec.events.iter().any(|e| e.b < e.q) {
                    summary.runs_with_slack += 1;
                }
            }
            Err(Error::CouplingViolation { .. }) => summary.violations += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}
