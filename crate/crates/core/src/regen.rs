//! Regeneration cycles and the regenerative estimators built on them.
//!
//! A cycle starts with no broken bonds, runs through the first break and ends
//! the first time the broken set is empty again. Cycle increments
//! `(delta_tau, delta_x)` are i.i.d., so the mean duration, the displacement
//! covariance and their ratio (the diffusion coefficient) follow from plain
//! sample statistics.

use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::parallel::{blocks, Pool};
use crate::params::ModelParams;
use crate::process::{EventKind, Orientation, WalkerState, CYCLE_EVENT_CAP};
use crate::rng;
use crate::stats;

/// Cycles simulated from one derived random stream.
pub const CYCLES_PER_BLOCK: usize = 4096;

pub const DEFAULT_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationSample {
    pub delta_tau: f64,
    pub delta_x: Site,
    pub attempts: u64,
    pub max_broken: usize,
}

impl RegenerationSample {
    pub fn abs_displacement(&self) -> u64 {
        self.delta_x.l1_norm()
    }

    pub fn squared_displacement(&self) -> f64 {
        self.delta_x.coords().iter().map(|&c| (c * c) as f64).sum()
    }
}

/// State at the first event after the first break of a cycle: either the
/// next jump or the repair of the broken bond, whichever comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaSample {
    pub time: f64,
    pub displacement: Site,
}

#[derive(Debug, Clone, Default)]
pub struct Collection {
    pub samples: Vec<RegenerationSample>,
    /// Cycle-level first-break follow-up, one per sample.
    pub zetas: Vec<ZetaSample>,
    /// Cycles abandoned at the event cap.
    pub truncated: usize,
}

struct CycleRun {
    sample: RegenerationSample,
    zeta: ZetaSample,
}

/// Runs one cycle from a fresh state at the origin.
fn run_cycle<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R, orientation: Orientation) -> Result<CycleRun> {
    let mut state = WalkerState::new(params.dim);
    let mut seen_break = false;
    let mut zeta = None;
    let mut max_broken = 0;
    for _ in 0..CYCLE_EVENT_CAP {
        let event = state
            .step_until(params, rng, f64::INFINITY, orientation)
            .expect("unbounded step");
        if seen_break && zeta.is_none() {
            zeta = Some(ZetaSample {
                time: event.time,
                displacement: state.position.clone(),
            });
        }
        if matches!(event.kind, EventKind::Jump { broke: true, .. }) {
            seen_break = true;
        }
        max_broken = max_broken.max(event.broken_count);
        if seen_break && event.broken_count == 0 {
            return Ok(CycleRun {
                sample: RegenerationSample {
                    delta_tau: state.clock,
                    delta_x: state.position,
                    attempts: state.attempts,
                    max_broken,
                },
                zeta: zeta.expect("a cycle ends with a repair after its first break"),
            });
        }
    }
    Err(Error::Truncated { cap: CYCLE_EVENT_CAP })
}

pub fn collect(params: &ModelParams, n_cycles: usize, seed: u64, pool: &Pool) -> Result<Collection> {
    collect_with(params, n_cycles, seed, pool, Orientation::Normal)
}

/// Simulates `n_cycles` independent cycles. Cycles are grouped in blocks of
/// [`CYCLES_PER_BLOCK`]; block `b` draws from `replica_seed(seed, b)`, and the
/// merged list is in (block, cycle) order whatever the worker count.
pub fn collect_with(
    params: &ModelParams,
    n_cycles: usize,
    seed: u64,
    pool: &Pool,
    orientation: Orientation,
) -> Result<Collection> {
    params.require_breaks()?;
    if n_cycles == 0 {
        return Err(Error::InvalidArgument("n_cycles must be >= 1".into()));
    }
    let ranges = blocks(n_cycles, CYCLES_PER_BLOCK);
    let parts = pool.map(ranges.len(), |b| {
        let (lo, hi) = ranges[b];
        let mut rng = rng::stream(rng::replica_seed(seed, b as u64));
        let mut part = Collection::default();
        for _ in lo..hi {
            match run_cycle(params, &mut rng, orientation) {
                Ok(run) => {
                    part.samples.push(run.sample);
                    part.zetas.push(run.zeta);
                }
                Err(_) => part.truncated += 1,
            }
        }
        part
    });
    let mut out = Collection::default();
    out.samples.reserve(n_cycles);
    out.zetas.reserve(n_cycles);
    for part in parts {
        out.samples.extend(part.samples);
        out.zetas.extend(part.zetas);
        out.truncated += part.truncated;
    }
    Ok(out)
}

/// Splits one long trajectory at its regeneration times instead of
/// restarting every cycle at the origin.
pub fn split_run(params: &ModelParams, n_cycles: usize, seed: u64) -> Result<Vec<RegenerationSample>> {
    params.require_breaks()?;
    let mut rng = rng::stream(seed);
    let mut state = WalkerState::new(params.dim);
    let mut out = Vec::with_capacity(n_cycles);
    let (mut t0, mut x0, mut a0) = (0.0, state.position.clone(), 0u64);
    let mut seen_break = false;
    let mut max_broken = 0;
    let mut events = 0u64;
    while out.len() < n_cycles {
        let event = state.step(params, &mut rng);
        events += 1;
        if events > CYCLE_EVENT_CAP {
            return Err(Error::Truncated { cap: CYCLE_EVENT_CAP });
        }
        seen_break |= matches!(event.kind, EventKind::Jump { broke: true, .. });
        max_broken = max_broken.max(event.broken_count);
        if seen_break && event.broken_count == 0 {
            let dx: Vec<i64> = state
                .position
                .coords()
                .iter()
                .zip(x0.coords())
                .map(|(a, b)| a - b)
                .collect();
            out.push(RegenerationSample {
                delta_tau: state.clock - t0,
                delta_x: Site::from_coords(&dx),
                attempts: state.attempts - a0,
                max_broken,
            });
            (t0, x0, a0) = (state.clock, state.position.clone(), state.attempts);
            seen_break = false;
            max_broken = 0;
            events = 0;
        }
    }
    Ok(out)
}

/// Regenerative estimate of the cycle mean, displacement covariance and
/// diffusion coefficient. Matrices are `dim x dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct DiffusionEstimate {
    pub n: usize,
    pub dim: usize,
    pub confidence: f64,
    pub alpha_hat: f64,
    pub se_alpha: f64,
    pub alpha_ci: [f64; 2],
    pub mean_dx: Vec<f64>,
    pub beta2_hat: Vec<f64>,
    pub se_beta2: Vec<f64>,
    pub coeff: Vec<f64>,
    pub se_coeff: Vec<f64>,
    pub coeff_ci: Vec<[f64; 2]>,
    /// trace(beta2) / alpha: total variance per unit time, `lambda` for the
    /// free walk in any dimension.
    pub coeff_trace: f64,
    pub se_coeff_trace: f64,
    pub coeff_trace_ci: [f64; 2],
    /// Raw second moment E|delta_x|^2.
    pub mean_sq_dx: f64,
    pub se_mean_sq_dx: f64,
    /// Every displacement identical: the covariance carries no information.
    pub degenerate: bool,
}

impl DiffusionEstimate {
    /// Scalar coefficient: the single entry in 1D, the trace in general.
    pub fn coefficient(&self) -> f64 {
        if self.dim == 1 {
            self.coeff[0]
        } else {
            self.coeff_trace
        }
    }
}

fn se_of(influence: impl Iterator<Item = f64>, n: usize) -> f64 {
    let ss: f64 = influence.map(|v| v * v).sum();
    (ss / ((n - 1) as f64 * n as f64)).sqrt()
}

fn ci(center: f64, se: f64, z: f64) -> [f64; 2] {
    [center - z * se, center + z * se]
}

pub fn estimate(samples: &[RegenerationSample], confidence: f64) -> Result<DiffusionEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            what: "estimate",
            needed: 2,
            got: n,
        });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must be in (0, 1) (got {confidence})"
        )));
    }
    let dim = samples[0].delta_x.dim();
    let z = stats::z_critical(confidence);
    let taus: Vec<f64> = samples.iter().map(|s| s.delta_tau).collect();
    let alpha = stats::mean(&taus);
    let se_alpha = stats::std_error(&taus);

    let mean_dx: Vec<f64> = (0..dim)
        .map(|a| samples.iter().map(|s| s.delta_x.coords()[a] as f64).sum::<f64>() / n as f64)
        .collect();
    let centred: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.delta_x
                .coords()
                .iter()
                .zip(&mean_dx)
                .map(|(&c, m)| c as f64 - m)
                .collect()
        })
        .collect();

    let mut beta2 = vec![0.0; dim * dim];
    for c in &centred {
        for j in 0..dim {
            for k in 0..dim {
                beta2[j * dim + k] += c[j] * c[k];
            }
        }
    }
    beta2.iter_mut().for_each(|v| *v /= (n - 1) as f64);

    let mut se_beta2 = vec![0.0; dim * dim];
    let mut se_coeff = vec![0.0; dim * dim];
    for j in 0..dim {
        for k in 0..dim {
            let b = beta2[j * dim + k];
            let infl_b = || centred.iter().map(move |c| c[j] * c[k] - b);
            se_beta2[j * dim + k] = se_of(infl_b(), n);
            se_coeff[j * dim + k] = se_of(
                infl_b()
                    .zip(&taus)
                    .map(|(ib, t)| ib / alpha - b * (t - alpha) / (alpha * alpha)),
                n,
            );
        }
    }
    let coeff: Vec<f64> = beta2.iter().map(|b| b / alpha).collect();
    let trace: f64 = (0..dim).map(|j| beta2[j * dim + j]).sum();
    let se_coeff_trace = se_of(
        centred.iter().zip(&taus).map(|(c, t)| {
            let ib = c.iter().map(|v| v * v).sum::<f64>() - trace;
            ib / alpha - trace * (t - alpha) / (alpha * alpha)
        }),
        n,
    );
    let sq: Vec<f64> = samples.iter().map(|s| s.squared_displacement()).collect();
    let first = &samples[0].delta_x;
    let degenerate = samples.iter().all(|s| &s.delta_x == first);

    Ok(DiffusionEstimate {
        n,
        dim,
        confidence,
        alpha_hat: alpha,
        se_alpha,
        alpha_ci: ci(alpha, se_alpha, z),
        mean_dx,
        coeff_ci: coeff.iter().zip(&se_coeff).map(|(&c, &s)| ci(c, s, z)).collect(),
        coeff_trace: trace / alpha,
        se_coeff_trace,
        coeff_trace_ci: ci(trace / alpha, se_coeff_trace, z),
        beta2_hat: beta2,
        se_beta2,
        coeff,
        se_coeff,
        mean_sq_dx: stats::mean(&sq),
        se_mean_sq_dx: stats::std_error(&sq),
        degenerate,
    })
}

/// Margin of one inequality in standard errors; positive means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub estimate: f64,
    pub bound: f64,
    pub se: f64,
    pub margin_se: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub any_violation: bool,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Violations are flagged beyond this many standard errors.
pub const VIOLATION_SE: f64 = 3.0;

fn margin(slack: f64, se: f64) -> f64 {
    if se > 0.0 {
        slack / se
    } else if slack >= 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

fn check(name: &'static str, estimate: f64, bound: f64, se: f64, slack: f64) -> BoundCheck {
    let margin_se = margin(slack, se);
    BoundCheck {
        name,
        estimate,
        bound,
        se,
        margin_se,
        violated: margin_se < -VIOLATION_SE,
    }
}

pub const BOUND_CYCLE_MEAN: &str = "cycle_mean_le_queue_cycle";
pub const BOUND_ABS_DISPLACEMENT: &str = "mean_abs_displacement_le_lambda_alpha";
pub const BOUND_DISPLACED: &str = "displaced_fraction_ge_break_then_repair";
pub const BOUND_UNIT: &str = "unit_displacement_fraction_ge_break_then_repair";

/// Checks the three inequalities the cycle statistics must satisfy:
/// `alpha <= exp(lambda p / mu) / (lambda p)`, `E|dx| <= lambda alpha` and
/// `P(|dx| >= 1) >= P(|dx| = 1) >= p mu / (lambda + mu)`.
pub fn check_bounds(est: &DiffusionEstimate, samples: &[RegenerationSample], params: &ModelParams) -> BoundReport {
    let n = samples.len() as f64;
    let queue_bound = params.queue_cycle_mean();
    let mut checks = vec![check(
        BOUND_CYCLE_MEAN,
        est.alpha_hat,
        queue_bound,
        est.se_alpha,
        queue_bound - est.alpha_hat,
    )];

    let abs: Vec<f64> = samples.iter().map(|s| s.abs_displacement() as f64).collect();
    let diff: Vec<f64> = samples
        .iter()
        .zip(&abs)
        .map(|(s, a)| params.lambda * s.delta_tau - a)
        .collect();
    checks.push(check(
        BOUND_ABS_DISPLACEMENT,
        stats::mean(&abs),
        params.lambda * est.alpha_hat,
        stats::std_error(&diff),
        stats::mean(&diff),
    ));

    let break_repair = params.p * params.mu / (params.lambda + params.mu);
    for (name, pred) in [
        (BOUND_DISPLACED, (|d: u64| d >= 1) as fn(u64) -> bool),
        (BOUND_UNIT, |d: u64| d == 1),
    ] {
        let f = samples.iter().filter(|s| pred(s.abs_displacement())).count() as f64 / n;
        let se = (f * (1.0 - f) / n).sqrt();
        checks.push(check(name, f, break_repair, se, f - break_repair));
    }
    let any_violation = checks.iter().any(|c| c.violated);
    BoundReport { checks, any_violation }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroMeanReport {
    pub n: usize,
    pub confidence: f64,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<[f64; 2]>,
    pub pass: bool,
    /// Fewer than 30 cycles: the normal approximation is not trustworthy.
    pub small_sample: bool,
}

/// Per-coordinate confidence interval for the mean cycle displacement;
/// passes when each interval covers zero.
pub fn mean_increment_zero_test(samples: &[RegenerationSample], confidence: f64) -> Result<ZeroMeanReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            what: "mean_increment_zero_test",
            needed: 2,
            got: n,
        });
    }
    let dim = samples[0].delta_x.dim();
    let z = stats::z_critical(confidence);
    let mut means = Vec::new();
    let mut ses = Vec::new();
    let mut intervals = Vec::new();
    for a in 0..dim {
        let xs: Vec<f64> = samples.iter().map(|s| s.delta_x.coords()[a] as f64).collect();
        let (m, se) = (stats::mean(&xs), stats::std_error(&xs));
        means.push(m);
        ses.push(se);
        intervals.push(ci(m, se, z));
    }
    let pass = intervals.iter().all(|[lo, hi]| *lo <= 0.0 && 0.0 <= *hi);
    Ok(ZeroMeanReport {
        n,
        confidence,
        means,
        std_errors: ses,
        intervals,
        pass,
        small_sample: n < 30,
    })
}

pub const DIAGNOSTIC_LAGS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    /// Autocorrelation of delta_tau at lags 1..=5; `None` if constant.
    pub autocorr_tau: Vec<Option<f64>>,
    /// Same for each displacement coordinate.
    pub autocorr_dx: Vec<Vec<Option<f64>>>,
    pub band: f64,
    pub ks_halves: f64,
    pub ks_critical: f64,
    pub degenerate: bool,
    pub pass: bool,
}

/// Independence checks on the cycle sequence: low-lag autocorrelations
/// within `4/sqrt(n)` and a two-sample KS test between the first and second
/// half of the durations at the 1% level.
pub fn iid_diagnostics(samples: &[RegenerationSample]) -> Result<DiagnosticsReport> {
    let n = samples.len();
    if n < 100 {
        return Err(Error::TooFewSamples {
            what: "iid_diagnostics",
            needed: 100,
            got: n,
        });
    }
    let dim = samples[0].delta_x.dim();
    let band = 4.0 / (n as f64).sqrt();
    let lags =
        |xs: &[f64]| -> Vec<Option<f64>> { (1..=DIAGNOSTIC_LAGS).map(|l| stats::autocorrelation(xs, l)).collect() };
    let taus: Vec<f64> = samples.iter().map(|s| s.delta_tau).collect();
    let autocorr_tau = lags(&taus);
    let autocorr_dx: Vec<Vec<Option<f64>>> = (0..dim)
        .map(|a| {
            let xs: Vec<f64> = samples.iter().map(|s| s.delta_x.coords()[a] as f64).collect();
            lags(&xs)
        })
        .collect();
    let half = n / 2;
    let ks_halves = stats::ks_two_sample(&taus[..half], &taus[half..]);
    let ks_critical = stats::ks_critical(stats::two_sample_n_eff(half, n - half), 0.01);
    let all = autocorr_tau.iter().chain(autocorr_dx.iter().flatten());
    let degenerate = all.clone().any(Option::is_none);
    let within = all.flatten().all(|r| r.abs() <= band);
    Ok(DiagnosticsReport {
        n,
        autocorr_tau,
        autocorr_dx,
        band,
        ks_halves,
        ks_critical,
        degenerate,
        pass: !degenerate && within && ks_halves < ks_critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaSummary {
    pub n: usize,
    pub mean_time: f64,
    pub se_time: f64,
    pub mean_sq_displacement: f64,
    pub se_sq_displacement: f64,
}

pub fn zeta_summary(zetas: &[ZetaSample]) -> Result<ZetaSummary> {
    if zetas.len() < 2 {
        return Err(Error::TooFewSamples {
            what: "zeta_summary",
            needed: 2,
            got: zetas.len(),
        });
    }
    let times: Vec<f64> = zetas.iter().map(|z| z.time).collect();
    let sq: Vec<f64> = zetas
        .iter()
        .map(|z| z.displacement.coords().iter().map(|&c| (c * c) as f64).sum())
        .collect();
    Ok(ZetaSummary {
        n: zetas.len(),
        mean_time: stats::mean(&times),
        se_time: stats::std_error(&times),
        mean_sq_displacement: stats::mean(&sq),
        se_sq_displacement: stats::std_error(&sq),
    })
}

/// `cycle_index,delta_tau,delta_x_0[,delta_x_1,...],attempts,max_broken`
pub fn write_csv<W: Write>(samples: &[RegenerationSample], mut w: W) -> io::Result<()> {
    let dim = samples.first().map_or(1, |s| s.delta_x.dim());
    write!(w, "cycle_index,delta_tau")?;
    for a in 0..dim {
        write!(w, ",delta_x_{a}")?;
    }
    writeln!(w, ",attempts,max_broken")?;
    for (i, s) in samples.iter().enumerate() {
        write!(w, "{i},{}", s.delta_tau)?;
        for c in s.delta_x.coords() {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",{},{}", s.attempts, s.max_broken)?;
    }
    Ok(())
}
