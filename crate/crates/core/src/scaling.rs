//! Diffusive scaling checks: standardized marginals against the normal law,
//! linear variance growth, increment decorrelation, returns to the origin,
//! and the comparison with the free walk.
//!
//! Every replica `i` is driven by `replica_seed(seed, i)` and is advanced
//! with unbounded steps, so a path does not depend on the grid it is read on:
//! positions at several times come from the same trajectories, and a longer
//! horizon extends a shorter one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::parallel::Pool;
use crate::params::ModelParams;
use crate::process::{EventKind, WalkerState};
use crate::regen::{self, DiffusionEstimate};
use crate::rng;
use crate::stats::{self, LinearFit};

/// Smallest replica count accepted by the sampling routines.
pub const MIN_REPLICAS: usize = 100;

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewSamples {
            what: "replicas",
            needed: MIN_REPLICAS,
            got: replicas,
        });
    }
    Ok(())
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidArgument("sample times must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("sample times must be sorted".into()));
    }
    Ok(())
}

/// Position of one path at each of the sorted `times`.
fn path_on_grid(params: &ModelParams, seed: u64, times: &[f64]) -> Vec<Site> {
    let mut rng = rng::stream(seed);
    let mut state = WalkerState::new(params.dim);
    let mut out = Vec::with_capacity(times.len());
    while out.len() < times.len() {
        let event = state.step(params, &mut rng);
        if times[out.len()] < event.time {
            let before = match event.kind {
                EventKind::Jump { direction, .. } => state.position.shifted(direction.reversed()),
                _ => state.position.clone(),
            };
            while out.len() < times.len() && times[out.len()] < event.time {
                out.push(before.clone());
            }
        }
    }
    out
}

/// Positions of `replicas` independent paths at the sorted `times`,
/// indexed `[replica][time]`. `p = 0` is allowed.
pub fn grid_positions(
    params: &ModelParams,
    times: &[f64],
    replicas: usize,
    seed: u64,
    pool: &Pool,
) -> Result<Vec<Vec<Site>>> {
    params.validate()?;
    check_times(times)?;
    Ok(pool.map(replicas, |i| {
        path_on_grid(params, rng::replica_seed(seed, i as u64), times)
    }))
}

/// `X(n t) / sqrt(n)` over independent replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSample {
    pub n: f64,
    pub t: f64,
    pub seed: Option<u64>,
    /// Indexed `[axis][replica]`.
    pub coords: Vec<Vec<f64>>,
}

impl MarginalSample {
    pub fn from_positions(n: f64, t: f64, seed: Option<u64>, positions: &[Site]) -> Self {
        let dim = positions.first().map_or(1, Site::dim);
        let scale = n.sqrt();
        let coords = (0..dim)
            .map(|a| positions.iter().map(|s| s.coords()[a] as f64 / scale).collect())
            .collect();
        Self { n, t, seed, coords }
    }

    /// One-dimensional sample, e.g. synthetic draws.
    pub fn from_values(n: f64, t: f64, values: Vec<f64>) -> Self {
        Self {
            n,
            t,
            seed: None,
            coords: vec![values],
        }
    }

    /// First coordinate.
    pub fn values(&self) -> &[f64] {
        &self.coords[0]
    }

    pub fn replicas(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    /// `values,` or `x_0,x_1,..` header, one replica per row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.coords.len()).map(|a| format!("x_{a}")).collect();
        writeln!(w, "replica,{}", header.join(","))?;
        for r in 0..self.replicas() {
            let row: Vec<String> = self.coords.iter().map(|c| c[r].to_string()).collect();
            writeln!(w, "{r},{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn marginal_samples(
    params: &ModelParams,
    n: f64,
    t: f64,
    replicas: usize,
    seed: u64,
    pool: &Pool,
) -> Result<MarginalSample> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("n must be >= 1 (got {n})")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1] (got {t})")));
    }
    check_replicas(replicas)?;
    let grid = grid_positions(params, &[n * t], replicas, seed, pool)?;
    let positions: Vec<Site> = grid.into_iter().map(|mut v| v.pop().expect("one time")).collect();
    Ok(MarginalSample::from_positions(n, t, Some(seed), &positions))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub pass: bool,
    pub n: usize,
    pub seed: Option<u64>,
}

/// Kolmogorov-Smirnov test of `value / sqrt(coeff * t)` against the standard
/// normal, at level `alpha`. `coeff` is the per-coordinate coefficient; in
/// several dimensions every axis is tested at level `alpha / dim` and the
/// largest distance is reported.
pub fn clt_test(sample: &MarginalSample, coeff: f64, alpha: f64) -> Result<TestReport> {
    if !(coeff.is_finite() && coeff > 0.0) {
        return Err(Error::InvalidArgument(format!("coeff must be > 0 (got {coeff})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1) (got {alpha})"
        )));
    }
    let n = sample.replicas();
    if n < 2 {
        return Err(Error::TooFewSamples {
            what: "marginal values",
            needed: 2,
            got: n,
        });
    }
    let dim = sample.coords.len();
    let scale = (coeff * sample.t).sqrt();
    let mut statistic: f64 = 0.0;
    for (axis, values) in sample.coords.iter().enumerate() {
        if values.iter().all(|v| *v == values[0]) {
            return Err(Error::Degenerate(format!("all values on axis {axis} are equal")));
        }
        let z: Vec<f64> = values.iter().map(|v| v / scale).collect();
        statistic = statistic.max(stats::ks_distance(&z, stats::normal_cdf));
    }
    let level = alpha / dim as f64;
    let critical = stats::ks_critical(n as f64, level);
    let p_value = (stats::ks_p_value(statistic, n as f64) * dim as f64).min(1.0);
    Ok(TestReport {
        statistic,
        critical,
        p_value,
        alpha,
        pass: statistic < critical,
        n,
        seed: sample.seed,
    })
}

/// Smallest grid accepted by the variance fit.
pub const MIN_GRID_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceLinearity {
    pub times: Vec<f64>,
    /// Sample variance of the position, summed over axes.
    pub variances: Vec<f64>,
    pub fit: LinearFit,
    /// `intercept / se_intercept`.
    pub intercept_z: f64,
}

fn check_grid(times: &[f64]) -> Result<()> {
    check_times(times)?;
    if times.len() < MIN_GRID_POINTS {
        return Err(Error::TooFewSamples {
            what: "grid times",
            needed: MIN_GRID_POINTS,
            got: times.len(),
        });
    }
    let (lo, hi) = (times[0], times[times.len() - 1]);
    if !(lo > 0.0 && hi >= 10.0 * lo) {
        return Err(Error::InvalidArgument(format!(
            "grid must be positive and span a decade (got {lo}..{hi})"
        )));
    }
    Ok(())
}

/// Least-squares line through `(time, variance)` points.
pub fn fit_variance_curve(times: &[f64], variances: &[f64]) -> Result<VarianceLinearity> {
    check_grid(times)?;
    if variances.len() != times.len() {
        return Err(Error::InvalidArgument("one variance per grid time".into()));
    }
    let fit = stats::linear_fit(times, variances);
    let intercept_z = if fit.se_intercept > 0.0 {
        fit.intercept / fit.se_intercept
    } else {
        0.0
    };
    Ok(VarianceLinearity {
        times: times.to_vec(),
        variances: variances.to_vec(),
        fit,
        intercept_z,
    })
}

/// Variance curve of positions produced by [`grid_positions`].
pub fn variance_from_grid(times: &[f64], grid: &[Vec<Site>]) -> Result<VarianceLinearity> {
    check_grid(times)?;
    let variances: Vec<f64> = (0..times.len())
        .map(|k| {
            let dim = grid[0][k].dim();
            (0..dim)
                .map(|a| {
                    let xs: Vec<f64> = grid.iter().map(|path| path[k].coords()[a] as f64).collect();
                    stats::variance(&xs)
                })
                .sum()
        })
        .collect();
    fit_variance_curve(times, &variances)
}

pub fn variance_linearity(
    params: &ModelParams,
    times: &[f64],
    replicas: usize,
    seed: u64,
    pool: &Pool,
) -> Result<VarianceLinearity> {
    check_grid(times)?;
    check_replicas(replicas)?;
    variance_from_grid(times, &grid_positions(params, times, replicas, seed, pool)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementCorrelation {
    /// Per axis; `None` when an increment has zero variance.
    pub correlations: Vec<Option<f64>>,
    /// `4 / sqrt(replicas)`.
    pub band: f64,
    pub pass: bool,
}

/// Correlation between `X(s) - X(0)` and `X(t) - X(s)` across replicas,
/// given positions at `[s, t]` for each replica.
pub fn increment_correlation(grid: &[Vec<Site>]) -> Result<IncrementCorrelation> {
    if grid.len() < 2 {
        return Err(Error::TooFewSamples {
            what: "replicas",
            needed: 2,
            got: grid.len(),
        });
    }
    if grid.iter().any(|p| p.len() != 2) {
        return Err(Error::InvalidArgument("expected positions at exactly two times".into()));
    }
    let dim = grid[0][0].dim();
    let correlations: Vec<Option<f64>> = (0..dim)
        .map(|a| {
            let first: Vec<f64> = grid.iter().map(|p| p[0].coords()[a] as f64).collect();
            let second: Vec<f64> = grid
                .iter()
                .map(|p| (p[1].coords()[a] - p[0].coords()[a]) as f64)
                .collect();
            stats::correlation(&first, &second)
        })
        .collect();
    let band = 4.0 / (grid.len() as f64).sqrt();
    let pass = correlations.iter().all(|c| c.is_some_and(|c| c.abs() <= band));
    Ok(IncrementCorrelation {
        correlations,
        band,
        pass,
    })
}

/// Fractions of the final time `n t` at which the CLT suite reads paths.
pub const CLT_GRID_FRACTIONS: [f64; 7] = [0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];
/// Relative tolerance on the fitted variance slope.
pub const SLOPE_TOLERANCE: f64 = 0.05;
/// Largest accepted `|intercept| / se`.
pub const INTERCEPT_Z_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltSuite {
    /// Per-coordinate coefficient the marginal is standardized by.
    pub coeff: f64,
    #[serde(skip)]
    pub marginal: MarginalSample,
    pub ks: TestReport,
    pub variance: VarianceLinearity,
    /// `slope / (coeff * dim) - 1`.
    pub slope_rel_error: f64,
    pub slope_pass: bool,
    pub intercept_pass: bool,
    /// Between `[0, n t / 2]` and `[n t / 2, n t]`.
    pub increments: IncrementCorrelation,
    pub pass: bool,
}

/// Marginal normality at `n t`, variance growth over
/// [`CLT_GRID_FRACTIONS`] of `n t`, and increment decorrelation, all read
/// from one set of paths.
#[allow(clippy::too_many_arguments)]
pub fn clt_suite(
    params: &ModelParams,
    n: f64,
    t: f64,
    coeff: f64,
    replicas: usize,
    seed: u64,
    alpha: f64,
    pool: &Pool,
) -> Result<CltSuite> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("n must be >= 1 (got {n})")));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("t must lie in (0, 1] (got {t})")));
    }
    check_replicas(replicas)?;
    let times: Vec<f64> = CLT_GRID_FRACTIONS.iter().map(|f| f * n * t).collect();
    let grid = grid_positions(params, &times, replicas, seed, pool)?;
    let last = times.len() - 1;
    let half = CLT_GRID_FRACTIONS
        .iter()
        .position(|f| *f == 0.5)
        .expect("midpoint on grid");
    let finals: Vec<Site> = grid.iter().map(|p| p[last].clone()).collect();
    let marginal = MarginalSample::from_positions(n, t, Some(seed), &finals);
    let ks = clt_test(&marginal, coeff, alpha)?;
    let variance = variance_from_grid(&times, &grid)?;
    let pairs: Vec<Vec<Site>> = grid.iter().map(|p| vec![p[half].clone(), p[last].clone()]).collect();
    let increments = increment_correlation(&pairs)?;
    let slope_rel_error = variance.fit.slope / (coeff * params.dim as f64) - 1.0;
    let slope_pass = slope_rel_error.abs() <= SLOPE_TOLERANCE;
    let intercept_pass = variance.intercept_z.abs() <= INTERCEPT_Z_MAX;
    let pass = ks.pass && slope_pass && intercept_pass && increments.pass;
    Ok(CltSuite {
        coeff,
        marginal,
        ks,
        variance,
        slope_rel_error,
        slope_pass,
        intercept_pass,
        increments,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub horizons: Vec<f64>,
    pub replicas: usize,
    /// Fraction of paths that have been back at the origin by each horizon.
    pub fraction_returned: Vec<f64>,
    /// Mean number of arrivals at the origin by each horizon.
    pub mean_returns: Vec<f64>,
}

/// Returns to the origin, detected as a jump that lands on it, counted up to
/// each of the sorted `horizons` along the same paths.
pub fn recurrence_stats(
    params: &ModelParams,
    horizons: &[f64],
    replicas: usize,
    seed: u64,
    pool: &Pool,
) -> Result<RecurrenceReport> {
    params.validate()?;
    check_times(horizons)?;
    check_replicas(replicas)?;
    let last = horizons.last().copied().unwrap_or(0.0);
    let per_path = pool.map(replicas, |i| {
        let mut rng = rng::stream(rng::replica_seed(seed, i as u64));
        let mut state = WalkerState::new(params.dim);
        let mut counts = vec![0u64; horizons.len()];
        loop {
            let Some(event) = state.step_until(params, &mut rng, last, Default::default()) else {
                break;
            };
            if matches!(event.kind, EventKind::Jump { .. }) && state.position.is_origin() {
                let first = horizons.partition_point(|h| *h < event.time);
                for c in &mut counts[first..] {
                    *c += 1;
                }
            }
        }
        counts
    });
    let r = replicas as f64;
    let fraction_returned = (0..horizons.len())
        .map(|k| per_path.iter().filter(|c| c[k] > 0).count() as f64 / r)
        .collect();
    let mean_returns = (0..horizons.len())
        .map(|k| per_path.iter().map(|c| c[k] as f64).sum::<f64>() / r)
        .collect();
    Ok(RecurrenceReport {
        horizons: horizons.to_vec(),
        replicas,
        fraction_returned,
        mean_returns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Faster,
    Slower,
    Indistinguishable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineComparison {
    /// Coefficient over the free walk's coefficient `lambda`.
    pub ratio: f64,
    pub ratio_ci: [f64; 2],
    pub confidence: f64,
    pub verdict: Verdict,
    /// Absent for `p = 0`, where the ratio is 1 by construction.
    pub estimate: Option<DiffusionEstimate>,
}

/// Compares the diffusion coefficient with that of the same walk without
/// breaking. In several dimensions the trace is compared.
pub fn baseline_compare(
    params: &ModelParams,
    n_cycles: usize,
    seed: u64,
    confidence: f64,
    pool: &Pool,
) -> Result<BaselineComparison> {
    params.validate()?;
    if params.p == 0.0 {
        return Ok(BaselineComparison {
            ratio: 1.0,
            ratio_ci: [1.0, 1.0],
            confidence,
            verdict: Verdict::Indistinguishable,
            estimate: None,
        });
    }
    let collection = regen::collect(params, n_cycles, seed, pool)?;
    let est = regen::estimate(&collection.samples, confidence)?;
    Ok(compare_estimate(params, est))
}

pub fn compare_estimate(params: &ModelParams, est: DiffusionEstimate) -> BaselineComparison {
    let ci = if est.dim == 1 {
        est.coeff_ci[0]
    } else {
        est.coeff_trace_ci
    };
    let ratio_ci = [ci[0] / params.lambda, ci[1] / params.lambda];
    let verdict = if ratio_ci[0] > 1.0 {
        Verdict::Faster
    } else if ratio_ci[1] < 1.0 {
        Verdict::Slower
    } else {
        Verdict::Indistinguishable
    };
    BaselineComparison {
        ratio: est.coefficient() / params.lambda,
        ratio_ci,
        confidence: est.confidence,
        verdict,
        estimate: Some(est),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect()
    }

    #[test]
    fn zero_time_gives_zeros() {
        let params = ModelParams::line(1.0, 0.5, 1.0).unwrap();
        let s = marginal_samples(&params, 100.0, 0.0, 100, 1, &Pool::sequential()).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
        assert!(matches!(clt_test(&s, 1.0, 0.01), Err(Error::Degenerate(_))));
    }

    #[test]
    fn clt_null_and_alternative() {
        let null = MarginalSample::from_values(1.0, 1.0, normals(10_000, 3, 1.0));
        assert!(clt_test(&null, 1.0, 0.01).unwrap().pass);
        let wide = MarginalSample::from_values(1.0, 1.0, normals(10_000, 3, 2.0));
        assert!(!clt_test(&wide, 1.0, 0.01).unwrap().pass);
    }

    #[test]
    fn synthetic_variance_curve_is_exact() {
        let times = [1.0, 2.0, 4.0, 8.0, 16.0];
        let v: Vec<f64> = times.iter().map(|t| 2.0 * t).collect();
        let fit = fit_variance_curve(&times, &v).unwrap();
        assert!((fit.fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.fit.intercept.abs() < 1e-12);
        assert!(fit_variance_curve(&times[..4], &v[..4]).is_err());
        assert!(fit_variance_curve(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 5]).is_err());
    }

    #[test]
    fn grid_does_not_change_paths() {
        let params = ModelParams::line(1.0, 0.5, 1.0).unwrap();
        let pool = Pool::sequential();
        let coarse = grid_positions(&params, &[50.0], 100, 9, &pool).unwrap();
        let fine = grid_positions(&params, &[5.0, 20.0, 50.0], 100, 9, &pool).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            assert_eq!(c[0], f[2]);
        }
    }

    #[test]
    fn recurrence_is_monotone() {
        let params = ModelParams::line(1.0, 0.5, 1.0).unwrap();
        let r = recurrence_stats(&params, &[0.0, 10.0, 100.0], 200, 5, &Pool::sequential()).unwrap();
        assert_eq!(r.fraction_returned[0], 0.0);
        assert!(r.fraction_returned.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.mean_returns.windows(2).all(|w| w[0] <= w[1]));
        assert!(recurrence_stats(&params, &[1.0], 99, 5, &Pool::sequential()).is_err());
    }

    #[test]
    fn baseline_against_itself() {
        let params = ModelParams::line(1.0, 0.0, 1.0).unwrap();
        let c = baseline_compare(&params, 10, 1, 0.99, &Pool::sequential()).unwrap();
        assert_eq!(c.ratio, 1.0);
        assert_eq!(c.verdict, Verdict::Indistinguishable);
    }
}
