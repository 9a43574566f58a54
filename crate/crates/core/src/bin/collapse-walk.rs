//! Command-line entry points. Exit status: 0 when every check passes, 1 on a
//! failed check or invariant violation, 2 on a configuration error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use collapse_walk::config::{self, Check, ConfigLayer, OutFormat, RunConfig, RunManifest};
use collapse_walk::process::{self, StopCondition};
use collapse_walk::regen::{self, DiffusionEstimate};
use collapse_walk::scaling::{self, Verdict};
use collapse_walk::{oracle, queue, rng, Error, ModelParams, Pool};

#[derive(Parser)]
#[command(
    name = "collapse-walk",
    version,
    about = "Collapsing-bond random walk simulator and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory up to --horizon, as an event log.
    Simulate(Common),
    /// Regeneration cycles, estimators and their checks.
    Regen(Common),
    /// Busy cycles of the dominating queue against the closed form.
    Queue(Common),
    /// Coupled walk/queue runs with the pathwise b <= Q check.
    Couple(Common),
    /// Closed forms and exhaustive enumeration of one cycle.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Maximum number of events expanded; the residual mass is reported
        /// when it is reached first.
        #[arg(long, default_value_t = 40)]
        depth: usize,
        #[arg(long, default_value_t = 1e-8)]
        mass_tol: f64,
    },
    /// Normality of X(nt)/sqrt(n), variance growth and increment correlation.
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e4)]
        n: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Per-coordinate coefficient; estimated from cycles when absent.
        #[arg(long)]
        coeff: Option<f64>,
        /// Summary JSON of a previous `regen` run to take the coefficient from.
        #[arg(long)]
        regen_summary: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Returns to the origin across horizons, against the free walk.
    Recur {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        horizons: Vec<f64>,
    },
    /// Diffusion coefficient relative to the free walk.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regen_summary: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Jump attempt rate [default: 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Probability that a traversed bond breaks [default: 1]
    #[arg(long = "p")]
    p: Option<f64>,
    /// Repair rate of a broken bond [default: 1]
    #[arg(long)]
    mu: Option<f64>,
    /// Lattice dimension [default: 1]
    #[arg(long)]
    dim: Option<usize>,
    /// Master seed [default: $COLLAPSE_WALK_SEED, else 1729]
    #[arg(long)]
    seed: Option<u64>,
    /// Independent trajectories [default: 1000]
    #[arg(long)]
    replicas: Option<usize>,
    /// Regeneration or busy cycles [default: 100000]
    #[arg(long)]
    cycles: Option<usize>,
    /// Simulated time per trajectory [default: 100]
    #[arg(long)]
    horizon: Option<f64>,
    /// Worker threads; results do not depend on it [default: 1]
    #[arg(long)]
    workers: Option<usize>,
    /// Confidence level of reported intervals [default: 0.99]
    #[arg(long)]
    confidence: Option<f64>,
    /// Output file (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format; csv also writes <out>.summary.json [default: csv]
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// JSON file with RunConfig fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record wall time in the manifest (makes output time-dependent).
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            lambda: self.lambda,
            p: self.p,
            mu: self.mu,
            dim: self.dim,
            seed: self.seed,
            replicas: self.replicas,
            horizon: self.horizon,
            cycles: self.cycles,
            out_format: self.format,
            out_path: self.out.clone(),
            workers: self.workers,
            confidence: self.confidence,
        }
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let file = self.config.as_deref().map(ConfigLayer::from_file).transpose()?;
        let env = std::env::var(config::SEED_ENV).ok();
        Ok(RunConfig::resolve(file.as_ref(), &self.layer(), env.as_deref())?)
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_) | Error::InvalidArgument(_) | Error::TooFewSamples { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o error: {e}"))
    }
}

/// What a command produced.
struct Output {
    manifest: RunManifest,
    report: Value,
    /// CSV table, when the command has one.
    table: Option<Vec<u8>>,
}

fn csv(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn pool(cfg: &RunConfig) -> Result<Pool, Failure> {
    Ok(Pool::new(cfg.workers)?)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Output, Failure> {
    let params = cfg.params()?;
    let traj = process::simulate(&params, cfg.seed, StopCondition::Horizon(cfg.horizon))?;
    let mut manifest = RunManifest::new("simulate", cfg);
    let state = &traj.final_state;
    manifest.check(Check::new(
        "l1_norm_le_attempts",
        state.position.l1_norm() <= state.attempts,
        [state.position.l1_norm(), state.attempts],
    ));
    let report = json!({
        "event_count": traj.event_count,
        "final_position": state.position.coords(),
        "final_clock": state.clock,
        "broken_count": state.broken_count(),
        "attempts": state.attempts,
    });
    Ok(Output {
        manifest,
        report,
        table: Some(csv(|b| traj.write_csv(b))?),
    })
}

fn cmd_regen(cfg: &RunConfig) -> Result<Output, Failure> {
    let params = cfg.params()?;
    params.require_breaks()?;
    let collection = regen::collect(&params, cfg.cycles, cfg.seed, &pool(cfg)?)?;
    let samples = &collection.samples;
    let est = regen::estimate(samples, cfg.confidence)?;
    let bounds = regen::check_bounds(&est, samples, &params);
    let zero = regen::mean_increment_zero_test(samples, cfg.confidence)?;
    let diag = (samples.len() >= 100)
        .then(|| regen::iid_diagnostics(samples))
        .transpose()?;
    let zeta = regen::zeta_summary(&collection.zetas).ok();

    let mut manifest = RunManifest::new("regen", cfg);
    manifest.add_violations(collection.truncated as u64);
    for b in &bounds.checks {
        manifest.check(Check::new(b.name, !b.violated, b));
    }
    manifest.check(Check::new("mean_increment_zero", zero.pass, &zero));
    if let Some(d) = &diag {
        manifest.check(Check::new("iid_diagnostics", d.pass, d));
    }
    let report = json!({
        "estimate": est,
        "bounds": bounds,
        "zero_mean": zero,
        "diagnostics": diag,
        "zeta": zeta,
        "truncated": collection.truncated,
    });
    Ok(Output {
        manifest,
        report,
        table: Some(csv(|b| regen::write_csv(samples, b))?),
    })
}

fn cmd_queue(cfg: &RunConfig) -> Result<Output, Failure> {
    let params = cfg.params()?;
    params.require_breaks()?;
    let arrival = params.break_rate();
    let cycles = queue::busy_cycles(arrival, params.mu, cfg.cycles, cfg.seed, &pool(cfg)?)?;
    let est = queue::busy_cycle_summary(&cycles, arrival, params.mu);
    let mut manifest = RunManifest::new("queue", cfg);
    manifest.check(Check::new(
        "busy_cycle_mean_within_3se",
        est.z_score.abs() <= 3.0,
        est.z_score,
    ));
    let table = csv(|b| {
        writeln!(b, "cycle_index,idle,busy")?;
        for (i, (idle, busy)) in cycles.iter().enumerate() {
            writeln!(b, "{i},{idle},{busy}")?;
        }
        Ok(())
    })?;
    Ok(Output {
        manifest,
        report: json!({ "busy_cycle": est }),
        table: Some(table),
    })
}

fn cmd_couple(cfg: &RunConfig) -> Result<Output, Failure> {
    let params = cfg.params()?;
    params.require_breaks()?;
    let summary = queue::coupling_batch(&params, cfg.replicas, cfg.seed, cfg.horizon, &pool(cfg)?)?;
    let mut manifest = RunManifest::new("couple", cfg);
    manifest.add_violations(summary.violations as u64);
    manifest.check(Check::new(
        "b_le_q_every_event",
        summary.violations == 0,
        summary.violations,
    ));
    let (table, walk_cycles) = match queue::coupled_run(&params, rng::replica_seed(cfg.seed, 0), cfg.horizon) {
        Ok(rec) => (Some(csv(|b| rec.write_csv(b))?), rec.walk_cycle_durations()),
        Err(Error::CouplingViolation { .. }) => (None, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "coupling": summary,
        "violations": summary.violations,
        "queue_cycle_bound": params.queue_cycle_mean(),
        "replica0_walk_cycles": walk_cycles.len(),
        "replica0_walk_cycle_mean": (!walk_cycles.is_empty())
            .then(|| walk_cycles.iter().sum::<f64>() / walk_cycles.len() as f64),
    });
    Ok(Output {
        manifest,
        report,
        table,
    })
}

fn cmd_oracle(cfg: &RunConfig, depth: usize, mass_tol: f64) -> Result<Output, Failure> {
    let params = cfg.params()?;
    let forms = oracle::zeta_closed_forms(params.lambda, params.mu)?;
    let enclosure = oracle::enumerate_cycle(&params, depth, mass_tol)?;
    let mut manifest = RunManifest::new("oracle", cfg);
    let identity = forms.e_x_zeta_sq - params.lambda * forms.e_zeta;
    manifest.check(Check::new(
        "gap_identity",
        (identity - forms.gap).abs() < 1e-12,
        [identity, forms.gap],
    ));
    let total = enclosure.alpha.absorbed_mass + enclosure.alpha.residual_mass;
    manifest.check(Check::new("mass_conservation", (total - 1.0).abs() < 1e-12, total));
    let report = json!({
        "alpha": enclosure.alpha,
        "x2": enclosure.x2,
        "converged": enclosure.converged,
        "peak_states": enclosure.peak_states,
        "zeta_forms": forms,
    });
    Ok(Output {
        manifest,
        report,
        table: None,
    })
}

/// Reads the estimate and `lambda` out of a `regen` summary file.
fn read_regen_summary(path: &std::path::Path) -> Result<(DiffusionEstimate, ModelParams), Failure> {
    let bad = |m: String| Failure::Config(format!("bad regen summary {}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let est: DiffusionEstimate =
        serde_json::from_value(v["report"]["estimate"].clone()).map_err(|e| bad(e.to_string()))?;
    let c = &v["manifest"]["config"];
    let field = |k: &str| c[k].as_f64().ok_or_else(|| bad(format!("missing config.{k}")));
    let params = ModelParams::new(field("lambda")?, field("p")?, field("mu")?, est.dim)?;
    Ok((est, params))
}

fn fresh_estimate(params: &ModelParams, cfg: &RunConfig, pool: &Pool) -> Result<DiffusionEstimate, Failure> {
    let seed = rng::derived_seed(cfg.seed, "coefficient");
    let collection = regen::collect(params, cfg.cycles, seed, pool)?;
    Ok(regen::estimate(&collection.samples, cfg.confidence)?)
}

fn cmd_clt(
    cfg: &RunConfig,
    n: f64,
    t: f64,
    coeff: Option<f64>,
    summary: Option<&std::path::Path>,
    alpha: f64,
) -> Result<Output, Failure> {
    let params = cfg.params()?;
    let pool = pool(cfg)?;
    let d = params.dim as f64;
    let (coeff, source) = match (coeff, summary) {
        (Some(c), _) => (c, "flag"),
        (None, Some(path)) => (read_regen_summary(path)?.0.coeff_trace / d, "regen_summary"),
        (None, None) if params.p == 0.0 => (params.lambda / d, "free_walk"),
        (None, None) => (fresh_estimate(&params, cfg, &pool)?.coeff_trace / d, "cycles"),
    };
    let suite = scaling::clt_suite(&params, n, t, coeff, cfg.replicas, cfg.seed, alpha, &pool)?;
    let mut manifest = RunManifest::new("clt", cfg);
    manifest.check(Check::new("ks_standard_normal", suite.ks.pass, &suite.ks));
    manifest.check(Check::new(
        "variance_slope_within_5pct",
        suite.slope_pass,
        suite.slope_rel_error,
    ));
    manifest.check(Check::new(
        "variance_intercept_within_4se",
        suite.intercept_pass,
        suite.variance.intercept_z,
    ));
    manifest.check(Check::new(
        "increments_uncorrelated",
        suite.increments.pass,
        &suite.increments,
    ));
    let table = csv(|b| suite.marginal.write_csv(b))?;
    Ok(Output {
        manifest,
        report: json!({ "coeff_source": source, "n": n, "t": t, "suite": suite }),
        table: Some(table),
    })
}

fn cmd_recur(cfg: &RunConfig, horizons: &[f64]) -> Result<Output, Failure> {
    let params = cfg.params()?;
    if horizons.is_empty() {
        return Err(Failure::Config("at least one horizon is required".into()));
    }
    let pool = pool(cfg)?;
    let walk = scaling::recurrence_stats(&params, horizons, cfg.replicas, cfg.seed, &pool)?;
    let base = scaling::recurrence_stats(&params.baseline(), &horizons[..1], cfg.replicas, cfg.seed, &pool)?;
    let mut manifest = RunManifest::new("recur", cfg);
    let monotone = walk.fraction_returned.windows(2).all(|w| w[0] <= w[1]);
    manifest.check(Check::new("fraction_nondecreasing", monotone, &walk.fraction_returned));
    let last = *walk.fraction_returned.last().expect("nonempty");
    let floor = base.fraction_returned[0];
    manifest.check(Check::new("meets_free_walk_baseline", last >= floor, [last, floor]));
    Ok(Output {
        manifest,
        report: json!({ "walk": walk, "baseline": base }),
        table: None,
    })
}

fn cmd_compare(cfg: &RunConfig, summary: Option<&std::path::Path>) -> Result<Output, Failure> {
    let mut params = cfg.params()?;
    let comparison = match summary {
        Some(path) => {
            let (est, from_file) = read_regen_summary(path)?;
            params = from_file;
            scaling::compare_estimate(&params, est)
        }
        None => scaling::baseline_compare(&params, cfg.cycles, cfg.seed, cfg.confidence, &pool(cfg)?)?,
    };
    let manifest = RunManifest::new("compare", cfg);
    let report = json!({
        "ratio": comparison.ratio,
        "ratio_ci": comparison.ratio_ci,
        "faster": comparison.verdict == Verdict::Faster,
        "comparison": comparison,
    });
    Ok(Output {
        manifest,
        report,
        table: None,
    })
}

fn emit(cfg: &RunConfig, out: Output) -> Result<bool, Failure> {
    let pass = out.manifest.pass;
    let mut summary = serde_json::to_vec_pretty(&json!({ "manifest": out.manifest, "report": out.report }))
        .expect("summary serializes");
    summary.push(b'\n');
    match (cfg.out_format, out.table, &cfg.out_path) {
        (OutFormat::Csv, Some(table), Some(path)) => {
            config::write_atomic(path, &table)?;
            config::write_atomic(&config::summary_path(path), &summary)?;
        }
        (OutFormat::Csv, Some(table), None) => {
            std::io::stdout().write_all(&table)?;
            std::io::stderr().write_all(&summary)?;
        }
        (_, _, Some(path)) => config::write_atomic(path, &summary)?,
        (_, _, None) => std::io::stdout().write_all(&summary)?,
    }
    Ok(pass)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Regen(c) | Command::Queue(c) | Command::Couple(c) => c,
        Command::Oracle { common, .. }
        | Command::Clt { common, .. }
        | Command::Recur { common, .. }
        | Command::Compare { common, .. } => common,
    };
    let cfg = common.resolve()?;
    let started = Instant::now();
    let mut out = match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Regen(_) => cmd_regen(&cfg),
        Command::Queue(_) => cmd_queue(&cfg),
        Command::Couple(_) => cmd_couple(&cfg),
        Command::Oracle { depth, mass_tol, .. } => cmd_oracle(&cfg, *depth, *mass_tol),
        Command::Clt {
            n,
            t,
            coeff,
            regen_summary,
            alpha,
            ..
        } => cmd_clt(&cfg, *n, *t, *coeff, regen_summary.as_deref(), *alpha),
        Command::Recur { horizons, .. } => cmd_recur(&cfg, horizons),
        Command::Compare { regen_summary, .. } => cmd_compare(&cfg, regen_summary.as_deref()),
    }?;
    if common.timing {
        out.manifest.wall_time_s = Some(started.elapsed().as_secs_f64());
    }
    emit(&cfg, out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("collapse-walk: one or more checks failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("collapse-walk: invalid configuration: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("collapse-walk: {m}");
            ExitCode::from(1)
        }
    }
}
