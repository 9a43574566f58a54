//! Acceptance suite: every criterion at its stated size and tolerance, one
//! PASS/FAIL line each. Statistical criteria run at the pinned seed first;
//! on failure they are re-run once at a single alternate seed fixed in
//! advance, and both outcomes are printed and written to the manifest.
//! Thresholds are never adjusted.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use collapse_walk::config::DEFAULT_SEED;
use collapse_walk::oracle::enumerate_cycle;
use collapse_walk::queue::{busy_cycle_mean, coupling_batch};
use collapse_walk::regen::{self, Collection, BOUND_ABS_DISPLACEMENT, BOUND_DISPLACED};
use collapse_walk::scaling::{clt_suite, recurrence_stats};
use collapse_walk::{rng, ModelParams, Pool};
use serde_json::{json, Value};

const ACCEPTANCE_SEED: u64 = DEFAULT_SEED;
const ALTERNATE_LABEL: &str = "alternate-1";
const CONFIDENCE: f64 = 0.99;
const E: f64 = std::f64::consts::E;

fn alternate_seed() -> u64 {
    rng::derived_seed(ACCEPTANCE_SEED, ALTERNATE_LABEL)
}

struct Outcome {
    pass: bool,
    detail: Value,
}

impl Outcome {
    fn new(pass: bool, detail: Value) -> Self {
        Self { pass, detail }
    }
}

/// Cycle collections shared between criteria, keyed by parameters and seed.
struct Cycles {
    pool: Pool,
    cache: HashMap<String, Collection>,
}

impl Cycles {
    fn get(&mut self, params: &ModelParams, n: usize, seed: u64) -> &Collection {
        let key = format!("{},{},{},{}@{seed}/{n}", params.lambda, params.p, params.mu, params.dim);
        let pool = &self.pool;
        self.cache
            .entry(key)
            .or_insert_with(|| regen::collect(params, n, seed, pool).expect("collect"))
    }
}

fn line(lambda: f64, p: f64, mu: f64) -> ModelParams {
    ModelParams::line(lambda, p, mu).unwrap()
}

fn within_se(estimate: f64, target: f64, se: f64, k: f64) -> bool {
    (estimate - target).abs() <= k * se
}

fn budget(elapsed: Duration, limit_s: f64) -> Value {
    json!({ "elapsed_s": (elapsed.as_secs_f64() * 100.0).round() / 100.0, "limit_s": limit_s })
}

fn c1_coupling(pool: &Pool) -> Outcome {
    let start = Instant::now();
    let s = coupling_batch(&line(1.0, 0.5, 1.0), 10_000, ACCEPTANCE_SEED, 100.0, pool).unwrap();
    let elapsed = start.elapsed();
    let pass = s.violations == 0 && s.runs == 10_000 && elapsed.as_secs_f64() < 60.0;
    Outcome::new(pass, json!({ "summary": s, "runtime": budget(elapsed, 60.0) }))
}

fn c2_busy_cycles(seed: u64, pool: &Pool) -> Outcome {
    let start = Instant::now();
    let a = busy_cycle_mean(1.0, 1.0, 100_000, seed, pool).unwrap();
    let b = busy_cycle_mean(2.0, 1.0, 100_000, seed, pool).unwrap();
    let elapsed = start.elapsed();
    let pass =
        within_se(a.mean, E, a.se, 3.0) && within_se(b.mean, E * E / 2.0, b.se, 3.0) && elapsed.as_secs_f64() < 60.0;
    Outcome::new(
        pass,
        json!({ "rate_1": a, "rate_2": b, "runtime": budget(elapsed, 60.0) }),
    )
}

fn c3_regeneration_bound(seed: u64, cycles: &mut Cycles) -> Outcome {
    let params = line(1.0, 1.0, 1.0);
    let c = cycles.get(&params, 100_000, seed);
    let est = regen::estimate(&c.samples, CONFIDENCE).unwrap();
    let bounds = regen::check_bounds(&est, &c.samples, &params);
    let abs = bounds.get(BOUND_ABS_DISPLACEMENT).unwrap();
    let upper = est.alpha_hat + 3.0 * est.se_alpha;
    let pass = c.truncated == 0 && upper <= E && !abs.violated;
    Outcome::new(
        pass,
        json!({
            "alpha_hat": est.alpha_hat, "se_alpha": est.se_alpha, "alpha_plus_3se": upper,
            "bound": E, "abs_displacement": abs, "truncated": c.truncated,
        }),
    )
}

fn c4_zeta(seed: u64, cycles: &mut Cycles) -> Outcome {
    let start = Instant::now();
    let c = cycles.get(&line(1.0, 1.0, 10.0), 1_000_000, seed);
    let z = regen::zeta_summary(&c.zetas).unwrap();
    let elapsed = start.elapsed();
    let pass = c.truncated == 0
        && within_se(z.mean_sq_displacement, 14.0 / 11.0, z.se_sq_displacement, 3.0)
        && within_se(z.mean_time, 12.0 / 11.0, z.se_time, 3.0)
        && elapsed.as_secs_f64() < 120.0;
    Outcome::new(
        pass,
        json!({ "zeta": z, "truncated": c.truncated, "runtime": budget(elapsed, 120.0) }),
    )
}

fn c5_positivity(seed: u64, cycles: &mut Cycles) -> Outcome {
    let params = line(1.0, 1.0, 9.0);
    let c = cycles.get(&params, 1_000_000, seed);
    let est = regen::estimate(&c.samples, CONFIDENCE).unwrap();
    let displaced = regen::check_bounds(&est, &c.samples, &params)
        .get(BOUND_DISPLACED)
        .unwrap()
        .clone();
    let pass = c.truncated == 0 && displaced.estimate >= 0.9 - 3.0 * displaced.se;
    Outcome::new(pass, json!({ "displaced": displaced, "truncated": c.truncated }))
}

fn c6_oracle(seed: u64, cycles: &mut Cycles) -> Outcome {
    let params = line(1.0, 1.0, 5.0);
    let start = Instant::now();
    let oracle = enumerate_cycle(&params, 400, 1e-8).unwrap();
    let c = cycles.get(&params, 1_000_000, seed);
    let est = regen::estimate(&c.samples, CONFIDENCE).unwrap();
    let elapsed = start.elapsed();
    // Absorbed values are lower bounds; the unexpanded paths can add at most
    // the tail bound.
    let agrees = |mc: f64, se: f64, e: &collapse_walk::oracle::Enclosure| {
        mc >= e.lower() - 3.0 * se && mc <= e.upper() + 3.0 * se
    };
    let alpha_ok = agrees(est.alpha_hat, est.se_alpha, &oracle.alpha);
    let x2_ok = agrees(est.mean_sq_dx, est.se_mean_sq_dx, &oracle.x2);
    let pass =
        oracle.alpha.residual_mass <= 1e-8 && c.truncated == 0 && alpha_ok && x2_ok && elapsed.as_secs_f64() < 300.0;
    Outcome::new(
        pass,
        json!({
            "oracle": oracle,
            "alpha_hat": est.alpha_hat, "se_alpha": est.se_alpha, "alpha_ok": alpha_ok,
            "mean_sq_dx": est.mean_sq_dx, "se_mean_sq_dx": est.se_mean_sq_dx, "x2_ok": x2_ok,
            "truncated": c.truncated, "runtime": budget(elapsed, 300.0),
        }),
    )
}

fn c7_enhanced(seed: u64, cycles: &mut Cycles) -> Outcome {
    let c = cycles.get(&line(1.0, 1.0, 20.0), 1_000_000, seed);
    let est = regen::estimate(&c.samples, CONFIDENCE).unwrap();
    let pass = c.truncated == 0 && est.coeff_ci[0][0] > 1.0;
    Outcome::new(
        pass,
        json!({ "coeff": est.coeff[0], "coeff_ci": est.coeff_ci[0], "confidence": CONFIDENCE, "truncated": c.truncated }),
    )
}

fn c8_clt(seed: u64, cycles: &mut Cycles) -> Outcome {
    let params = line(1.0, 0.5, 1.0);
    let start = Instant::now();
    let c = cycles.get(&params, 1_000_000, rng::derived_seed(seed, "coefficient"));
    let truncated = c.truncated;
    let coeff = regen::estimate(&c.samples, CONFIDENCE).unwrap().coefficient();
    let suite = clt_suite(&params, 1e4, 1.0, coeff, 10_000, seed, 0.01, &cycles.pool).unwrap();
    let elapsed = start.elapsed();
    let pass = truncated == 0 && suite.ks.pass && suite.slope_pass && elapsed.as_secs_f64() < 600.0;
    Outcome::new(
        pass,
        json!({
            "coeff": coeff, "ks": suite.ks, "slope": suite.variance.fit.slope,
            "slope_rel_error": suite.slope_rel_error, "slope_pass": suite.slope_pass,
            "intercept_pass": suite.intercept_pass, "increments_pass": suite.increments.pass,
            "truncated": truncated, "runtime": budget(elapsed, 600.0),
        }),
    )
}

/// Every walk parameter point used above, with the cycle count used there.
const POINTS: [(f64, f64, f64, usize); 6] = [
    (1.0, 1.0, 1.0, 100_000),
    (1.0, 1.0, 10.0, 1_000_000),
    (1.0, 1.0, 9.0, 1_000_000),
    (1.0, 1.0, 5.0, 1_000_000),
    (1.0, 1.0, 20.0, 1_000_000),
    (1.0, 0.5, 1.0, 1_000_000),
];

fn c9_zero_mean(seed: u64, cycles: &mut Cycles) -> Outcome {
    let mut pass = true;
    let mut points = Vec::new();
    for (l, p, m, n) in POINTS {
        let params = line(l, p, m);
        // The CLT point's cycles were drawn from its coefficient seed.
        let s = if p < 1.0 {
            rng::derived_seed(seed, "coefficient")
        } else {
            seed
        };
        let c = cycles.get(&params, n, s);
        let r = regen::mean_increment_zero_test(&c.samples, CONFIDENCE).unwrap();
        pass &= r.pass && c.truncated == 0;
        points.push(
            json!({ "params": [l, p, m], "n": r.n, "mean": r.means[0], "interval": r.intervals[0], "pass": r.pass }),
        );
    }
    Outcome::new(pass, json!({ "points": points }))
}

fn c10_recurrence(seed: u64, pool: &Pool) -> Outcome {
    let params = line(1.0, 0.5, 1.0);
    let r = recurrence_stats(&params, &[1e2, 1e3, 1e4], 10_000, seed, pool).unwrap();
    let base = recurrence_stats(&params.baseline(), &[1e2], 10_000, seed, pool).unwrap();
    let f = &r.fraction_returned;
    let monotone = f.windows(2).all(|w| w[0] <= w[1]);
    let baseline = base.fraction_returned[0];
    let pass = monotone && f[2] >= baseline;
    Outcome::new(
        pass,
        json!({ "report": r, "baseline_at_1e2": baseline, "monotone": monotone }),
    )
}

/// Output file plus the summary sidecar, if any.
fn run_cli(args: &[&str], workers: &str, dir: &Path, tag: &str) -> (Option<i32>, Vec<Vec<u8>>) {
    let out: PathBuf = dir.join(format!("{tag}.out"));
    let o = Command::new(env!("CARGO_BIN_EXE_collapse-walk"))
        .args(args)
        .args(["--workers", workers, "--out", out.to_str().unwrap()])
        .env_remove("COLLAPSE_WALK_SEED")
        .output()
        .expect("spawn CLI");
    let mut files = vec![std::fs::read(&out).unwrap_or_default()];
    if let Ok(b) = std::fs::read(collapse_walk::config::summary_path(&out)) {
        files.push(b);
    }
    (o.status.code(), files)
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let regen_summary = dir.path().join("regen.json");
    let summary = regen_summary.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--p", "0.5", "--horizon", "200"],
        vec!["regen", "--p", "0.5", "--cycles", "50000"],
        vec!["regen", "--p", "0.5", "--cycles", "50000", "--format", "json"],
        vec!["queue", "--p", "0.5", "--cycles", "50000"],
        vec!["couple", "--p", "0.5", "--replicas", "500", "--horizon", "100"],
        vec!["oracle", "--mu", "5"],
        vec![
            "clt",
            "--p",
            "0.5",
            "--n",
            "1000",
            "--replicas",
            "500",
            "--cycles",
            "50000",
        ],
        vec!["recur", "--p", "0.5", "--replicas", "200", "--horizons", "10,100,1000"],
        vec!["compare", "--mu", "20", "--cycles", "50000"],
        vec!["compare", "--mu", "20", "--regen-summary", summary],
    ];
    // The summary read by the last command.
    let o = Command::new(env!("CARGO_BIN_EXE_collapse-walk"))
        .args([
            "regen", "--mu", "20", "--cycles", "50000", "--format", "json", "--out", summary,
        ])
        .output()
        .unwrap();
    assert!(
        o.status.code().is_some_and(|c| c <= 1),
        "regen summary: {}",
        String::from_utf8_lossy(&o.stderr)
    );

    let mut pass = true;
    let mut results = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let runs: Vec<_> = ["1", "8", "1"]
            .iter()
            .enumerate()
            .map(|(k, w)| run_cli(args, w, dir.path(), &format!("c{i}-{k}")))
            .collect();
        let ran = runs
            .iter()
            .all(|(code, files)| matches!(code, Some(0 | 1)) && !files[0].is_empty());
        let identical = runs.windows(2).all(|w| w[0] == w[1]);
        pass &= ran && identical;
        results.push(json!({ "args": args.join(" "), "exit": runs[0].0, "identical": identical, "ran": ran }));
    }
    Outcome::new(pass, json!({ "commands": results, "workers": [1, 8, 1] }))
}

struct Report {
    all_pass: bool,
    rows: Vec<Value>,
}

impl Report {
    fn print(&mut self, id: &str, name: &str, pass: bool, note: &str, detail: Value) {
        println!("[{}] {id} {name}{note}", if pass { "PASS" } else { "FAIL" });
        self.all_pass &= pass;
        self.rows
            .push(json!({ "id": id, "name": name, "pass": pass, "detail": detail }));
    }

    fn fixed(&mut self, id: &str, name: &str, o: Outcome) {
        self.print(
            id,
            name,
            o.pass,
            "",
            json!({ "seed": ACCEPTANCE_SEED, "result": o.detail }),
        );
    }

    /// Pinned seed first, then the one alternate.
    fn statistical(&mut self, id: &str, name: &str, mut run: impl FnMut(u64) -> Outcome) {
        let primary = run(ACCEPTANCE_SEED);
        if primary.pass {
            let detail = json!({ "seed": ACCEPTANCE_SEED, "result": primary.detail });
            return self.print(id, name, true, "", detail);
        }
        let alt = alternate_seed();
        let second = run(alt);
        let note = format!(
            " (seed {ACCEPTANCE_SEED} failed; alternate seed {alt} {})",
            if second.pass { "passed" } else { "failed" }
        );
        let detail = json!({
            "seed": ACCEPTANCE_SEED, "result": primary.detail,
            "alternate": { "seed": alt, "label": ALTERNATE_LABEL, "pass": second.pass, "result": second.detail },
        });
        self.print(id, name, second.pass, &note, detail);
    }
}

fn main() -> ExitCode {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pool = Pool::new(workers).unwrap();
    let mut cycles = Cycles {
        pool: Pool::new(workers).unwrap(),
        cache: HashMap::new(),
    };
    let mut report = Report {
        all_pass: true,
        rows: Vec::new(),
    };
    println!(
        "acceptance: seed {ACCEPTANCE_SEED}, alternate {}, {workers} worker(s)",
        alternate_seed()
    );

    report.fixed("1", "coupling invariant b <= Q over 1e4 runs", c1_coupling(&pool));
    report.statistical("2", "busy-cycle mean within 3 SE of closed form", |s| {
        c2_busy_cycles(s, &pool)
    });
    report.statistical("3", "cycle mean + 3 SE <= e and E|dX| <= lambda alpha", |s| {
        c3_regeneration_bound(s, &mut cycles)
    });
    report.statistical("4", "first-break moments within 3 SE of 14/11 and 12/11", |s| {
        c4_zeta(s, &mut cycles)
    });
    report.statistical("5", "P(|dX| >= 1) >= 0.9 - 3 SE at mu = 9", |s| {
        c5_positivity(s, &mut cycles)
    });
    report.statistical("6", "Monte Carlo cycle moments inside the oracle enclosure", |s| {
        c6_oracle(s, &mut cycles)
    });
    report.statistical("7", "99% CI for the coefficient above 1 at mu = 20", |s| {
        c7_enhanced(s, &mut cycles)
    });
    report.statistical("8", "standardized marginal KS and variance slope at n = 1e4", |s| {
        c8_clt(s, &mut cycles)
    });
    report.statistical("9", "99% CI for mean dX contains 0 at every point", |s| {
        c9_zero_mean(s, &mut cycles)
    });
    report.statistical(
        "10",
        "return fraction nondecreasing and above free-walk baseline",
        |s| c10_recurrence(s, &pool),
    );
    report.fixed("11", "CLI outputs byte-identical at 1, 8, 1 workers", c11_determinism());

    let manifest = json!({
        "suite": "acceptance",
        "seeds": { "master": ACCEPTANCE_SEED, "alternate": { "label": ALTERNATE_LABEL, "seed": alternate_seed() } },
        "workers": workers,
        "criteria": report.rows,
        "pass": report.all_pass,
    });
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_manifest.json");
    collapse_walk::config::write_atomic(&path, serde_json::to_string_pretty(&manifest).unwrap().as_bytes()).unwrap();
    println!("manifest: {}", path.display());
    if report.all_pass {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
