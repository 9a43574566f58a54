//! Run configuration, manifests and output plumbing shared by the CLI.
//!
//! A configuration is resolved from, in decreasing priority: command-line
//! flags, a JSON config file using the field names of [`RunConfig`], the
//! `COLLAPSE_WALK_SEED` environment variable (seed only), and built-in
//! defaults.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Master seed used when none is supplied anywhere.
pub const DEFAULT_SEED: u64 = 1729;
pub const SEED_ENV: &str = "COLLAPSE_WALK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub lambda: f64,
    pub p: f64,
    pub mu: f64,
    pub dim: usize,
    pub seed: u64,
    pub replicas: usize,
    pub horizon: f64,
    pub cycles: usize,
    pub out_format: OutFormat,
    /// Where results go; never part of the results themselves.
    #[serde(skip)]
    pub out_path: Option<PathBuf>,
    /// Worker threads; results do not depend on it, so it is not echoed.
    #[serde(skip)]
    pub workers: usize,
    pub confidence: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            p: 1.0,
            mu: 1.0,
            dim: 1,
            seed: DEFAULT_SEED,
            replicas: 1000,
            horizon: 100.0,
            cycles: 100_000,
            out_format: OutFormat::Csv,
            out_path: None,
            workers: 1,
            confidence: 0.99,
        }
    }
}

/// Partial configuration: the contents of a config file, or the flags given
/// on the command line.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub lambda: Option<f64>,
    pub p: Option<f64>,
    pub mu: Option<f64>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub horizon: Option<f64>,
    pub cycles: Option<usize>,
    pub out_format: Option<OutFormat>,
    pub out_path: Option<PathBuf>,
    pub workers: Option<usize>,
    pub confidence: Option<f64>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("bad config {}: {e}", path.display())))
    }

    fn apply(&self, c: &mut RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    c.$f = v;
                }
            )*};
        }
        take!(lambda, p, mu, dim, seed, replicas, horizon, cycles, out_format, workers, confidence);
        if self.out_path.is_some() {
            c.out_path.clone_from(&self.out_path);
        }
    }
}

impl RunConfig {
    /// Merges `flags` over `file` over the environment seed over defaults,
    /// then validates.
    pub fn resolve(file: Option<&ConfigLayer>, flags: &ConfigLayer, env_seed: Option<&str>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(s) = env_seed {
            c.seed = s.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{SEED_ENV} must be an unsigned 64-bit integer (got {s:?})"))
            })?;
        }
        if let Some(f) = file {
            f.apply(&mut c);
        }
        flags.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence must lie in (0, 1) (got {})",
                self.confidence
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be finite and >= 0 (got {})",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.lambda, self.p, self.mu, self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: serde_json::Value,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Serialize) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: serde_json::to_value(detail).unwrap_or(serde_json::Value::Null),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub master: u64,
    /// Replacement seeds used for any check; empty unless documented.
    pub alternates: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    /// Only filled when timing is requested, since it breaks byte equality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub checks: Vec<Check>,
    pub seeds: Seeds,
    pub invariant_violations: u64,
    pub pass: bool,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config: config.clone(),
            wall_time_s: None,
            checks: Vec::new(),
            seeds: Seeds {
                master: config.seed,
                alternates: Vec::new(),
            },
            invariant_violations: 0,
            pass: true,
        }
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
        self.refresh();
    }

    pub fn add_violations(&mut self, n: u64) {
        self.invariant_violations += n;
        self.refresh();
    }

    fn refresh(&mut self) {
        self.pass = self.invariant_violations == 0 && self.checks.iter().all(|c| c.pass);
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `<out>.summary.json`
pub fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}
