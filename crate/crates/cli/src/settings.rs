//! Global flags and their resolution: command line, then `--config`, then defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde_json::Value;
use torusgff_core::io::{read_config, ReportFormat};
use torusgff_core::{Error, Result};

pub const THREADS_ENV: &str = "TORUSGFF_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Massive,
    ZeroAvg,
    Dirichlet,
    Zd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Massive,
    ZeroAvg,
    Spherical,
    Spin,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// Lattice dimension d.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Torus side n; a comma-separated list for `verify`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub side: Option<Vec<usize>>,
    /// Inverse temperature β.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Squared mass m².
    #[arg(long, global = true)]
    pub mass: Option<f64>,
    /// Spin dimension N; a comma-separated list for `verify`.
    #[arg(long = "spin-n", global = true, value_delimiter = ',')]
    pub spin_n: Option<Vec<usize>>,
    /// Components kept per site (GFF components, or projected spin coordinates).
    #[arg(long, global = true)]
    pub components: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Independent chains, or independent draws for exact samplers.
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// Sweeps per chain.
    #[arg(long, global = true)]
    pub sweeps: Option<u64>,
    /// Burn-in sweeps discarded per chain.
    #[arg(long, global = true)]
    pub burnin: Option<u64>,
    /// Independent samples for experiments with exact samplers.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Output file (`spectrum`, `green`) or directory (`sample`, `verify`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; falls back to TORUSGFF_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// File of key=value lines; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Keys accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "dim",
    "side",
    "beta",
    "mass",
    "spin-n",
    "components",
    "seed",
    "chains",
    "sweeps",
    "burnin",
    "samples",
    "out",
    "format",
    "threads",
    "kind",
    "model",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value '{raw}' for '{key}'")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub fn parse_enum<T: ValueEnum>(key: &str, raw: &str) -> Result<T> {
    T::from_str(raw, false).map_err(|_| Error::Config(format!("invalid value '{raw}' for '{key}'")))
}

fn fill<T>(
    slot: &mut Option<T>,
    cfg: &BTreeMap<String, String>,
    key: &str,
    parse: impl Fn(&str, &str) -> Result<T>,
) -> Result<()> {
    if slot.is_none() {
        if let Some(raw) = cfg.get(key) {
            *slot = Some(parse(key, raw)?);
        }
    }
    Ok(())
}

/// Subcommand options that may also come from the config file.
#[derive(Debug, Clone, Default)]
pub struct Extra {
    pub kind: Option<Kind>,
    pub model: Option<Model>,
}

impl Global {
    /// Fills unset flags from `--config`.
    pub fn resolve(mut self, extra: &mut Extra) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let cfg = read_config(&path, CONFIG_KEYS)?;
        fill(&mut self.dim, &cfg, "dim", parse_value)?;
        fill(&mut self.side, &cfg, "side", parse_list)?;
        fill(&mut self.beta, &cfg, "beta", parse_value)?;
        fill(&mut self.mass, &cfg, "mass", parse_value)?;
        fill(&mut self.spin_n, &cfg, "spin-n", parse_list)?;
        fill(&mut self.components, &cfg, "components", parse_value)?;
        fill(&mut self.seed, &cfg, "seed", parse_value)?;
        fill(&mut self.chains, &cfg, "chains", parse_value)?;
        fill(&mut self.sweeps, &cfg, "sweeps", parse_value)?;
        fill(&mut self.burnin, &cfg, "burnin", parse_value)?;
        fill(&mut self.samples, &cfg, "samples", parse_value)?;
        fill(&mut self.out, &cfg, "out", parse_value)?;
        fill(&mut self.format, &cfg, "format", parse_enum)?;
        fill(&mut self.threads, &cfg, "threads", parse_value)?;
        fill(&mut extra.kind, &cfg, "kind", parse_enum)?;
        fill(&mut extra.model, &cfg, "model", parse_enum)?;
        Ok(self)
    }

    /// `--threads`, then the environment, then one per core.
    pub fn thread_count(&self) -> Result<Option<usize>> {
        let count = match self.threads {
            Some(t) => Some(t),
            None => match std::env::var(THREADS_ENV) {
                Ok(raw) if !raw.trim().is_empty() => Some(parse_value(THREADS_ENV, raw.trim())?),
                _ => None,
            },
        };
        if count == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        Ok(count)
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(3)
    }

    /// First requested side.
    pub fn side(&self) -> usize {
        self.side
            .as_ref()
            .and_then(|s| s.first().copied())
            .unwrap_or(8)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Resolved settings for the manifest, unset keys omitted.
    pub fn to_map(&self, extra: &Extra) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("dim", self.dim.map(Value::from));
        put("side", self.side.clone().map(Value::from));
        put("beta", self.beta.map(Value::from));
        put("mass", self.mass.map(Value::from));
        put("spin-n", self.spin_n.clone().map(Value::from));
        put("components", self.components.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("chains", self.chains.map(Value::from));
        put("sweeps", self.sweeps.map(Value::from));
        put("burnin", self.burnin.map(Value::from));
        put("samples", self.samples.map(Value::from));
        put(
            "format",
            self.format
                .map(|f| Value::from(format!("{f:?}").to_lowercase())),
        );
        put(
            "kind",
            extra
                .kind
                .map(|k| Value::from(k.to_possible_value().map(|p| p.get_name().to_string()))),
        );
        put(
            "model",
            extra
                .model
                .map(|k| Value::from(k.to_possible_value().map(|p| p.get_name().to_string()))),
        );
        m
    }
}
