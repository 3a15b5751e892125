//! Named verification suites. Each experiment binds samplers, kernel tables
//! and estimators to a reference value and emits an [`ExperimentReport`]
//! whose rows carry a gate and a verdict.
//!
//! Reports contain no timing or thread information, so a given seed and
//! parameter set always serializes to the same bytes.

mod exactness;
mod fluctuations;
mod greens;
mod spherical;
mod spin;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use exactness::exp_sampler_exactness;
pub use fluctuations::{exp_concentration, exp_critical_spectrum, exp_local_clt};
pub use greens::{exp_boundary_constant, exp_green_asymptotics};
pub use spherical::{exp_spherical_regimes, exp_zero_mode};
pub use spin::exp_spin_on_finite_n;

/// Version of the serialized report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where a reference value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Closed form or exact identity.
    Exact,
    /// Computed in-repo from an exact formula (quadrature, spectral sums, solvers).
    Derived,
    /// Large-volume or large-N limit of the model.
    Asymptotic,
    /// Threshold fixed by a design choice or frozen from a first run.
    Calibrated,
    /// No reference; the value is recorded only.
    None,
}

impl Source {
    pub fn label(&self) -> &'static str {
        match self {
            Source::Exact => "exact",
            Source::Derived => "derived",
            Source::Asymptotic => "asymptotic",
            Source::Calibrated => "calibrated",
            Source::None => "none",
        }
    }
}

/// Acceptance rule comparing an estimate with its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Gate {
    /// `|estimate - reference| ≤ k·std_error`.
    Sigma { k: f64 },
    /// `|estimate - reference| ≤ tol`.
    Absolute { tol: f64 },
    /// `estimate - k·std_error ≤ reference`.
    AtMost { k: f64 },
    /// `estimate + k·std_error ≥ reference`.
    AtLeast { k: f64 },
    /// `estimate < reference`.
    Below,
    /// `estimate > reference`.
    Above,
    /// Not gated.
    Record,
}

impl Gate {
    pub fn holds(&self, estimate: f64, std_error: f64, reference: f64) -> bool {
        match *self {
            Gate::Sigma { k } => (estimate - reference).abs() <= k * std_error,
            Gate::Absolute { tol } => (estimate - reference).abs() <= tol,
            Gate::AtMost { k } => estimate - k * std_error <= reference,
            Gate::AtLeast { k } => estimate + k * std_error >= reference,
            Gate::Below => estimate < reference,
            Gate::Above => estimate > reference,
            Gate::Record => true,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Gate::Sigma { k } => format!("|est-ref|<={k}se"),
            Gate::Absolute { tol } => format!("|est-ref|<={tol}"),
            Gate::AtMost { k: 0.0 } => "est<=ref".into(),
            Gate::AtMost { k } => format!("est-{k}se<=ref"),
            Gate::AtLeast { k: 0.0 } => "est>=ref".into(),
            Gate::AtLeast { k } => format!("est+{k}se>=ref"),
            Gate::Below => "est<ref".into(),
            Gate::Above => "est>ref".into(),
            Gate::Record => "recorded".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Chains mixed too little for the gate to be meaningful.
    Inconclusive,
    Recorded,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Recorded => "recorded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub observable: String,
    /// Non-finite estimates serialize as `null` and read back as NaN.
    #[serde(deserialize_with = "nan_from_null")]
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub reference: Option<f64>,
    pub source: Source,
    pub gate: Gate,
    pub verdict: Verdict,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Option::<f64>::deserialize(d).map(|v| v.unwrap_or(f64::NAN))
}

impl ReportRow {
    /// Row whose verdict follows from `gate`. A missing standard error
    /// counts as zero; a reference without a source always fails.
    pub fn gated(
        observable: impl Into<String>,
        estimate: f64,
        std_error: Option<f64>,
        reference: f64,
        source: Source,
        gate: Gate,
    ) -> Self {
        let se = std_error.unwrap_or(0.0);
        let ok =
            estimate.is_finite() && source != Source::None && gate.holds(estimate, se, reference);
        Self {
            observable: observable.into(),
            estimate,
            std_error,
            reference: Some(reference),
            source,
            gate,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn recorded(
        observable: impl Into<String>,
        estimate: f64,
        std_error: Option<f64>,
        reference: Option<f64>,
        source: Source,
    ) -> Self {
        Self {
            observable: observable.into(),
            estimate,
            std_error,
            reference,
            source: if reference.is_some() {
                source
            } else {
                Source::None
            },
            gate: Gate::Record,
            verdict: Verdict::Recorded,
        }
    }

    /// Marks a gated row inconclusive when `under_mixed` holds.
    pub fn inconclusive_if(mut self, under_mixed: bool) -> Self {
        if under_mixed && self.gate != Gate::Record {
            self.verdict = Verdict::Inconclusive;
        }
        self
    }
}

/// A numeric table exported alongside the rows, one CSV file each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub tool: String,
    pub version: String,
    pub target_os: String,
    pub target_arch: String,
    pub float: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            tool: "torusgff".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            target_os: std::env::consts::OS.into(),
            target_arch: std::env::consts::ARCH.into(),
            float: "ieee754-binary64".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub id: String,
    pub title: String,
    pub params: BTreeMap<String, Value>,
    pub rows: Vec<ReportRow>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub environment: Environment,
}

impl ExperimentReport {
    pub fn new(id: &str, title: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            id: id.into(),
            title: title.into(),
            params: BTreeMap::new(),
            rows: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
            environment: Environment::current(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("parameters serialize");
        self.params.insert(key.into(), v);
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn row(&self, observable: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.observable == observable)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Fail)
    }

    /// No gated row failed.
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn inconclusive(&self) -> bool {
        self.rows.iter().any(|r| r.verdict == Verdict::Inconclusive)
    }

    /// `pass`, `fail` or `inconclusive`; failures take precedence.
    pub fn status(&self) -> Verdict {
        if !self.passed() {
            Verdict::Fail
        } else if self.inconclusive() {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }
}

/// Overrides shared by all experiments. `None` keeps the experiment default;
/// overrides an experiment has no use for are ignored and not recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dim: Option<usize>,
    pub sides: Option<Vec<usize>>,
    pub beta: Option<f64>,
    pub spin_n: Option<Vec<usize>>,
    pub components: Option<usize>,
    pub chains: Option<usize>,
    pub sweeps: Option<u64>,
    pub burn_in: Option<u64>,
    pub samples: Option<usize>,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn chains(&self, default: usize) -> usize {
        self.chains.unwrap_or(default).max(1)
    }

    fn sweeps(&self, default: u64) -> u64 {
        self.sweeps.unwrap_or(default)
    }

    /// Explicit burn-in, or a tenth of the run.
    fn burn_in(&self, sweeps: u64) -> u64 {
        self.burn_in.unwrap_or(sweeps / 10)
    }

    fn samples(&self, default: usize) -> usize {
        self.samples.unwrap_or(default)
    }

    fn sides(&self, default: &[usize]) -> Vec<usize> {
        self.sides.clone().unwrap_or_else(|| default.to_vec())
    }
}

pub type ExperimentFn = fn(&ExperimentConfig) -> Result<ExperimentReport>;

/// Registered experiments in execution order.
pub const EXPERIMENTS: &[(&str, ExperimentFn)] = &[
    ("exp_sampler_exactness", exp_sampler_exactness),
    ("exp_spherical_regimes", exp_spherical_regimes),
    ("exp_zero_mode", exp_zero_mode),
    ("exp_green_asymptotics", exp_green_asymptotics),
    ("exp_boundary_constant", exp_boundary_constant),
    ("exp_spin_on_finite_N", exp_spin_on_finite_n),
    ("exp_concentration", exp_concentration),
    ("exp_local_clt", exp_local_clt),
    ("exp_critical_spectrum", exp_critical_spectrum),
];

pub fn experiment_ids() -> Vec<&'static str> {
    EXPERIMENTS.iter().map(|(id, _)| *id).collect()
}

pub fn run_experiment(id: &str, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (_, f) = EXPERIMENTS
        .iter()
        .find(|(name, _)| *name == id)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown experiment '{id}' (known: {})",
                experiment_ids().join(", ")
            ))
        })?;
    f(cfg)
}

pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    EXPERIMENTS.iter().map(|(_, f)| f(cfg)).collect()
}

/// Runs `f(0..count)` on the current pool; results keep index order.
fn par_indexed<T: Send>(
    count: usize,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Combined standard error of a difference of independent estimates.
fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Smallest per-chain effective sample size of a family of series.
fn min_ess(chains: &[Vec<f64>]) -> f64 {
    chains
        .iter()
        .map(|c| crate::analysis::stats::effective_sample_size(c))
        .fold(f64::INFINITY, f64::min)
}

/// Chains with fewer effective samples than this make a gate inconclusive.
pub const MIN_ESS: f64 = 200.0;
