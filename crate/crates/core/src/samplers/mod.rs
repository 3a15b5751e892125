//! Exact and Markov chain samplers for the Gaussian free fields, the
//! spherical model, and the spin O(N) model.

pub mod gff;
pub mod spherical;
pub mod spin;
pub mod vmf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TorusLattice;

pub use gff::{sample_massive_gff, sample_zero_avg_gff, GffSampler};
pub use spherical::{
    sample_spherical_gibbs, spherical_exact_tiny, spherical_rejection, SphericalChain,
    SphericalRun, TinyMoments,
};
pub use spin::{sample_spin_on_gibbs, SpinChain, SpinRun, SpinRunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum LawTag {
    MassiveGff {
        mass2: f64,
    },
    ZeroAvgGff,
    ZeroAvgPlusConstant {
        c: f64,
    },
    Spherical {
        beta: f64,
    },
    SpinOn {
        beta: f64,
        n: usize,
        projected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngProvenance {
    pub seed: u64,
    pub stream: String,
    pub index: u64,
    /// Sweeps performed, zero for exact samplers.
    pub sweeps: u64,
}

/// One field configuration; `values[x * components + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub lattice: TorusLattice,
    pub components: usize,
    pub values: Vec<f64>,
    pub law: LawTag,
    pub provenance: RngProvenance,
}

impl FieldSample {
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.components)
            .copied()
            .collect()
    }

    pub fn value(&self, site: usize, component: usize) -> f64 {
        self.values[site * self.components + component]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub sweeps: u64,
    pub burn_in: u64,
    /// Mean proposals per accepted draw in the inner exact samplers.
    pub trials_per_draw: f64,
    pub observable: String,
    pub autocorrelation_time: f64,
    pub ess: f64,
    /// Largest relative deviation from the constraint before renormalization.
    pub max_constraint_drift: f64,
}

pub(crate) fn check_sweeps(sweeps: u64, burn_in: u64) -> Result<()> {
    if sweeps <= burn_in {
        return Err(Error::Config(format!(
            "sweeps ({sweeps}) must exceed burn-in ({burn_in})"
        )));
    }
    Ok(())
}

/// Burn-in from the autocorrelation time of a recorded observable:
/// `20 τ`, at least a tenth and at most half of the run.
pub fn adaptive_burn_in(series: &[f64]) -> u64 {
    let n = series.len();
    let tail = &series[n / 2..];
    let tau = crate::analysis::stats::integrated_autocorrelation_time(tail);
    let b = (20.0 * tau).ceil() as usize;
    b.clamp(n / 10, n / 2) as u64
}
