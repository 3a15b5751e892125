//! Estimators, normality diagnostics and the critical-regime spectral analytics.

pub mod clt;
pub mod moments;
pub mod schur;
pub mod stats;

pub use clt::{local_clt_diagnostic, DensityDiagnostic, LocalCltReport, WeightArray};
pub use moments::{moment_table, norm_statistics, NormStatistics};
pub use schur::{conditioned_covariance_spectrum, CriticalSpectrumReport};
pub use stats::MomentEstimate;
