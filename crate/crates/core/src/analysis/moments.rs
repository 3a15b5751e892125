//! Mixed site moments of the spherical model and norm statistics of
//! zero-average fields.

use serde::{Deserialize, Serialize};

use super::stats::{
    anderson_darling_normal, chain_mean, excess_kurtosis, iid_mean, MomentEstimate,
    AD_CRITICAL_5PCT,
};
use crate::error::{Error, Result};

/// `E[Π_k θ_{x_k}^{i_k}]` from per-chain series. `chains[c][k]` is the
/// series of site `x_k` in chain `c`; `powers[k] = i_k`.
pub fn moment_table(chains: &[Vec<Vec<f64>>], powers: &[u32]) -> Result<MomentEstimate> {
    if chains.is_empty() {
        return Err(Error::domain("no chains"));
    }
    let label = powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0)
        .map(|(k, p)| format!("theta_{k}^{p}"))
        .collect::<Vec<_>>()
        .join("*");
    let products: Vec<Vec<f64>> = chains
        .iter()
        .map(|sites| {
            if sites.len() != powers.len() {
                return Err(Error::LengthMismatch {
                    expected: powers.len(),
                    got: sites.len(),
                });
            }
            let len = sites.iter().map(Vec::len).min().unwrap_or(0);
            Ok((0..len)
                .map(|t| {
                    sites
                        .iter()
                        .zip(powers)
                        .map(|(s, &p)| s[t].powi(p as i32))
                        .product()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chain_mean(&label, &products))
}

/// Upper bound `(2p)!` on `E[θ_0^{2p}]`.
pub fn even_moment_bound(p: u32) -> f64 {
    (1..=2 * p).map(f64::from).product()
}

/// Whether an odd total degree makes the moment vanish by sign symmetry.
pub fn is_odd_moment(powers: &[u32]) -> bool {
    powers.iter().sum::<u32>() % 2 == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NormalityVerdict {
    /// Anderson–Darling statistic below the 5% critical value.
    ConsistentWithNormal {
        statistic: f64,
    },
    RejectsNormal {
        statistic: f64,
    },
    /// Excess kurtosis confidence interval excludes zero.
    NonNormal {
        kurtosis: f64,
        std_error: f64,
    },
    Inconclusive {
        kurtosis: f64,
        std_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStatistics {
    /// `‖·‖²/n^d`.
    pub scaled_norm: MomentEstimate,
    /// Mean and second moment of `X_n = (‖·‖² - E)/√Var`.
    pub x_mean: MomentEstimate,
    pub x_second: MomentEstimate,
    /// `(β_c n^d - E)/√Var`, the threshold the standardized norm is compared with.
    pub t_n: f64,
    pub kurtosis: f64,
    pub kurtosis_se: f64,
    pub verdict: NormalityVerdict,
}

/// Statistics of squared norms of i.i.d. field samples, standardized by the
/// exact mean and variance. `d ≥ 4` is tested for normality, `d = 3` for
/// departure from it.
pub fn norm_statistics(
    squared_norms: &[f64],
    volume: usize,
    exact_mean: f64,
    exact_var: f64,
    beta_c: f64,
    dim: usize,
) -> Result<NormStatistics> {
    if squared_norms.len() < 100 {
        return Err(Error::domain("need at least 100 samples"));
    }
    if !(exact_var > 0.0) {
        return Err(Error::domain("variance must be positive"));
    }
    let nd = volume as f64;
    let scaled: Vec<f64> = squared_norms.iter().map(|s| s / nd).collect();
    let sd = exact_var.sqrt();
    let x: Vec<f64> = squared_norms
        .iter()
        .map(|s| (s - exact_mean) / sd)
        .collect();
    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
    let (kurtosis, kurtosis_se) = excess_kurtosis(&x);
    let verdict = if dim >= 4 {
        let a = anderson_darling_normal(&x);
        if a < AD_CRITICAL_5PCT {
            NormalityVerdict::ConsistentWithNormal { statistic: a }
        } else {
            NormalityVerdict::RejectsNormal { statistic: a }
        }
    } else if (kurtosis / kurtosis_se).abs() > 4.0 {
        NormalityVerdict::NonNormal {
            kurtosis,
            std_error: kurtosis_se,
        }
    } else {
        NormalityVerdict::Inconclusive {
            kurtosis,
            std_error: kurtosis_se,
        }
    };
    Ok(NormStatistics {
        scaled_norm: iid_mean("norm2/volume", &scaled),
        x_mean: iid_mean("X_n", &x),
        x_second: iid_mean("X_n^2", &x2),
        t_n: (beta_c * nd - exact_mean) / sd,
        kurtosis,
        kurtosis_se,
        verdict,
    })
}
