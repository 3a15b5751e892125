//! Autocorrelation-aware estimators and normality diagnostics.

use libm::erfc;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::numeric::{compensated_sum, mean_var};

/// Estimate of a scalar expectation with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub observable: String,
    pub value: f64,
    pub std_error: f64,
    pub n_eff: f64,
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `P[Z > x]`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Normalized autocorrelation `ρ_0..ρ_{max_lag}` via zero-padded FFT.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n < 2 {
        return vec![1.0];
    }
    let (mean, _) = mean_var(series);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        let mut out = vec![0.0; max_lag.min(n - 1) + 1];
        out[0] = 1.0;
        return out;
    }
    (0..=max_lag.min(n - 1)).map(|k| buf[k].re / c0).collect()
}

/// Integrated autocorrelation time `τ = 1/2 + Σ_{t≥1} ρ_t` from Geyer's
/// initial monotone sequence estimator, clamped below at 1/2.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 0.5;
    }
    let rho = autocorrelation(series, n - 1);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let gamma = rho[2 * k] + rho[2 * k + 1];
        if gamma <= 0.0 {
            break;
        }
        let g = gamma.min(prev);
        sum += g;
        prev = g;
        k += 1;
    }
    // Σ_k Γ_k = 1/2 + τ, since ρ_0 = 1 appears once
    (sum - 0.5).max(0.5)
}

/// Effective sample size `n / (2τ)`, never above `n`.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    n / (2.0 * integrated_autocorrelation_time(series))
}

/// Mean over several equally weighted chains, with autocorrelation-corrected error.
pub fn chain_mean(observable: &str, chains: &[Vec<f64>]) -> MomentEstimate {
    let mut means = Vec::with_capacity(chains.len());
    let mut var_of_mean = 0.0;
    let mut n_eff = 0.0;
    for c in chains {
        let (m, v) = mean_var(c);
        let ess = effective_sample_size(c);
        means.push(m);
        var_of_mean += if ess > 0.0 && v.is_finite() {
            v / ess
        } else {
            0.0
        };
        n_eff += ess;
    }
    let k = chains.len() as f64;
    MomentEstimate {
        observable: observable.to_string(),
        value: compensated_sum(means.iter().copied()) / k,
        std_error: var_of_mean.sqrt() / k,
        n_eff,
    }
}

/// Mean of independent draws.
pub fn iid_mean(observable: &str, values: &[f64]) -> MomentEstimate {
    let (m, v) = mean_var(values);
    let n = values.len() as f64;
    MomentEstimate {
        observable: observable.to_string(),
        value: m,
        std_error: (v / n).sqrt(),
        n_eff: n,
    }
}

/// Anderson–Darling statistic against a normal law with estimated mean
/// and variance, with the small-sample correction `1 + 0.75/n + 2.25/n²`.
pub fn anderson_darling_normal(values: &[f64]) -> f64 {
    let n = values.len();
    let (mean, var) = mean_var(values);
    let sd = var.sqrt();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let s = compensated_sum((0..n).map(|i| {
        let lo = normal_cdf(z[i]).max(1e-300);
        let hi = normal_sf(z[n - 1 - i]).max(1e-300);
        (2.0 * i as f64 + 1.0) * (lo.ln() + hi.ln())
    }));
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

/// 5% critical value of the corrected Anderson–Darling statistic.
pub const AD_CRITICAL_5PCT: f64 = 0.752;

/// Sample excess kurtosis and its large-sample standard error `√(24/n)`.
pub fn excess_kurtosis(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let (mean, _) = mean_var(values);
    let m2 = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / n;
    let m4 = compensated_sum(values.iter().map(|v| (v - mean).powi(4))) / n;
    (m4 / (m2 * m2) - 3.0, (24.0 / n).sqrt())
}

/// Sample skewness.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (mean, _) = mean_var(values);
    let m2 = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / n;
    let m3 = compensated_sum(values.iter().map(|v| (v - mean).powi(3))) / n;
    m3 / m2.powf(1.5)
}

/// Pearson chi-square statistic and its upper-tail p-value.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = ChiSquared::new(dof).expect("positive dof").sf(stat);
    (stat, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut r = stream(seed, "ar1", 0);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                x = phi * x + z;
                x
            })
            .collect()
    }

    #[test]
    fn iat_of_ar1_process() {
        // τ = 1/2 + φ/(1-φ)
        let phi = 0.8;
        let tau = integrated_autocorrelation_time(&ar1(phi, 200_000, 1));
        let want = 0.5 + phi / (1.0 - phi);
        assert!((tau - want).abs() < 0.1 * want, "{tau} vs {want}");
        let white = integrated_autocorrelation_time(&ar1(0.0, 50_000, 2));
        assert!((white - 0.5).abs() < 0.05);
        let ess = effective_sample_size(&ar1(0.0, 1000, 3));
        assert!(ess <= 1000.0);
    }

    #[test]
    fn chain_mean_error_tracks_spread() {
        let chains: Vec<Vec<f64>> = (0..20).map(|s| ar1(0.5, 5_000, 100 + s)).collect();
        let est = chain_mean("x", &chains);
        assert!(est.value.abs() < 4.0 * est.std_error);
        // error of a mean of 20 chains, stationary variance 4/3 and τ = 1.5
        let want = (4.0 / 3.0 * 3.0 / 5000.0f64).sqrt() / 20f64.sqrt();
        assert!(
            (est.std_error / want - 1.0).abs() < 0.2,
            "{} vs {want}",
            est.std_error
        );
    }

    #[test]
    fn split_half_error_scaling() {
        let x = ar1(0.0, 40_000, 9);
        let full = iid_mean("x", &x);
        let half = iid_mean("x", &x[..20_000]);
        let ratio = half.std_error / full.std_error;
        assert!((ratio - 2f64.sqrt()).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn anderson_darling_separates_normal_from_exponential() {
        let mut r = stream(4, "ad", 0);
        let normal: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut r)).collect();
        let expo: Vec<f64> = (0..2000).map(|_| Exp1.sample(&mut r)).collect();
        assert!(anderson_darling_normal(&normal) < AD_CRITICAL_5PCT);
        assert!(anderson_darling_normal(&expo) > 10.0);
    }

    #[test]
    fn kurtosis_and_skewness() {
        let mut r = stream(5, "k", 0);
        let u: Vec<f64> = (0..200_000).map(|_| r.random::<f64>()).collect();
        let (k, se) = excess_kurtosis(&u);
        assert!((k + 1.2).abs() < 4.0 * se);
        assert!(skewness(&u).abs() < 0.02);
    }

    #[test]
    fn normal_functions() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((normal_sf(8.0) - 6.220_960_574_271_785e-16).abs() < 1e-28);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let (stat, p) = chi_square_test(&[100, 100, 100, 100], &[100.0; 4]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
