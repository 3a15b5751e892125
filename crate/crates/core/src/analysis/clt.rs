//! Local central limit diagnostics for weighted sums of squared Gaussians.
//!
//! An array of independent terms `Z = (h + √μ Y)² - μ - h²` with `Y`
//! standard normal is normalized by `s_n = √(Σ Var Z)`. The density of the
//! normalized sum is estimated with a Gaussian kernel and compared with a
//! reference density on a fixed grid.

use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::stats::{normal_cdf, normal_pdf};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, mean_var};
use crate::rng;

pub const GRID_POINTS: usize = 321;
pub const GRID_HALF_WIDTH: f64 = 4.0;
/// Kernel evaluations are truncated beyond this many bandwidths.
pub const KERNEL_CUTOFF: f64 = 8.0;
pub const MIN_SAMPLES: usize = 10_000;
const CHUNK: usize = 8192;

/// `mult` independent copies of `(h + √μ Y)² - μ - h²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayTerm {
    pub h: f64,
    pub mu: f64,
    pub mult: usize,
}

impl ArrayTerm {
    pub fn variance(&self) -> f64 {
        (2.0 * self.mu * self.mu + 4.0 * self.h * self.h * self.mu) * self.mult as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightArray {
    pub terms: Vec<ArrayTerm>,
}

impl WeightArray {
    /// Centered chi-square weights `λ_i (Y_i² - 1)`, equal weights merged.
    pub fn chi_square(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::domain("weights must be positive and finite"));
        }
        let mut sorted = weights.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut terms: Vec<ArrayTerm> = Vec::new();
        for w in sorted {
            match terms.last_mut() {
                Some(t) if t.mu.to_bits() == w.to_bits() => t.mult += 1,
                _ => terms.push(ArrayTerm {
                    h: 0.0,
                    mu: w,
                    mult: 1,
                }),
            }
        }
        Ok(Self { terms })
    }

    /// Shifted array from `(h_k, μ_k)` pairs.
    pub fn shifted(h: &[f64], mu: &[f64]) -> Result<Self> {
        if h.len() != mu.len() {
            return Err(Error::LengthMismatch {
                expected: mu.len(),
                got: h.len(),
            });
        }
        if mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::domain("variances must be positive and finite"));
        }
        Ok(Self {
            terms: h
                .iter()
                .zip(mu)
                .map(|(&h, &mu)| ArrayTerm { h, mu, mult: 1 })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.iter().map(|t| t.mult).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn s_n(&self) -> f64 {
        compensated_sum(self.terms.iter().map(|t| t.variance())).sqrt()
    }

    /// Draws of `Σ Z / s_n`. Each term group is sampled as
    /// `μ((√(m h²/μ) + Y)² + χ²_{m-1}) - m(μ + h²)`.
    pub fn sample_normalized(&self, samples: usize, seed: u64) -> Result<Vec<f64>> {
        let s_n = self.s_n();
        if !(s_n > 0.0) {
            return Err(Error::domain("degenerate array: s_n = 0"));
        }
        let gammas: Vec<Option<Gamma<f64>>> = self
            .terms
            .iter()
            .map(|t| {
                (t.mult > 1)
                    .then(|| Gamma::new(0.5 * (t.mult - 1) as f64, 2.0).expect("valid gamma"))
            })
            .collect();
        let offsets: Vec<f64> = self
            .terms
            .iter()
            .map(|t| (t.mult as f64 * t.h * t.h / t.mu).sqrt())
            .collect();
        let centre = compensated_sum(
            self.terms
                .iter()
                .map(|t| t.mult as f64 * (t.mu + t.h * t.h)),
        );
        let chunks = samples.div_ceil(CHUNK);
        let parts: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut r = rng::stream(seed, "local-clt", c as u64);
                let count = CHUNK.min(samples - c * CHUNK);
                (0..count)
                    .map(|_| {
                        let mut acc = 0.0;
                        for ((t, g), off) in self.terms.iter().zip(&gammas).zip(&offsets) {
                            let y: f64 = StandardNormal.sample(&mut r);
                            let mut q = (off + y) * (off + y);
                            if let Some(g) = g {
                                q += g.sample(&mut r);
                            }
                            acc += t.mu * q;
                        }
                        (acc - centre) / s_n
                    })
                    .collect()
            })
            .collect();
        Ok(parts.concat())
    }

    /// Lindeberg ratio `Σ E[Z² 1{|Z| > ε s_n}] / s_n²`.
    pub fn lindeberg_ratio(&self, eps: f64) -> f64 {
        let s_n = self.s_n();
        self.tail_second_moment(0, eps * s_n) / (s_n * s_n)
    }

    /// `Σ_{i ≥ from} E[Z_i² 1{|Z_i| > t}]` over the expanded, variance-sorted array.
    fn tail_second_moment(&self, from: usize, t: f64) -> f64 {
        let mut order: Vec<&ArrayTerm> = self.terms.iter().collect();
        order.sort_by(|a, b| {
            (b.variance() / b.mult as f64).total_cmp(&(a.variance() / a.mult as f64))
        });
        let mut skipped = 0;
        let mut total = 0.0;
        for term in order {
            let take = term.mult.saturating_sub(from.saturating_sub(skipped));
            skipped += term.mult - take;
            if take > 0 {
                total += take as f64 * term_tail(term.h, term.mu, t);
            }
        }
        total
    }

    /// Per-copy variances in nonincreasing order.
    fn sorted_variances(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .terms
            .iter()
            .flat_map(|t| std::iter::repeat_n(t.variance() / t.mult as f64, t.mult))
            .collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// `E[Z² 1{|Z| > t}]` for a single term.
fn term_tail(h: f64, mu: f64, t: f64) -> f64 {
    if h == 0.0 {
        // Z = μ(Y² - 1); moments of Y² restricted to a tail are chi-square tails
        let a = 1.0 + t / mu;
        let upper = |k: f64| ChiSquared::new(k).expect("dof").sf(a);
        let mut v = mu * mu * (3.0 * upper(5.0) - 2.0 * upper(3.0) + upper(1.0));
        let b = 1.0 - t / mu;
        if b > 0.0 {
            let lower = |k: f64| ChiSquared::new(k).expect("dof").cdf(b);
            v += mu * mu * (3.0 * lower(5.0) - 2.0 * lower(3.0) + lower(1.0));
        }
        return v;
    }
    // Z(y) = μ y² + 2h√μ y - μ; integrate Z² φ over {|Z| > t} numerically
    let s = mu.sqrt();
    let z = |y: f64| mu * y * y + 2.0 * h * s * y - mu;
    let roots = |c: f64| -> Option<(f64, f64)> {
        // μ y² + 2h√μ y - μ - c = 0
        let disc = 4.0 * h * h * mu + 4.0 * mu * (mu + c);
        (disc >= 0.0).then(|| {
            let r = disc.sqrt();
            (
                (-2.0 * h * s - r) / (2.0 * mu),
                (-2.0 * h * s + r) / (2.0 * mu),
            )
        })
    };
    const LIM: f64 = 40.0;
    let mut intervals = Vec::new();
    match roots(t) {
        Some((lo, hi)) => {
            intervals.push((-LIM, lo.max(-LIM)));
            intervals.push((hi.min(LIM), LIM));
        }
        None => intervals.push((-LIM, LIM)),
    }
    if let Some((lo, hi)) = roots(-t) {
        intervals.push((lo, hi));
    }
    let f = |y: f64| {
        let v = z(y);
        v * v * normal_pdf(y)
    };
    intervals
        .into_iter()
        .filter(|(a, b)| b > a)
        .map(|(a, b)| simpson(&f, a, b, 4000))
        .sum()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let mut s = f(a) + f(b);
    for i in 1..steps {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Numerical check of the structural hypotheses of the local limit theorem
/// for one concrete parameter choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Parameters for [`structural_conditions`]: `l_* = 1`, `l^* = 2⌈r/(r-1)⌉`,
/// `K = k_factor · σ_{l^*}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    pub r: f64,
    pub l_lower: usize,
    pub delta: f64,
    pub k_factor: f64,
    pub lindeberg_eps: f64,
    /// Required margin in the "much larger than" comparison.
    pub dominance: f64,
}

impl Default for ConditionParams {
    fn default() -> Self {
        Self {
            r: 1.5,
            l_lower: 1,
            delta: 0.5,
            k_factor: 8.0,
            lindeberg_eps: 0.1,
            dominance: 10.0,
        }
    }
}

pub fn structural_conditions(array: &WeightArray, p: &ConditionParams) -> Vec<ConditionCheck> {
    let sig = array.sorted_variances();
    let n = sig.len();
    let total = compensated_sum(sig.iter().copied());
    let l_upper = (2.0 * (p.r / (p.r - 1.0)).ceil()) as usize;
    let from = p.l_lower.max(1) - 1;
    let tail_var = compensated_sum(sig[from.min(n)..].iter().copied());
    let sigma_lu = sig
        .get(l_upper.min(n).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);
    let k = p.k_factor * sigma_lu.sqrt();
    let lind = array.lindeberg_ratio(p.lindeberg_eps);
    let a = tail_var / total;
    let b = array.tail_second_moment(from, k) / tail_var;
    let c = if n > l_upper {
        (n - l_upper) as f64 / sigma_lu.max(k * k) / total.ln().max(1e-300)
    } else {
        0.0
    };
    vec![
        ConditionCheck {
            name: format!("lindeberg(eps={})", p.lindeberg_eps),
            value: lind,
            threshold: 0.05,
            holds: lind <= 0.05,
        },
        ConditionCheck {
            name: "tail_variance_share".into(),
            value: a,
            threshold: p.delta,
            holds: a >= p.delta,
        },
        ConditionCheck {
            name: "truncated_second_moment".into(),
            value: b,
            threshold: 0.125,
            holds: b <= 0.125,
        },
        ConditionCheck {
            name: "count_over_log_variance".into(),
            value: c,
            threshold: p.dominance,
            holds: c >= p.dominance,
        },
    ]
}

/// Kernel density estimate of a normalized sum against a reference density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDiagnostic {
    pub grid: Vec<f64>,
    pub empirical_density: Vec<f64>,
    pub reference_density: Vec<f64>,
    pub sup_distance: f64,
    pub bandwidth: f64,
    pub samples: usize,
    /// Trapezoidal integral of the estimate over the grid.
    pub grid_mass: f64,
    /// Kernel mass falling outside the grid.
    pub outside_mass: f64,
}

pub fn density_grid() -> Vec<f64> {
    let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| -GRID_HALF_WIDTH + i as f64 * step)
        .collect()
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let (_, var) = mean_var(values);
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        s[i] + f * (s[(i + 1).min(s.len() - 1)] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Gaussian-kernel estimate on the fixed grid compared with `reference`.
pub fn kde_diagnostic(values: &[f64], reference: impl Fn(f64) -> f64) -> DensityDiagnostic {
    let h = silverman_bandwidth(values);
    kde_with_bandwidth(values, h, reference)
}

pub fn kde_with_bandwidth(
    values: &[f64],
    h: f64,
    reference: impl Fn(f64) -> f64,
) -> DensityDiagnostic {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let grid = density_grid();
    let empirical: Vec<f64> = grid
        .par_iter()
        .map(|&x| {
            let lo = s.partition_point(|&v| v < x - KERNEL_CUTOFF * h);
            let hi = s.partition_point(|&v| v <= x + KERNEL_CUTOFF * h);
            let sum: f64 = s[lo..hi].iter().map(|&v| normal_pdf((x - v) / h)).sum();
            sum / (n * h)
        })
        .collect();
    let reference_density: Vec<f64> = grid.iter().map(|&x| reference(x)).collect();
    let sup_distance = empirical
        .iter()
        .zip(&reference_density)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let step = grid[1] - grid[0];
    let grid_mass =
        step * (empirical.iter().sum::<f64>() - 0.5 * (empirical[0] + empirical[GRID_POINTS - 1]));
    let outside_mass =
        compensated_sum(s.iter().map(|&v| {
            normal_cdf((-GRID_HALF_WIDTH - v) / h) + normal_cdf((v - GRID_HALF_WIDTH) / h)
        })) / n;
    DensityDiagnostic {
        grid,
        empirical_density: empirical,
        reference_density,
        sup_distance,
        bandwidth: h,
        samples: values.len(),
        grid_mass,
        outside_mass,
    }
}

/// Full diagnostic: sampled normalized sum against the standard normal
/// density, plus the structural conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCltReport {
    pub terms: usize,
    pub s_n: f64,
    pub largest_share: f64,
    pub density: DensityDiagnostic,
    pub conditions: Vec<ConditionCheck>,
}

pub fn local_clt_diagnostic(
    array: &WeightArray,
    samples: usize,
    seed: u64,
) -> Result<LocalCltReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_SAMPLES} samples"
        )));
    }
    let values = array.sample_normalized(samples, seed)?;
    let s_n = array.s_n();
    let sig = array.sorted_variances();
    Ok(LocalCltReport {
        terms: array.len(),
        s_n,
        largest_share: sig[0] / (s_n * s_n),
        density: kde_diagnostic(&values, normal_pdf),
        conditions: structural_conditions(array, &ConditionParams::default()),
    })
}

/// Step and cap of the Fourier integral in [`characteristic_density`].
const CF_STEP: f64 = 0.005;
const CF_MAX_STEPS: usize = 400_000;

/// Density of `Σ Z / s_n` on `xs` by inversion of its characteristic
/// function, `f(x) = (1/π) ∫_0^∞ Re[φ(u) e^{-iux}] du`. The integral is
/// truncated once `|φ| < 1e-16`; arrays whose `|φ|` decays too slowly for
/// that are rejected.
pub fn characteristic_density(array: &WeightArray, xs: &[f64]) -> Result<Vec<f64>> {
    let s_n = array.s_n();
    if !(s_n > 0.0) {
        return Err(Error::domain("degenerate array: s_n = 0"));
    }
    let terms: Vec<(f64, f64, f64)> = array
        .terms
        .iter()
        .map(|t| (t.h * t.h / s_n, t.mu / s_n, t.mult as f64))
        .collect();
    // log φ(u) = Σ m [-¼ ln(1 + 4μ²u²) + i(½ atan(2μu) - μu - h²u)
    //             + (i h²u - 2μh²u²)/(1 + 4μ²u²)]
    let log_cf = |u: f64| -> (f64, f64) {
        let (mut re, mut im) = (0.0, 0.0);
        for &(h2, mu, m) in &terms {
            let q = 1.0 + 4.0 * mu * mu * u * u;
            re += m * (-0.25 * q.ln() - 2.0 * mu * h2 * u * u / q);
            im += m * (0.5 * (2.0 * mu * u).atan() - mu * u - h2 * u + h2 * u / q);
        }
        (re, im)
    };
    let mut nodes = Vec::new();
    for k in 0..=CF_MAX_STEPS {
        let u = k as f64 * CF_STEP;
        let (re, im) = log_cf(u);
        if re < -16.0 * std::f64::consts::LN_10 {
            break;
        }
        if k == CF_MAX_STEPS {
            return Err(Error::Numerical(
                "characteristic function decays too slowly to invert".into(),
            ));
        }
        let w = if k == 0 { 0.5 } else { 1.0 };
        nodes.push((u, w * re.exp(), im));
    }
    Ok(xs
        .iter()
        .map(|&x| {
            let sum = compensated_sum(nodes.iter().map(|&(u, a, b)| a * (b - u * x).cos()));
            (sum * CF_STEP / std::f64::consts::PI).max(0.0)
        })
        .collect())
}

/// Density of `(Y_1² + Y_2² - 2)/2`, a unit exponential shifted by `-1`.
pub fn shifted_exponential_density(x: f64) -> f64 {
    if x >= -1.0 {
        (-(x + 1.0)).exp()
    } else {
        0.0
    }
}

/// [`shifted_exponential_density`] convolved with a centred Gaussian of
/// standard deviation `h`, the expectation of the kernel estimate.
pub fn smoothed_shifted_exponential(x: f64, h: f64) -> f64 {
    let u = x + 1.0;
    // e^{-u + h²/2} Φ(u/h - h), evaluated in log space to avoid overflow
    let log_phi = normal_cdf(u / h - h).max(1e-300).ln();
    (-u + 0.5 * h * h + log_phi).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn characteristic_inversion_matches_chi_square() {
        use statrs::distribution::Continuous;
        // (χ²_40 - 40)/√80
        let a = WeightArray::chi_square(&[1.0; 40]).unwrap();
        let xs = [-2.0, -0.5, 0.0, 0.7, 2.5];
        let f = characteristic_density(&a, &xs).unwrap();
        let chi = ChiSquared::new(40.0).unwrap();
        let s = 80f64.sqrt();
        for (x, v) in xs.iter().zip(f) {
            assert!((v - s * chi.pdf(40.0 + s * x)).abs() < 1e-8, "{x}: {v}");
        }
        assert!(
            characteristic_density(&WeightArray::chi_square(&[1.0, 1.0]).unwrap(), &xs).is_err()
        );
    }

    #[test]
    fn kde_of_normal_draws() {
        let mut r = rng::stream(1, "kde", 0);
        let v: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut r))
            .collect();
        let diag = kde_diagnostic(&v, normal_pdf);
        assert!(diag.sup_distance < 0.01, "{}", diag.sup_distance);
        assert!((diag.grid_mass + diag.outside_mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_unit_weights_give_shifted_exponential() {
        let a = WeightArray::chi_square(&[1.0, 1.0]).unwrap();
        assert_eq!(a.terms.len(), 1);
        assert!((a.s_n() - 2.0).abs() < 1e-15);
        let v = a.sample_normalized(100_000, 2).unwrap();
        let h = silverman_bandwidth(&v);
        let diag = kde_with_bandwidth(&v, h, |x| smoothed_shifted_exponential(x, h));
        assert!(diag.sup_distance < 0.02, "{}", diag.sup_distance);
        assert!((diag.grid_mass + diag.outside_mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn smoothed_density_limits() {
        assert!(
            (smoothed_shifted_exponential(2.0, 1e-4) - shifted_exponential_density(2.0)).abs()
                < 1e-6
        );
        assert!(smoothed_shifted_exponential(-3.0, 0.05) < 1e-12);
    }

    #[test]
    fn chi_square_tail_matches_quadrature() {
        for &(mu, t) in &[(1.0, 0.5), (2.0, 3.0), (0.3, 0.1)] {
            let closed = term_tail(0.0, mu, t);
            let numeric = term_tail(1e-300, mu, t);
            assert!((closed - numeric).abs() < 1e-8, "{closed} {numeric}");
        }
        // the full second moment at t = 0 is the variance 2μ²
        assert!((term_tail(0.0, 1.5, 0.0) - 4.5).abs() < 1e-10);
        assert!((term_tail(0.4, 1.5, 0.0) - (4.5 + 4.0 * 0.16 * 1.5)).abs() < 1e-8);
    }

    #[test]
    fn lindeberg_separates_flat_and_dominated_arrays() {
        let flat = WeightArray::chi_square(&vec![1.0; 4000]).unwrap();
        let larger = WeightArray::chi_square(&vec![1.0; 16000]).unwrap();
        assert!(larger.lindeberg_ratio(0.1) < 0.1 * flat.lindeberg_ratio(0.1));
        let mut w = vec![1.0; 4000];
        w[0] = 200.0;
        let dom = WeightArray::chi_square(&w).unwrap();
        assert!(dom.lindeberg_ratio(0.1) > 0.5);
        assert!(larger.lindeberg_ratio(0.1) < 0.01);
    }

    #[test]
    fn shifted_sampler_moments() {
        let a = WeightArray::shifted(&[0.5, -1.0, 0.0], &[1.0, 0.5, 2.0]).unwrap();
        let v = a.sample_normalized(200_000, 3).unwrap();
        let (m, var) = mean_var(&v);
        assert!(m.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn degenerate_and_small_inputs_are_rejected() {
        assert!(WeightArray::chi_square(&[0.0]).is_err());
        let a = WeightArray::chi_square(&[1.0]).unwrap();
        assert!(local_clt_diagnostic(&a, 10, 1).is_err());
    }
}
