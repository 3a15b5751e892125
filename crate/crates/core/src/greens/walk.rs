//! Random-walk representations of Green functions: an exact series over
//! walk lengths on `ℤ^d` and Monte Carlo estimators on the torus.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{SiteIndex, TorusLattice};
use crate::rng;

/// Walk lengths summed explicitly for the massless series.
pub const MASSLESS_TERMS: usize = 4000;
const MAX_MASSIVE_TERMS: usize = 20_000;
const SERIES_TAIL: f64 = 1e-13;

/// Paths simulated per RNG stream.
pub const PATHS_PER_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkSeries {
    pub value: f64,
    /// Walk lengths summed explicitly.
    pub terms: usize,
    /// Contribution of lengths beyond `terms` (bound or fitted estimate).
    pub tail: f64,
}

fn ln_factorials(k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    out.push(0.0);
    for i in 1..=k {
        let v = (i as f64).ln() - comp;
        let t = sum + v;
        comp = (t - sum) - v;
        sum = t;
        out.push(sum);
    }
    out
}

/// `ln` of the exponential generating coefficients of a one-dimensional walk
/// ending at `y`: `1/(((k+y)/2)! ((k-y)/2)!)`.
fn axis_log_coefficients(y: u64, k_max: usize, lnf: &[f64]) -> Vec<f64> {
    let y = y as usize;
    (0..=k_max)
        .map(|k| {
            if k < y || (k - y) & 1 == 1 {
                f64::NEG_INFINITY
            } else {
                -lnf[(k + y) / 2] - lnf[(k - y) / 2]
            }
        })
        .collect()
}

fn log_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len().min(b.len());
    (0..len)
        .map(|l| {
            let mut max = f64::NEG_INFINITY;
            for k in 0..=l {
                let v = a[k] + b[l - k];
                if v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return max;
            }
            let mut s = 0.0;
            for k in 0..=l {
                let v = a[k] + b[l - k];
                if v > f64::NEG_INFINITY {
                    s += (v - max).exp();
                }
            }
            max + s.ln()
        })
        .collect()
}

/// `P[X_L = y]` for the simple random walk on `ℤ^d`, `L = 0..=k_max`.
pub fn return_probabilities(y: &[i64], k_max: usize) -> Vec<f64> {
    let d = y.len();
    let lnf = ln_factorials(k_max);
    let mut acc = axis_log_coefficients(y[0].unsigned_abs(), k_max, &lnf);
    for &c in &y[1..] {
        acc = log_convolve(&acc, &axis_log_coefficients(c.unsigned_abs(), k_max, &lnf));
    }
    let ln2d = (2.0 * d as f64).ln();
    acc.iter()
        .enumerate()
        .map(|(l, &lc)| {
            if lc == f64::NEG_INFINITY {
                0.0
            } else {
                (lnf[l] + lc - l as f64 * ln2d).exp()
            }
        })
        .collect()
}

/// Hurwitz zeta `ζ(s, a)` for `s > 1` and large `a`, by Euler–Maclaurin.
fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const SHIFT: usize = 10;
    // B_2, B_4, ..., B_12 divided by (2j)!
    const B: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
    ];
    let mut sum: f64 = (0..SHIFT).map(|k| (a + k as f64).powf(-s)).sum();
    let b = a + SHIFT as f64;
    sum += b.powf(1.0 - s) / (s - 1.0) + 0.5 * b.powf(-s);
    let mut rising = s;
    let mut power = b.powf(-s - 1.0);
    for (j, coeff) in B.iter().enumerate() {
        sum += coeff * rising * power;
        let k = 2 * j + 1;
        rising *= (s + k as f64) * (s + k as f64 + 1.0);
        power /= b * b;
    }
    sum
}

/// `G_{ℤ^d, m²}(0, y)` as `(1/(2d+m²)) Σ_L (2d/(2d+m²))^L P[X_L = y]`.
///
/// With mass the series is geometric and is truncated once the remaining
/// mass is below `1e-13`. Without mass `MASSLESS_TERMS` lengths are summed
/// and the `L^{-d/2}` tail is extrapolated from a least-squares fit of
/// `P[X_L=y] L^{d/2}` in powers of `1/L`.
pub fn zd_green_walk_series(mass2: f64, y: &[i64]) -> Result<WalkSeries> {
    let d = y.len();
    if d == 0 {
        return Err(Error::domain("empty offset"));
    }
    if !(mass2 >= 0.0) || !mass2.is_finite() {
        return Err(Error::domain(format!(
            "m² must be finite and ≥ 0, got {mass2}"
        )));
    }
    let two_d = 2.0 * d as f64;
    if mass2 > 0.0 {
        let survive = two_d / (two_d + mass2);
        let alpha = 1.0 - survive;
        let k = ((SERIES_TAIL * alpha).ln() / survive.ln()).ceil().max(1.0) as usize;
        if k > MAX_MASSIVE_TERMS {
            return Err(Error::Resource(format!(
                "walk series for m² = {mass2} needs {k} terms"
            )));
        }
        let probs = return_probabilities(y, k);
        let mut sum = 0.0;
        let mut weight = 1.0;
        for p in &probs {
            sum += weight * p;
            weight *= survive;
        }
        let tail = weight / alpha;
        return Ok(WalkSeries {
            value: sum / (two_d + mass2),
            terms: k,
            tail: tail / (two_d + mass2),
        });
    }
    if d <= 2 {
        return Err(Error::domain(format!(
            "massless walk series diverges on Z^{d}"
        )));
    }
    let k = MASSLESS_TERMS;
    let probs = return_probabilities(y, k);
    let parity = (y.iter().map(|c| c.unsigned_abs()).sum::<u64>() % 2) as usize;
    let half_d = 0.5 * d as f64;
    let scale = k as f64;
    const ORDER: usize = 5;
    let fit_ls: Vec<usize> = (k / 2..=k).filter(|l| l % 2 == parity).collect();
    let design = DMatrix::from_fn(fit_ls.len(), ORDER, |r, j| {
        (scale / fit_ls[r] as f64).powi(j as i32)
    });
    let target = DVector::from_iterator(
        fit_ls.len(),
        fit_ls.iter().map(|&l| probs[l] * (l as f64).powf(half_d)),
    );
    let coeffs = design
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| Error::Numerical(format!("tail fit failed: {e}")))?;
    let first = if (k + 1) % 2 == parity { k + 1 } else { k + 2 };
    let a = 0.5 * (first as f64);
    let tail: f64 = (0..ORDER)
        .map(|j| {
            let s = half_d + j as f64;
            coeffs[j] * scale.powi(j as i32) * 2f64.powf(-s) * hurwitz_zeta(s, a)
        })
        .sum();
    let head: f64 = probs.iter().sum();
    Ok(WalkSeries {
        value: (head + tail) / two_d,
        terms: k,
        tail: tail / two_d,
    })
}

/// Killed walk on the torus: absorbed on `blocked` sites and killed with
/// probability `α = m²/(2d+m²)` per step.
#[derive(Debug, Clone)]
pub struct WalkDomain {
    lattice: TorusLattice,
    mass2: f64,
    blocked: Vec<bool>,
}

impl WalkDomain {
    pub fn new(lattice: &TorusLattice, mass2: f64, blocked: &[SiteIndex]) -> Result<Self> {
        if !(mass2 >= 0.0) || !mass2.is_finite() {
            return Err(Error::domain(format!(
                "m² must be finite and ≥ 0, got {mass2}"
            )));
        }
        let mut mask = vec![false; lattice.volume()];
        for s in blocked {
            *mask
                .get_mut(s.flat())
                .ok_or_else(|| Error::domain(format!("site {} out of range", s.flat())))? = true;
        }
        if mass2 == 0.0 && !mask.iter().any(|&b| b) {
            return Err(Error::domain(
                "walk never dies: need m² > 0 or a nonempty absorbing set",
            ));
        }
        Ok(Self {
            lattice: *lattice,
            mass2,
            blocked: mask,
        })
    }

    pub fn kill_probability(&self) -> f64 {
        let two_d = 2.0 * self.lattice.dim() as f64;
        self.mass2 / (two_d + self.mass2)
    }

    fn check(&self, s: SiteIndex) -> Result<usize> {
        if s.flat() < self.lattice.volume() {
            Ok(s.flat())
        } else {
            Err(Error::domain(format!("site {} out of range", s.flat())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwEstimate {
    pub value: f64,
    pub std_error: f64,
    pub paths: u64,
    pub seed: u64,
}

/// Runs `paths` walks in fixed-size chunks, one RNG stream per chunk, and
/// merges the per-path values in chunk order.
fn run_paths<F>(paths: u64, seed: u64, tag: &str, path_value: F) -> RwEstimate
where
    F: Fn(&mut rng::StreamRng) -> f64 + Sync,
{
    let chunk = PATHS_PER_CHUNK as u64;
    let chunks = paths.div_ceil(chunk);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, tag, c);
            let count = chunk.min(paths - c * chunk);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = path_value(&mut r);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let n = paths as f64;
    let mean = if paths > 0 { s / n } else { 0.0 };
    let var = if paths > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    RwEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        paths,
        seed,
    }
}

/// Monte Carlo estimate of `G(x, y)` on the domain: the expected number of
/// visits to `y` before absorption or killing, divided by `2d + m²`.
pub fn rw_green_oracle(
    domain: &WalkDomain,
    x: SiteIndex,
    y: SiteIndex,
    paths: u64,
    seed: u64,
) -> Result<RwEstimate> {
    let (x, y) = (domain.check(x)?, domain.check(y)?);
    let lattice = domain.lattice;
    let alpha = domain.kill_probability();
    let deg = 2 * lattice.dim();
    let norm = 1.0 / (deg as f64 + domain.mass2);
    Ok(run_paths(paths, seed, "rw-green", |r| {
        let mut nb = vec![0; deg];
        let mut at = x;
        let mut visits = 0u64;
        loop {
            if domain.blocked[at] {
                break;
            }
            if at == y {
                visits += 1;
            }
            if alpha > 0.0 && r.random::<f64>() < alpha {
                break;
            }
            lattice.neighbor_flats(at, &mut nb);
            at = nb[r.random_range(0..deg)];
        }
        visits as f64 * norm
    }))
}

/// Monte Carlo estimate of the harmonic extension at `x`: the boundary value
/// at the first site of `targets` hit, or 0 after killing or absorption.
pub fn rw_harmonic_oracle(
    domain: &WalkDomain,
    targets: &[SiteIndex],
    values: &[f64],
    x: SiteIndex,
    paths: u64,
    seed: u64,
) -> Result<RwEstimate> {
    if targets.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            got: values.len(),
        });
    }
    let x = domain.check(x)?;
    let lattice = domain.lattice;
    let mut boundary = vec![None; lattice.volume()];
    for (s, &v) in targets.iter().zip(values) {
        boundary[domain.check(*s)?] = Some(v);
    }
    let alpha = domain.kill_probability();
    let deg = 2 * lattice.dim();
    Ok(run_paths(paths, seed, "rw-harmonic", |r| {
        let mut nb = vec![0; deg];
        let mut at = x;
        loop {
            if domain.blocked[at] {
                return 0.0;
            }
            if let Some(v) = boundary[at] {
                return v;
            }
            if alpha > 0.0 && r.random::<f64>() < alpha {
                return 0.0;
            }
            lattice.neighbor_flats(at, &mut nb);
            at = nb[r.random_range(0..deg)];
        }
    }))
}
