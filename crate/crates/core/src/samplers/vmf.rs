//! Exact samplers for the von Mises law on the circle and the
//! von Mises–Fisher law on spheres.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Draws from the von Mises law with mean `mu` and concentration `kappa`
/// (Best–Fisher rejection). Returns an angle in `(mu - π, mu + π]`.
pub fn sample_von_mises<R: Rng + ?Sized>(rng: &mut R, mu: f64, kappa: f64) -> f64 {
    sample_von_mises_counted(rng, mu, kappa).0
}

/// As [`sample_von_mises`], also returning the number of proposals used.
pub fn sample_von_mises_counted<R: Rng + ?Sized>(rng: &mut R, mu: f64, kappa: f64) -> (f64, u32) {
    if kappa < 1e-8 {
        return (mu + PI * (2.0 * rng.random::<f64>() - 1.0), 1);
    }
    let root = (1.0 + 4.0 * kappa * kappa).sqrt();
    let tau = 1.0 + root;
    // τ - √(2τ) without cancellation at small κ
    let excess = 4.0 * kappa * kappa / (root + 1.0);
    let rho = tau * excess / (tau + (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    let mut trials = 0;
    loop {
        trials += 1;
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let angle = f.clamp(-1.0, 1.0).acos();
            let u3: f64 = rng.random();
            let theta = if u3 < 0.5 { mu - angle } else { mu + angle };
            return (theta, trials);
        }
    }
}

/// von Mises–Fisher sampler on `S^{m-1}`, `m ≥ 2`: Wood's rejection
/// scheme for the cosine `w = x·μ` plus a uniform tangent direction.
#[derive(Debug, Clone)]
pub struct VmfSampler {
    m: usize,
    beta: Beta<f64>,
}

impl VmfSampler {
    pub fn new(m: usize) -> Self {
        assert!(m >= 2, "vMF needs m ≥ 2");
        let h = 0.5 * (m - 1) as f64;
        Self {
            m,
            beta: Beta::new(h, h).expect("valid beta parameters"),
        }
    }

    pub fn cosine<R: Rng + ?Sized>(&self, rng: &mut R, kappa: f64) -> f64 {
        let m1 = (self.m - 1) as f64;
        if kappa < 1e-12 {
            let z: f64 = self.beta.sample(rng);
            return 1.0 - 2.0 * z;
        }
        let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
        loop {
            let z: f64 = self.beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                return w;
            }
        }
    }

    /// Draws a unit vector into `out`. `mean_dir` must have unit length
    /// unless `kappa` is zero.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        mean_dir: &[f64],
        kappa: f64,
        out: &mut [f64],
    ) {
        debug_assert_eq!(mean_dir.len(), self.m);
        debug_assert_eq!(out.len(), self.m);
        let w = self.cosine(rng, kappa);
        loop {
            for o in out.iter_mut() {
                *o = StandardNormal.sample(rng);
            }
            let proj = out.iter().zip(mean_dir).map(|(a, b)| a * b).sum::<f64>();
            for (o, &mu) in out.iter_mut().zip(mean_dir) {
                *o -= proj * mu;
            }
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                let s = (1.0 - w * w).max(0.0).sqrt() / norm;
                for (o, &mu) in out.iter_mut().zip(mean_dir) {
                    *o = w * mu + s * *o;
                }
                return;
            }
        }
    }
}

pub fn sample_vmf_cosine<R: Rng + ?Sized>(rng: &mut R, m: usize, kappa: f64) -> f64 {
    VmfSampler::new(m).cosine(rng, kappa)
}

pub fn sample_vmf<R: Rng + ?Sized>(rng: &mut R, mean_dir: &[f64], kappa: f64, out: &mut [f64]) {
    VmfSampler::new(mean_dir.len()).sample(rng, mean_dir, kappa, out)
}

/// `A_m(κ) = I_{m/2}(κ)/I_{m/2-1}(κ)`, the mean resultant length `E[x·μ]`
/// of vMF on `S^{m-1}`, by a continued fraction.
pub fn vmf_mean_resultant(m: usize, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let nu = 0.5 * m as f64;
    // I_ν/I_{ν-1} = 1/(2ν/κ + 1/(2(ν+1)/κ + ...)) evaluated bottom-up
    let mut tail = 0.0;
    for k in (0..2000).rev() {
        tail = 1.0 / (2.0 * (nu + k as f64) / kappa + tail);
    }
    tail
}
