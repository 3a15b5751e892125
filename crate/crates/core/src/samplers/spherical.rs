//! The spherical model: density `∝ exp(-(β/2) Σ_w η_w v_w²)` on the sphere
//! `‖v‖² = n^d`, written in eigenbasis coordinates `v = Qᵀθ`.
//!
//! The Gibbs sampler rotates pairs of mode coordinates. With the radius
//! `r` of the pair fixed, the angle `φ` has density
//! `∝ exp(-(β r²/4)(η_i - η_j) cos 2φ)`, a von Mises law in `2φ`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vmf::sample_von_mises_counted;
use super::{adaptive_burn_in, check_sweeps, ChainDiagnostics, FieldSample, LawTag, RngProvenance};
use crate::analysis::stats::{integrated_autocorrelation_time, MomentEstimate};
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::mass::ModelParams;
use crate::rng::{self, StreamRng};
use crate::spectral::{basis_vector, HartleyTransform, SpectrumTable};

/// Largest lattice accepted by the global rejection sampler.
pub const MAX_REJECTION_VOLUME: usize = 64;
/// Largest lattice accepted by the importance-sampling oracle.
pub const MAX_TINY_VOLUME: usize = 16;

pub struct SphericalChain {
    lattice: TorusLattice,
    beta: f64,
    eta: Vec<f64>,
    v: Vec<f64>,
    rng: StreamRng,
    seed: u64,
    index: u64,
    sweeps: u64,
    proposals: u64,
    draws: u64,
    max_drift: f64,
}

impl SphericalChain {
    pub fn new(params: &ModelParams, seed: u64, index: u64) -> Result<Self> {
        let lattice = params.lattice;
        if lattice.volume() < 2 {
            return Err(Error::domain("spherical sampler needs at least two sites"));
        }
        let spec = SpectrumTable::build(&lattice)?;
        let mut rng = rng::stream(seed, "spherical-gibbs", index);
        let radius = (lattice.volume() as f64).sqrt();
        let v = rng::uniform_sphere(&mut rng, lattice.volume(), radius);
        Ok(Self {
            lattice,
            beta: params.beta,
            eta: spec.eigenvalues().to_vec(),
            v,
            rng,
            seed,
            index,
            sweeps: 0,
            proposals: 0,
            draws: 0,
            max_drift: 0.0,
        })
    }

    fn pick_pair(&mut self) -> (usize, usize) {
        let n = self.v.len();
        if self.rng.random::<f64>() < 0.5 {
            (0, self.rng.random_range(1..n))
        } else {
            let i = self.rng.random_range(0..n);
            let mut j = self.rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        }
    }

    /// Resamples the angle of `(v_i, v_j)` from its exact conditional law.
    pub fn pair_move(&mut self, i: usize, j: usize) {
        let (a, b) = (self.v[i], self.v[j]);
        let r2 = a * a + b * b;
        if r2 == 0.0 {
            return;
        }
        let c = 0.25 * self.beta * r2 * (self.eta[i] - self.eta[j]);
        let mu = if c > 0.0 { PI } else { 0.0 };
        let (psi, trials) = sample_von_mises_counted(&mut self.rng, mu, c.abs());
        self.proposals += trials as u64;
        self.draws += 1;
        let flip = if self.rng.random::<bool>() { PI } else { 0.0 };
        let phi = 0.5 * psi + flip;
        let r = r2.sqrt();
        self.v[i] = r * phi.cos();
        self.v[j] = r * phi.sin();
    }

    /// `n^d` random pair moves followed by projection back onto the sphere.
    pub fn sweep(&mut self) {
        for _ in 0..self.v.len() {
            let (i, j) = self.pick_pair();
            self.pair_move(i, j);
        }
        let target = self.v.len() as f64;
        let norm2: f64 = self.v.iter().map(|x| x * x).sum();
        self.max_drift = self.max_drift.max((norm2 / target - 1.0).abs());
        let s = (target / norm2).sqrt();
        self.v.iter_mut().for_each(|x| *x *= s);
        self.sweeps += 1;
    }

    pub fn modes(&self) -> &[f64] {
        &self.v
    }

    pub fn set_modes(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.v.len() {
            return Err(Error::LengthMismatch {
                expected: self.v.len(),
                got: v.len(),
            });
        }
        self.v.copy_from_slice(v);
        Ok(())
    }

    /// `Σ_w η_w v_w²`.
    pub fn energy(&self) -> f64 {
        self.eta.iter().zip(&self.v).map(|(e, x)| e * x * x).sum()
    }

    /// Site-averaged neighbour product `(1/(2d n^d)) Σ_{x∼y} θ_x θ_y`.
    pub fn neighbor_correlation(&self) -> f64 {
        let n = self.v.len() as f64;
        1.0 - self.energy() / (2.0 * self.lattice.dim() as f64 * n)
    }

    /// `m̄ = n^{-d} Σ_x θ_x`.
    pub fn magnetization(&self) -> f64 {
        self.v[0] / (self.v.len() as f64).sqrt()
    }

    /// `θ_0 = n^{-d/2} Σ_w v_w`.
    pub fn theta_origin(&self) -> f64 {
        self.v.iter().sum::<f64>() / (self.v.len() as f64).sqrt()
    }

    pub fn field(&self) -> Vec<f64> {
        let mut f = self.v.clone();
        HartleyTransform::new(&self.lattice)
            .apply(&mut f)
            .expect("length matches lattice");
        f
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn trials_per_draw(&self) -> f64 {
        if self.draws == 0 {
            1.0
        } else {
            self.proposals as f64 / self.draws as f64
        }
    }

    fn to_sample(&self) -> FieldSample {
        FieldSample {
            lattice: self.lattice,
            components: 1,
            values: self.field(),
            law: LawTag::Spherical { beta: self.beta },
            provenance: RngProvenance {
                seed: self.seed,
                stream: "spherical-gibbs".into(),
                index: self.index,
                sweeps: self.sweeps,
            },
        }
    }
}

/// Post-burn-in observable series of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphericalRun {
    pub sample: FieldSample,
    pub diagnostics: ChainDiagnostics,
    pub neighbor: Vec<f64>,
    pub magnetization: Vec<f64>,
    pub theta_origin: Vec<f64>,
    /// One series per requested site.
    pub sites: Vec<Vec<f64>>,
}

impl SphericalRun {
    /// Runs one chain. `burn_in = None` chooses it from the autocorrelation
    /// of the energy `Σ η_w v_w²`.
    pub fn run(
        params: &ModelParams,
        sweeps: u64,
        burn_in: Option<u64>,
        seed: u64,
        index: u64,
        record_sites: &[usize],
    ) -> Result<Self> {
        if let Some(b) = burn_in {
            check_sweeps(sweeps, b)?;
        } else if sweeps < 2 {
            return Err(Error::Config("need at least two sweeps".into()));
        }
        let mut chain = SphericalChain::new(params, seed, index)?;
        let rows: Vec<Vec<f64>> = record_sites
            .iter()
            .map(|&x| {
                if x >= chain.lattice.volume() {
                    Err(Error::domain(format!("site {x} out of range")))
                } else {
                    Ok(basis_vector(&chain.lattice, x))
                }
            })
            .collect::<Result<_>>()?;
        let cap = sweeps as usize;
        let mut energy = Vec::with_capacity(cap);
        let mut neighbor = Vec::with_capacity(cap);
        let mut magnetization = Vec::with_capacity(cap);
        let mut theta = Vec::with_capacity(cap);
        let mut sites: Vec<Vec<f64>> = vec![Vec::with_capacity(cap); rows.len()];
        for _ in 0..sweeps {
            chain.sweep();
            energy.push(chain.energy());
            neighbor.push(chain.neighbor_correlation());
            magnetization.push(chain.magnetization());
            theta.push(chain.theta_origin());
            for (row, out) in rows.iter().zip(sites.iter_mut()) {
                // basis rows equal basis columns: Q is symmetric
                out.push(row.iter().zip(&chain.v).map(|(q, v)| q * v).sum());
            }
        }
        let burn = burn_in.unwrap_or_else(|| adaptive_burn_in(&energy)) as usize;
        let trim = |s: Vec<f64>| s[burn..].to_vec();
        let neighbor = trim(neighbor);
        let tau = integrated_autocorrelation_time(&neighbor);
        let diagnostics = ChainDiagnostics {
            sweeps,
            burn_in: burn as u64,
            trials_per_draw: chain.trials_per_draw(),
            observable: "neighbor_correlation".into(),
            autocorrelation_time: tau,
            ess: neighbor.len() as f64 / (2.0 * tau),
            max_constraint_drift: chain.max_drift(),
        };
        Ok(Self {
            sample: chain.to_sample(),
            diagnostics,
            neighbor,
            magnetization: trim(magnetization),
            theta_origin: trim(theta),
            sites: sites.into_iter().map(trim).collect(),
        })
    }
}

/// Final configuration and diagnostics of one Gibbs chain.
pub fn sample_spherical_gibbs(
    params: &ModelParams,
    sweeps: u64,
    burn_in: Option<u64>,
    seed: u64,
) -> Result<(FieldSample, ChainDiagnostics)> {
    let run = SphericalRun::run(params, sweeps, burn_in, seed, 0, &[])?;
    Ok((run.sample, run.diagnostics))
}

/// Exact draws by rejection from an angular central Gaussian envelope.
/// Returns the site-space fields and the mean number of proposals per draw.
pub fn spherical_rejection(
    params: &ModelParams,
    samples: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let lattice = params.lattice;
    let q = lattice.volume();
    if q > MAX_REJECTION_VOLUME {
        return Err(Error::Resource(format!(
            "rejection sampler limited to {MAX_REJECTION_VOLUME} sites"
        )));
    }
    let spec = SpectrumTable::build(&lattice)?;
    let qf = q as f64;
    // unit-sphere Bingham form x'Ax with A = (β n^d / 2) diag(η)
    let lambda: Vec<f64> = spec
        .eigenvalues()
        .iter()
        .map(|e| 0.5 * params.beta * qf * e)
        .collect();
    let b = acg_parameter(&lambda);
    let omega: Vec<f64> = lambda.iter().map(|l| 1.0 + 2.0 * l / b).collect();
    let log_bound = -(qf - b) / 2.0 + 0.5 * qf * (qf / b).ln();
    let transform = HartleyTransform::new(&lattice);
    let mut r = rng::stream(seed, "spherical-rejection", 0);
    let mut out = Vec::with_capacity(samples);
    let mut proposals = 0u64;
    while out.len() < samples {
        proposals += 1;
        let y: Vec<f64> = omega
            .iter()
            .map(|o| {
                let z: f64 = StandardNormal.sample(&mut r);
                z / o.sqrt()
            })
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x: Vec<f64> = y.iter().map(|v| v / norm).collect();
        let s: f64 = lambda.iter().zip(&x).map(|(l, v)| l * v * v).sum();
        let quad: f64 = omega.iter().zip(&x).map(|(o, v)| o * v * v).sum();
        let log_ratio = -s + 0.5 * qf * quad.ln() - log_bound;
        let u: f64 = r.random();
        if u.ln() < log_ratio {
            let mut field: Vec<f64> = x.iter().map(|v| v * qf.sqrt()).collect();
            transform.apply(&mut field)?;
            out.push(field);
        }
    }
    Ok((out, proposals as f64 / samples.max(1) as f64))
}

/// Solves `Σ_i 1/(b + 2λ_i) = 1` for `b ∈ (0, q]`.
fn acg_parameter(lambda: &[f64]) -> f64 {
    let f = |b: f64| lambda.iter().map(|l| 1.0 / (b + 2.0 * l)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (1e-12, lambda.len() as f64);
    if f(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Self-normalized importance-sampling moments of the spherical model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyMoments {
    pub draws: u64,
    pub ess: f64,
    pub low_ess_warning: bool,
    /// `θ_0`, `θ_0²`, `θ_0 θ_{e_1}`, `θ_0⁴`, in that order.
    pub moments: Vec<MomentEstimate>,
}

const TINY_CHUNK: u64 = 4096;

/// Importance sampling from the uniform sphere with weights
/// `exp((β/2) Σ_{x∼y} θ_x θ_y)` over ordered neighbour pairs.
pub fn spherical_exact_tiny(params: &ModelParams, samples: u64, seed: u64) -> Result<TinyMoments> {
    let lattice = params.lattice;
    let n = lattice.volume();
    if n > MAX_TINY_VOLUME {
        return Err(Error::Resource(format!(
            "importance-sampling oracle limited to {MAX_TINY_VOLUME} sites"
        )));
    }
    let deg = 2 * lattice.dim();
    let mut nbrs = vec![0; n * deg];
    for x in 0..n {
        lattice.neighbor_flats(x, &mut nbrs[x * deg..(x + 1) * deg]);
    }
    let e = lattice.unit(0).flat();
    let shift = params.beta * lattice.dim() as f64 * n as f64;
    const K: usize = 4;
    // per chunk: Σw, Σw², and Σw f, Σw² f, Σw² f² for each observable
    let chunks = samples.div_ceil(TINY_CHUNK);
    use rayon::prelude::*;
    let partial: Vec<[f64; 2 + 3 * K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, "spherical-tiny", c);
            let count = TINY_CHUNK.min(samples - c * TINY_CHUNK);
            let mut acc = [0.0; 2 + 3 * K];
            for _ in 0..count {
                let t = rng::uniform_sphere(&mut r, n, (n as f64).sqrt());
                let mut s = 0.0;
                for x in 0..n {
                    for &y in &nbrs[x * deg..(x + 1) * deg] {
                        s += t[x] * t[y];
                    }
                }
                let w = (0.5 * params.beta * s - shift).exp();
                let f = [t[0], t[0] * t[0], t[0] * t[e], t[0].powi(4)];
                acc[0] += w;
                acc[1] += w * w;
                for k in 0..K {
                    acc[2 + 3 * k] += w * f[k];
                    acc[3 + 3 * k] += w * w * f[k];
                    acc[4 + 3 * k] += w * w * f[k] * f[k];
                }
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 2 + 3 * K];
    for p in &partial {
        for (t, v) in tot.iter_mut().zip(p) {
            *t += v;
        }
    }
    let (sw, sw2) = (tot[0], tot[1]);
    let ess = sw * sw / sw2;
    let names = ["theta0", "theta0^2", "theta0*theta_e", "theta0^4"];
    let moments = (0..K)
        .map(|k| {
            let mu = tot[2 + 3 * k] / sw;
            let var = (tot[4 + 3 * k] - 2.0 * mu * tot[3 + 3 * k] + mu * mu * sw2) / (sw * sw);
            MomentEstimate {
                observable: names[k].into(),
                value: mu,
                std_error: var.max(0.0).sqrt(),
                n_eff: ess,
            }
        })
        .collect();
    Ok(TinyMoments {
        draws: samples,
        ess,
        low_ess_warning: ess < 100.0,
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::stats::chain_mean;

    #[test]
    fn chain_stays_on_sphere() {
        let l = TorusLattice::new(3, 4).unwrap();
        let p = ModelParams::new(&l, 0.4).unwrap();
        let mut c = SphericalChain::new(&p, 1, 0).unwrap();
        for _ in 0..2000 {
            c.sweep();
        }
        assert!(c.max_drift() < 1e-8, "{}", c.max_drift());
        let f = c.field();
        let norm: f64 = f.iter().map(|x| x * x).sum();
        assert!((norm / l.volume() as f64 - 1.0).abs() < 1e-9);
        assert!((c.theta_origin() - f[0]).abs() < 1e-10);
        let mean = f.iter().sum::<f64>() / l.volume() as f64;
        assert!((c.magnetization() - mean).abs() < 1e-10);
    }

    #[test]
    fn neighbor_correlation_matches_direct_sum() {
        let l = TorusLattice::new(2, 5).unwrap();
        let p = ModelParams::new(&l, 0.3).unwrap();
        let mut c = SphericalChain::new(&p, 2, 0).unwrap();
        c.sweep();
        let f = c.field();
        let mut nb = [0; 4];
        let mut s = 0.0;
        for x in 0..l.volume() {
            l.neighbor_flats(x, &mut nb);
            s += nb.iter().map(|&y| f[x] * f[y]).sum::<f64>();
        }
        let direct = s / (4.0 * l.volume() as f64);
        assert!((direct - c.neighbor_correlation()).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_is_uniform() {
        // fourth moment of a coordinate of the uniform sphere: 3N/(N+2)
        let l = TorusLattice::new(2, 3).unwrap();
        let p = ModelParams::new(&l, 0.0).unwrap();
        let runs: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                SphericalRun::run(&p, 20_000, Some(100), 3, i, &[])
                    .unwrap()
                    .theta_origin
                    .iter()
                    .map(|t| t.powi(4))
                    .collect()
            })
            .collect();
        let est = chain_mean("theta0^4", &runs);
        let n = l.volume() as f64;
        let want = 3.0 * n / (n + 2.0);
        assert!(
            (est.value - want).abs() < 4.0 * est.std_error,
            "{est:?} vs {want}"
        );
    }

    #[test]
    fn gibbs_matches_rejection_and_importance_sampling() {
        let l = TorusLattice::new(2, 2).unwrap();
        let p = ModelParams::new(&l, 0.6).unwrap();
        let tiny = spherical_exact_tiny(&p, 400_000, 5).unwrap();
        assert!(!tiny.low_ess_warning);
        let (fields, trials) = spherical_rejection(&p, 100_000, 6).unwrap();
        assert!(trials >= 1.0);
        let e = l.unit(0).flat();
        let prod: Vec<f64> = fields.iter().map(|f| f[0] * f[e]).collect();
        let rej = crate::analysis::stats::iid_mean("theta0*theta_e", &prod);
        let runs: Vec<Vec<f64>> = (0..4)
            .map(|i| SphericalRun::run(&p, 50_000, Some(500), 7, i, &[0, e]).unwrap())
            .map(|r| {
                r.sites[0]
                    .iter()
                    .zip(&r.sites[1])
                    .map(|(a, b)| a * b)
                    .collect()
            })
            .collect();
        let gibbs = chain_mean("theta0*theta_e", &runs);
        let is = &tiny.moments[2];
        let tol = |a: &MomentEstimate, b: &MomentEstimate| {
            4.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
        };
        assert!(
            (gibbs.value - is.value).abs() < tol(&gibbs, is),
            "{gibbs:?} {is:?}"
        );
        assert!(
            (rej.value - is.value).abs() < tol(&rej, is),
            "{rej:?} {is:?}"
        );
    }

    #[test]
    fn acg_parameter_solves_equation() {
        let lambda = [0.0, 1.0, 1.0, 5.0];
        let b = acg_parameter(&lambda);
        let s: f64 = lambda.iter().map(|l| 1.0 / (b + 2.0 * l)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(acg_parameter(&[0.0; 3]), 3.0);
    }

    #[test]
    fn sweeps_must_exceed_burn_in() {
        let l = TorusLattice::new(2, 2).unwrap();
        let p = ModelParams::new(&l, 0.6).unwrap();
        assert!(sample_spherical_gibbs(&p, 10, Some(10), 1).is_err());
    }
}
