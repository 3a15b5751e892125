//! Heat-bath dynamics for the spin O(N) model with spins on `√N·S^{N-1}`.
//!
//! The single-site conditional of `S_x = √N u_x` is von Mises–Fisher with
//! direction `h_x = Σ_{y∼x} u_y` and concentration `β N |h_x|`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vmf::VmfSampler;
use super::{adaptive_burn_in, check_sweeps, ChainDiagnostics, FieldSample, LawTag, RngProvenance};
use crate::analysis::stats::integrated_autocorrelation_time;
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::mass::ModelParams;
use crate::rng::{self, StreamRng};

pub struct SpinChain {
    lattice: TorusLattice,
    beta: f64,
    n: usize,
    /// Unit vectors, `u[x * n + i]`.
    u: Vec<f64>,
    nbrs: Vec<usize>,
    vmf: VmfSampler,
    rng: StreamRng,
    seed: u64,
    index: u64,
    sweeps: u64,
    max_drift: f64,
}

impl SpinChain {
    pub fn new(params: &ModelParams, n: usize, seed: u64, index: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!(
                "spin dimension must be ≥ 2, got {n}"
            )));
        }
        let lattice = params.lattice;
        let v = lattice.volume();
        let deg = 2 * lattice.dim();
        let mut nbrs = vec![0; v * deg];
        for x in 0..v {
            lattice.neighbor_flats(x, &mut nbrs[x * deg..(x + 1) * deg]);
        }
        let mut rng = rng::stream(seed, "spin-heat-bath", index);
        let mut u = Vec::with_capacity(v * n);
        for _ in 0..v {
            u.extend(rng::uniform_sphere(&mut rng, n, 1.0));
        }
        Ok(Self {
            lattice,
            beta: params.beta,
            n,
            u,
            nbrs,
            vmf: VmfSampler::new(n),
            rng,
            seed,
            index,
            sweeps: 0,
            max_drift: 0.0,
        })
    }

    pub fn spin_dim(&self) -> usize {
        self.n
    }

    /// Unit vector at site `x`.
    pub fn unit_spin(&self, x: usize) -> &[f64] {
        &self.u[x * self.n..(x + 1) * self.n]
    }

    /// One systematic sweep over all sites.
    pub fn sweep(&mut self) {
        let n = self.n;
        let deg = 2 * self.lattice.dim();
        let mut h = vec![0.0; n];
        let mut out = vec![0.0; n];
        let kappa_scale = self.beta * n as f64;
        for x in 0..self.lattice.volume() {
            h.iter_mut().for_each(|v| *v = 0.0);
            for &y in &self.nbrs[x * deg..(x + 1) * deg] {
                for (hi, ui) in h.iter_mut().zip(&self.u[y * n..(y + 1) * n]) {
                    *hi += ui;
                }
            }
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            let kappa = kappa_scale * norm;
            if norm > 0.0 {
                h.iter_mut().for_each(|v| *v /= norm);
            } else {
                h.iter_mut().for_each(|v| *v = 0.0);
                h[0] = 1.0;
            }
            self.vmf.sample(&mut self.rng, &h, kappa, &mut out);
            let r2: f64 = out.iter().map(|v| v * v).sum();
            self.max_drift = self.max_drift.max((r2 - 1.0).abs());
            let s = 1.0 / r2.sqrt();
            for (ui, o) in self.u[x * n..(x + 1) * n].iter_mut().zip(&out) {
                *ui = o * s;
            }
        }
        self.sweeps += 1;
    }

    /// `(1/(2d n^d)) Σ_{x∼y} u_x·u_y`, the per-coordinate neighbour product.
    pub fn neighbor_correlation(&self) -> f64 {
        let n = self.n;
        let deg = 2 * self.lattice.dim();
        let v = self.lattice.volume();
        let mut s = 0.0;
        for x in 0..v {
            let ux = &self.u[x * n..(x + 1) * n];
            for &y in &self.nbrs[x * deg..(x + 1) * deg] {
                s += ux
                    .iter()
                    .zip(&self.u[y * n..(y + 1) * n])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        s / (deg * v) as f64
    }

    /// Site average of spin coordinate `c`, `n^{-d} Σ_x S^c_x`.
    pub fn magnetization(&self, c: usize) -> f64 {
        let v = self.lattice.volume();
        let s: f64 = (0..v).map(|x| self.u[x * self.n + c]).sum();
        s * (self.n as f64).sqrt() / v as f64
    }

    /// `n^{-d} Σ_x S_x`.
    pub fn magnetization_vector(&self) -> Vec<f64> {
        let v = self.lattice.volume();
        let mut m = vec![0.0; self.n];
        for x in 0..v {
            m.iter_mut()
                .zip(self.unit_spin(x))
                .for_each(|(a, b)| *a += b);
        }
        let s = (self.n as f64).sqrt() / v as f64;
        m.iter_mut().for_each(|a| *a *= s);
        m
    }

    /// `(1/(d n^d)) Σ_a Σ_x u_x·u_{σ_a(x)}` for one translation table per axis.
    fn shifted_correlation(&self, tables: &[Vec<usize>]) -> f64 {
        let mut s = 0.0;
        for t in tables {
            for (x, &y) in t.iter().enumerate() {
                s += dot(self.unit_spin(x), self.unit_spin(y));
            }
        }
        s / (tables.len() * self.lattice.volume()) as f64
    }

    /// `S^c_x`.
    pub fn coordinate(&self, x: usize, c: usize) -> f64 {
        self.u[x * self.n + c] * (self.n as f64).sqrt()
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    /// First `m` coordinates of `S` at every site.
    pub fn project(&self, m: usize) -> Result<FieldSample> {
        if m == 0 || m > self.n {
            return Err(Error::domain(format!(
                "projection to {m} of {} coordinates",
                self.n
            )));
        }
        let scale = (self.n as f64).sqrt();
        let values = (0..self.lattice.volume())
            .flat_map(|x| {
                self.u[x * self.n..x * self.n + m]
                    .iter()
                    .map(move |v| v * scale)
            })
            .collect();
        Ok(FieldSample {
            lattice: self.lattice,
            components: m,
            values,
            law: LawTag::SpinOn {
                beta: self.beta,
                n: self.n,
                projected: m,
            },
            provenance: RngProvenance {
                seed: self.seed,
                stream: "spin-heat-bath".into(),
                index: self.index,
                sweeps: self.sweeps,
            },
        })
    }
}

/// Settings of [`SpinRun::run`].
#[derive(Debug, Clone)]
pub struct SpinRunOptions {
    pub sweeps: u64,
    /// `None` chooses the burn-in from the neighbour-correlation series.
    pub burn_in: Option<u64>,
    pub seed: u64,
    pub index: u64,
    /// Number of leading coordinates kept in the final sample and in site series.
    pub project_to: usize,
    pub record_sites: Vec<usize>,
    /// Observe the chain in an independent uniformly rotated frame after
    /// every sweep. The measure is O(N) invariant, so this is an exact move
    /// that decorrelates the direction of the magnetization.
    pub global_rotation: bool,
    /// Axis offsets `k` for translation-averaged correlations `C(k e)`.
    pub correlation_shifts: Vec<usize>,
}

impl SpinRunOptions {
    pub fn new(sweeps: u64, burn_in: Option<u64>, seed: u64, index: u64) -> Self {
        Self {
            sweeps,
            burn_in,
            seed,
            index,
            project_to: 1,
            record_sites: Vec::new(),
            global_rotation: false,
            correlation_shifts: Vec::new(),
        }
    }
}

/// Post-burn-in observable series of one spin chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinRun {
    pub sample: FieldSample,
    pub diagnostics: ChainDiagnostics,
    pub neighbor: Vec<f64>,
    /// Magnetization of the first coordinate.
    pub magnetization: Vec<f64>,
    /// `|m̄|² = Σ_c (m̄^c)²`.
    pub magnetization_norm2: Vec<f64>,
    /// `S^c_x` for each requested site `x` and projected coordinate `c`,
    /// at index `k * project_to + c` for the `k`-th site.
    pub sites: Vec<Vec<f64>>,
    /// `(1/(d n^d N)) Σ_x Σ_a S_x·S_{x+k e_a}`, one series per requested shift.
    pub correlations: Vec<Vec<f64>>,
    /// `(1/(d n^d)) Σ_x Σ_a S^1_x S^1_{x+k e_a}` for the first observed coordinate.
    pub coordinate_correlations: Vec<Vec<f64>>,
    /// `n^{-d} Σ_x S^1_x S^2_x`, present when at least two coordinates are projected.
    pub cross_coordinate: Vec<f64>,
}

impl SpinRun {
    pub fn run(params: &ModelParams, n: usize, opts: &SpinRunOptions) -> Result<Self> {
        let sweeps = opts.sweeps;
        if let Some(b) = opts.burn_in {
            check_sweeps(sweeps, b)?;
        } else if sweeps < 2 {
            return Err(Error::Config("need at least two sweeps".into()));
        }
        let p = opts.project_to;
        if p == 0 || p > n {
            return Err(Error::domain(format!(
                "projection to {p} of {n} coordinates"
            )));
        }
        let lattice = params.lattice;
        let v = lattice.volume();
        if let Some(&x) = opts.record_sites.iter().find(|&&x| x >= v) {
            return Err(Error::domain(format!("site {x} out of range")));
        }
        let mut chain = SpinChain::new(params, n, opts.seed, opts.index)?;
        let mut frame_rng = rng::stream(opts.seed, "spin-rotation", opts.index);
        let shift_tables: Vec<Vec<Vec<usize>>> = opts
            .correlation_shifts
            .iter()
            .map(|&k| {
                (0..lattice.dim())
                    .map(|a| lattice.translation(a, k))
                    .collect()
            })
            .collect();
        let cap = sweeps as usize;
        let mut neighbor = Vec::with_capacity(cap);
        let mut magnetization = Vec::with_capacity(cap);
        let mut norm2 = Vec::with_capacity(cap);
        let mut sites: Vec<Vec<f64>> = vec![Vec::with_capacity(cap); opts.record_sites.len() * p];
        let mut correlations: Vec<Vec<f64>> = vec![Vec::with_capacity(cap); shift_tables.len()];
        let mut coord_corr: Vec<Vec<f64>> = vec![Vec::with_capacity(cap); shift_tables.len()];
        let mut cross = Vec::new();
        let mut first = vec![0.0; v];
        let mut second = vec![0.0; v];
        let root_n = (n as f64).sqrt();
        for _ in 0..sweeps {
            chain.sweep();
            neighbor.push(chain.neighbor_correlation());
            let mvec = chain.magnetization_vector();
            norm2.push(mvec.iter().map(|m| m * m).sum());
            let frame = if opts.global_rotation {
                random_frame(&mut frame_rng, n, p)
            } else {
                standard_frame(n, p)
            };
            magnetization.push(dot(&frame[0], &mvec));
            for (k, &x) in opts.record_sites.iter().enumerate() {
                for (c, row) in frame.iter().enumerate() {
                    sites[k * p + c].push(root_n * dot(row, chain.unit_spin(x)));
                }
            }
            for (table, out) in shift_tables.iter().zip(correlations.iter_mut()) {
                out.push(chain.shifted_correlation(table));
            }
            if !shift_tables.is_empty() || p > 1 {
                for (x, f) in first.iter_mut().enumerate() {
                    *f = root_n * dot(&frame[0], chain.unit_spin(x));
                }
            }
            for (tables, out) in shift_tables.iter().zip(coord_corr.iter_mut()) {
                let s: f64 = tables
                    .iter()
                    .map(|t| {
                        t.iter()
                            .enumerate()
                            .map(|(x, &y)| first[x] * first[y])
                            .sum::<f64>()
                    })
                    .sum();
                out.push(s / (tables.len() * v) as f64);
            }
            if p > 1 {
                for (x, f) in second.iter_mut().enumerate() {
                    *f = root_n * dot(&frame[1], chain.unit_spin(x));
                }
                cross.push(dot(&first, &second) / v as f64);
            }
        }
        let burn = opts.burn_in.unwrap_or_else(|| adaptive_burn_in(&neighbor)) as usize;
        let trim = |s: Vec<f64>| s[burn..].to_vec();
        let neighbor = trim(neighbor);
        let tau = integrated_autocorrelation_time(&neighbor);
        let diagnostics = ChainDiagnostics {
            sweeps,
            burn_in: burn as u64,
            trials_per_draw: 1.0,
            observable: "neighbor_correlation".into(),
            autocorrelation_time: tau,
            ess: neighbor.len() as f64 / (2.0 * tau),
            max_constraint_drift: chain.max_drift(),
        };
        Ok(Self {
            sample: chain.project(p)?,
            diagnostics,
            neighbor,
            magnetization: trim(magnetization),
            magnetization_norm2: trim(norm2),
            sites: sites.into_iter().map(trim).collect(),
            correlations: correlations.into_iter().map(trim).collect(),
            coordinate_correlations: coord_corr.into_iter().map(trim).collect(),
            cross_coordinate: if p > 1 { trim(cross) } else { Vec::new() },
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standard_frame(n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect()
}

/// First `p` rows of a Haar-distributed orthogonal matrix.
fn random_frame<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p);
    while rows.len() < p {
        let mut g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let c = dot(r, &g);
            g.iter_mut().zip(r).for_each(|(gi, ri)| *gi -= c * ri);
        }
        let norm = dot(&g, &g).sqrt();
        if norm > 1e-8 {
            g.iter_mut().for_each(|x| *x /= norm);
            rows.push(g);
        }
    }
    rows
}

/// Final configuration, projected to its first `project_to` coordinates.
pub fn sample_spin_on_gibbs(
    params: &ModelParams,
    n: usize,
    sweeps: u64,
    burn_in: Option<u64>,
    seed: u64,
    project_to: usize,
) -> Result<(FieldSample, ChainDiagnostics)> {
    let opts = SpinRunOptions {
        project_to,
        ..SpinRunOptions::new(sweeps, burn_in, seed, 0)
    };
    let run = SpinRun::run(params, n, &opts)?;
    Ok((run.sample, run.diagnostics))
}
