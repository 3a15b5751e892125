//! Spectrum of `-Δ` on the torus and the real orthonormal eigenbasis
//! `q^w_x = n^{-d/2} Π_i cas(2π x_i w_i / n)` with `cas = cos + sin`.
//!
//! The basis is the tensor product of one-dimensional discrete Hartley
//! bases. It is symmetric and orthogonal, so the same transform maps site
//! space to mode space and back.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::TorusLattice;

/// Largest lattice for which a spectrum table is built.
pub const MAX_SPECTRUM_VOLUME: usize = 1 << 27;

/// Largest lattice for which dense basis and Laplacian matrices are assembled.
pub const MAX_DENSE_VOLUME: usize = 4096;

/// One-dimensional eigenvalues `2(1 - cos(2πk/n))`, bitwise symmetric in `k ↔ n-k`.
pub fn axis_eigenvalues(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let r = k.min(n - k);
            if r == 0 {
                0.0
            } else if 2 * r == n {
                4.0
            } else {
                2.0 * (1.0 - (2.0 * PI * r as f64 / n as f64).cos())
            }
        })
        .collect()
}

/// Sum of per-axis eigenvalues taken in sorted order, so that modes related
/// by a lattice symmetry get bit-identical eigenvalues.
fn canonical_sum(parts: &mut [f64]) -> f64 {
    parts.sort_by(f64::total_cmp);
    parts.iter().sum()
}

/// `η_w = 2 Σ_i (1 - cos(2π w_i / n))`.
pub fn eigenvalue(lattice: &TorusLattice, w: &[usize]) -> Result<f64> {
    let site = lattice.site(w)?;
    let axis = axis_eigenvalues(lattice.side());
    let mut parts: Vec<f64> = lattice
        .coords_unchecked(site.flat())
        .iter()
        .map(|&k| axis[k])
        .collect();
    Ok(canonical_sum(&mut parts))
}

#[derive(Debug, Clone)]
pub struct SpectrumTable {
    lattice: TorusLattice,
    eigenvalues: Vec<f64>,
    sorted: Vec<usize>,
}

impl SpectrumTable {
    pub fn build(lattice: &TorusLattice) -> Result<Self> {
        let volume = lattice.volume();
        if volume > MAX_SPECTRUM_VOLUME {
            return Err(Error::Resource(format!(
                "spectrum table for {volume} modes exceeds {MAX_SPECTRUM_VOLUME}"
            )));
        }
        let axis = axis_eigenvalues(lattice.side());
        let d = lattice.dim();
        let mut parts = vec![0.0; d];
        let eigenvalues: Vec<f64> = (0..volume)
            .map(|w| {
                let mut rest = w;
                for p in parts.iter_mut().rev() {
                    *p = axis[rest % lattice.side()];
                    rest /= lattice.side();
                }
                canonical_sum(&mut parts)
            })
            .collect();
        let mut sorted: Vec<usize> = (0..volume).collect();
        sorted.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]).then(a.cmp(&b)));
        Ok(Self {
            lattice: *lattice,
            eigenvalues,
            sorted,
        })
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    /// Eigenvalues indexed by flat mode index.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Flat mode indices in nondecreasing eigenvalue order, ties by index.
    pub fn sorted_view(&self) -> &[usize] {
        &self.sorted
    }

    /// `η_k` in the nondecreasing 1-based enumeration (`η_1 = 0`).
    pub fn kth(&self, k: usize) -> Option<f64> {
        k.checked_sub(1)
            .and_then(|i| self.sorted.get(i))
            .map(|&w| self.eigenvalues[w])
    }

    /// Nondecreasing eigenvalues `η_1 ≤ η_2 ≤ ...`.
    pub fn sorted_eigenvalues(&self) -> Vec<f64> {
        self.sorted.iter().map(|&w| self.eigenvalues[w]).collect()
    }

    /// Distinct eigenvalues with their mode lists, ascending.
    pub fn eigen_groups(&self) -> Vec<(f64, Vec<usize>)> {
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for &w in &self.sorted {
            let eta = self.eigenvalues[w];
            match groups.last_mut() {
                Some((value, modes)) if value.to_bits() == eta.to_bits() => modes.push(w),
                _ => groups.push((eta, vec![w])),
            }
        }
        groups
    }

    /// Distinct eigenvalues with multiplicities, ascending.
    pub fn multiplicities(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &w in &self.sorted {
            let eta = self.eigenvalues[w];
            match out.last_mut() {
                Some((value, m)) if value.to_bits() == eta.to_bits() => *m += 1,
                _ => out.push((eta, 1)),
            }
        }
        out
    }
}

/// Coefficients of a field in the eigenbasis, indexed by flat mode index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    pub coefficients: Vec<f64>,
}

/// Fast separable Hartley transform on one lattice.
#[derive(Clone)]
pub struct HartleyTransform {
    lattice: TorusLattice,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for HartleyTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HartleyTransform")
            .field("lattice", &self.lattice)
            .finish()
    }
}

impl HartleyTransform {
    pub fn new(lattice: &TorusLattice) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(lattice.side());
        Self {
            lattice: *lattice,
            fft,
        }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    /// Applies the orthonormal transform in place. The transform is an
    /// involution, so this serves both directions.
    pub fn apply(&self, data: &mut [f64]) -> Result<()> {
        let volume = self.lattice.volume();
        if data.len() != volume {
            return Err(Error::LengthMismatch {
                expected: volume,
                got: data.len(),
            });
        }
        let n = self.lattice.side();
        let scale = 1.0 / (n as f64).sqrt();
        let mut buf = vec![Complex::new(0.0, 0.0); volume];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for axis in 0..self.lattice.dim() {
            let stride = self.lattice.stride(axis);
            let block = n * stride;
            // gather lines along `axis` contiguously
            let mut line = 0;
            for outer in (0..volume).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..n {
                        buf[line * n + k] = Complex::new(data[base + k * stride], 0.0);
                    }
                    line += 1;
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let mut line = 0;
            for outer in (0..volume).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..n {
                        let z = buf[line * n + k];
                        data[base + k * stride] = (z.re - z.im) * scale;
                    }
                    line += 1;
                }
            }
        }
        Ok(())
    }

    pub fn to_modes(&self, field: &[f64]) -> Result<ModeVector> {
        let mut coefficients = field.to_vec();
        self.apply(&mut coefficients)?;
        Ok(ModeVector { coefficients })
    }

    pub fn from_modes(&self, modes: &ModeVector) -> Result<Vec<f64>> {
        let mut field = modes.coefficients.clone();
        self.apply(&mut field)?;
        Ok(field)
    }
}

fn cas(k: usize, n: usize) -> f64 {
    let theta = 2.0 * PI * (k % n) as f64 / n as f64;
    theta.cos() + theta.sin()
}

/// `q^w_x` evaluated directly.
pub fn basis_value(lattice: &TorusLattice, w: usize, x: usize) -> f64 {
    let n = lattice.side();
    let cw = lattice.coords_unchecked(w);
    let cx = lattice.coords_unchecked(x);
    let norm = (lattice.volume() as f64).sqrt();
    cw.iter()
        .zip(&cx)
        .map(|(&a, &b)| cas(a * b, n))
        .product::<f64>()
        / norm
}

/// Column `w` of the eigenbasis, `q^w` as a site-space vector.
pub fn basis_vector(lattice: &TorusLattice, w: usize) -> Vec<f64> {
    (0..lattice.volume())
        .map(|x| basis_value(lattice, w, x))
        .collect()
}

fn check_dense(lattice: &TorusLattice) -> Result<()> {
    if lattice.volume() > MAX_DENSE_VOLUME {
        return Err(Error::Resource(format!(
            "dense matrices limited to {MAX_DENSE_VOLUME} sites, lattice has {}",
            lattice.volume()
        )));
    }
    Ok(())
}

/// Dense basis matrix `Q[x, w] = q^w_x`.
pub fn basis_matrix(lattice: &TorusLattice) -> Result<DMatrix<f64>> {
    check_dense(lattice)?;
    let v = lattice.volume();
    Ok(DMatrix::from_fn(v, v, |x, w| basis_value(lattice, w, x)))
}

/// Dense `-Δ`: `2d` on the diagonal, `-1` per ordered neighbour incidence.
pub fn laplacian_matrix(lattice: &TorusLattice) -> Result<DMatrix<f64>> {
    check_dense(lattice)?;
    let v = lattice.volume();
    let mut m = DMatrix::zeros(v, v);
    let mut nb = vec![0; 2 * lattice.dim()];
    for x in 0..v {
        m[(x, x)] += 2.0 * lattice.dim() as f64;
        lattice.neighbor_flats(x, &mut nb);
        for &y in &nb {
            m[(x, y)] -= 1.0;
        }
    }
    Ok(m)
}

/// Direct `O(n^{2d})` transform, used to cross-check the fast path.
pub fn dense_transform(lattice: &TorusLattice, data: &[f64]) -> Result<Vec<f64>> {
    if data.len() != lattice.volume() {
        return Err(Error::LengthMismatch {
            expected: lattice.volume(),
            got: data.len(),
        });
    }
    let q = basis_matrix(lattice)?;
    let v = nalgebra::DVector::from_column_slice(data);
    Ok((q.transpose() * v).iter().copied().collect())
}
