//! Green functions of `-Δ + m²`: massive and zero-average on the torus,
//! Dirichlet on the torus minus a set, and on `ℤ^d`.
//!
//! Convention throughout: `-Δf(x) = 2d f(x) - Σ_{y∼x} f(y)`, so that
//! `G_{ℤ³}(0,0) ≈ 0.2527`. Kernels of the `(1/2d)`-normalized Laplacian are
//! `2d` times these.

pub mod dirichlet;
pub mod walk;
pub mod zd;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{lift_coord, SiteIndex, TorusLattice};
use crate::numeric::compensated_sum;
use crate::spectral::{axis_eigenvalues, HartleyTransform, SpectrumTable};

pub use dirichlet::{harmonic_extension, DirichletOperator};
pub use walk::{
    rw_green_oracle, rw_harmonic_oracle, zd_green_walk_series, RwEstimate, WalkDomain, WalkSeries,
};
pub use zd::{beta_critical, solve_zd_mass, zd_green};

/// Tag written into exported kernels.
pub const CONVENTION_TAG: &str = "minus-laplacian-unnormalized";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GreenKind {
    MassiveTorus { mass2: f64 },
    ZeroAverageTorus,
    DirichletTorus { mass2: f64, removed: usize },
    LatticeZd { mass2: f64 },
}

impl GreenKind {
    pub fn label(&self) -> &'static str {
        match self {
            GreenKind::MassiveTorus { .. } => "massive",
            GreenKind::ZeroAverageTorus => "zero-avg",
            GreenKind::DirichletTorus { .. } => "dirichlet",
            GreenKind::LatticeZd { .. } => "zd",
        }
    }

    pub fn mass2(&self) -> f64 {
        match *self {
            GreenKind::MassiveTorus { mass2 }
            | GreenKind::DirichletTorus { mass2, .. }
            | GreenKind::LatticeZd { mass2 } => mass2,
            GreenKind::ZeroAverageTorus => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    /// Translation orbit `G(0, ·)`.
    Orbit(Vec<f64>),
    Dirichlet(Box<DirichletOperator>),
    Zd,
}

/// A covariance kernel with evaluation and trace queries.
#[derive(Debug, Clone)]
pub struct GreenTable {
    kind: GreenKind,
    dim: usize,
    lattice: Option<TorusLattice>,
    in_model_scope: bool,
    trace: Option<f64>,
    repr: Repr,
}

/// Spectral weights of a translation-invariant torus kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeWeights {
    /// `1/(m² + η_w)`.
    Massive(f64),
    /// `1/η_w` for `w ≠ 0`, zero at `w = 0`.
    ZeroAverage,
}

impl ModeWeights {
    #[inline]
    pub fn weight(&self, eta: f64) -> f64 {
        match *self {
            ModeWeights::Massive(m2) => 1.0 / (m2 + eta),
            ModeWeights::ZeroAverage => {
                if eta == 0.0 {
                    0.0
                } else {
                    1.0 / eta
                }
            }
        }
    }
}

fn check_mass(mass2: f64, allow_zero: bool) -> Result<()> {
    let ok = mass2.is_finite() && (mass2 > 0.0 || (allow_zero && mass2 == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "m² must be {} and finite, got {mass2}",
            if allow_zero { "≥ 0" } else { "> 0" }
        )))
    }
}

fn orbit_from_weights(lattice: &TorusLattice, weights: ModeWeights) -> Result<(Vec<f64>, f64)> {
    let spectrum = SpectrumTable::build(lattice)?;
    let mut lambda: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .map(|&e| weights.weight(e))
        .collect();
    let trace = compensated_sum(lambda.iter().copied());
    HartleyTransform::new(lattice).apply(&mut lambda)?;
    let scale = 1.0 / (lattice.volume() as f64).sqrt();
    lambda.iter_mut().for_each(|v| *v *= scale);
    Ok((lambda, trace))
}

/// Massive torus Green function `(-Δ + m²)^{-1}`.
pub fn massive_green(lattice: &TorusLattice, mass2: f64) -> Result<GreenTable> {
    check_mass(mass2, false)?;
    let (orbit, trace) = orbit_from_weights(lattice, ModeWeights::Massive(mass2))?;
    Ok(GreenTable {
        kind: GreenKind::MassiveTorus { mass2 },
        dim: lattice.dim(),
        lattice: Some(*lattice),
        in_model_scope: lattice.dim() >= 2,
        trace: Some(trace),
        repr: Repr::Orbit(orbit),
    })
}

/// Zero-average torus Green function, the pseudo-inverse of `-Δ`.
/// Defined for every dimension; tables with `d < 3` are tagged out of scope.
pub fn zero_average_green(lattice: &TorusLattice) -> Result<GreenTable> {
    let (orbit, trace) = orbit_from_weights(lattice, ModeWeights::ZeroAverage)?;
    Ok(GreenTable {
        kind: GreenKind::ZeroAverageTorus,
        dim: lattice.dim(),
        lattice: Some(*lattice),
        in_model_scope: lattice.dim() >= 3,
        trace: Some(trace),
        repr: Repr::Orbit(orbit),
    })
}

/// Green function of `-Δ + m²` with zero boundary values on `removed`.
pub fn dirichlet_green(
    lattice: &TorusLattice,
    removed: &[SiteIndex],
    mass2: f64,
) -> Result<GreenTable> {
    check_mass(mass2, true)?;
    let mask = dirichlet::site_mask(lattice, removed)?;
    let count = mask.iter().filter(|&&m| m).count();
    let op = DirichletOperator::new(lattice, mask, mass2)?;
    let trace = op.trace();
    Ok(GreenTable {
        kind: GreenKind::DirichletTorus {
            mass2,
            removed: count,
        },
        dim: lattice.dim(),
        lattice: Some(*lattice),
        in_model_scope: true,
        trace,
        repr: Repr::Dirichlet(Box::new(op)),
    })
}

/// Green function on `ℤ^d`, evaluated on demand by quadrature.
pub fn zd_green_table(dim: usize, mass2: f64) -> Result<GreenTable> {
    check_mass(mass2, dim >= 3)?;
    if dim == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    Ok(GreenTable {
        kind: GreenKind::LatticeZd { mass2 },
        dim,
        lattice: None,
        in_model_scope: true,
        trace: None,
        repr: Repr::Zd,
    })
}

impl GreenTable {
    pub fn kind(&self) -> GreenKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lattice(&self) -> Option<&TorusLattice> {
        self.lattice.as_ref()
    }

    /// False for configurations outside the model's stated scope
    /// (for example a zero-average kernel in `d = 2`).
    pub fn in_model_scope(&self) -> bool {
        self.in_model_scope
    }

    /// `Σ_x G(x,x)` where finite and available.
    pub fn trace(&self) -> Option<f64> {
        self.trace
    }

    /// Translation orbit `G(0, ·)` for translation-invariant torus kernels.
    pub fn orbit(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Orbit(o) => Some(o),
            _ => None,
        }
    }

    pub fn dirichlet_operator(&self) -> Option<&DirichletOperator> {
        match &self.repr {
            Repr::Dirichlet(op) => Some(op),
            _ => None,
        }
    }

    fn torus(&self) -> Result<&TorusLattice> {
        self.lattice
            .as_ref()
            .ok_or_else(|| Error::domain("kernel is not defined on a torus"))
    }

    pub fn value(&self, x: SiteIndex, y: SiteIndex) -> Result<f64> {
        let lattice = self.torus()?;
        for s in [x, y] {
            if s.flat() >= lattice.volume() {
                return Err(Error::domain(format!("site {} out of range", s.flat())));
            }
        }
        match &self.repr {
            Repr::Orbit(o) => Ok(o[lattice.difference(x, y).flat()]),
            Repr::Dirichlet(op) => Ok(op.green_column(y.flat())?[x.flat()]),
            Repr::Zd => unreachable!("ℤ^d tables carry no torus"),
        }
    }

    /// `G(0, y)` for an integer offset `y`, wrapped onto the torus if needed.
    pub fn value_at_offset(&self, y: &[i64]) -> Result<f64> {
        if y.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        match &self.repr {
            Repr::Zd => zd_green(self.dim, self.kind.mass2(), y),
            _ => {
                let lattice = self.torus()?;
                let site = lattice.site_wrapping(y)?;
                self.value(lattice.origin(), site)
            }
        }
    }

    /// `G(·, y)` as a site-space vector.
    pub fn column(&self, y: SiteIndex) -> Result<Vec<f64>> {
        let lattice = *self.torus()?;
        match &self.repr {
            Repr::Orbit(o) => {
                if y.flat() >= lattice.volume() {
                    return Err(Error::domain(format!("site {} out of range", y.flat())));
                }
                Ok((0..lattice.volume())
                    .map(|x| o[lattice.combine(y.flat(), x, |a, b, n| (a + n - b) % n)])
                    .collect())
            }
            Repr::Dirichlet(op) => op.green_column(y.flat()),
            Repr::Zd => unreachable!("ℤ^d tables carry no torus"),
        }
    }

    /// Values `G(0, dx)` over the canonical box `[-⌊n/2⌋, n-⌊n/2⌋)^d`,
    /// in row-major order of the box. For `ℤ^d` tables `side` fixes the box.
    pub fn kernel_box(&self, side: usize) -> Result<Vec<(Vec<i64>, f64)>> {
        let n = match self.lattice {
            Some(l) => l.side(),
            None => side,
        };
        let box_lattice = TorusLattice::new(self.dim, n)?;
        let column = match &self.repr {
            Repr::Dirichlet(op) => Some(op.green_column(0)?),
            _ => None,
        };
        let half = (n / 2) as i64;
        let mut out = Vec::with_capacity(box_lattice.volume());
        for flat in 0..box_lattice.volume() {
            // enumerate box coordinates from -⌊n/2⌋ upward
            let raw = box_lattice.coords_unchecked(flat);
            let dx: Vec<i64> = raw.iter().map(|&c| c as i64 - half).collect();
            let value = match (&self.repr, &column) {
                (Repr::Orbit(o), _) => {
                    let wrapped: Vec<usize> = dx
                        .iter()
                        .map(|&c| c.rem_euclid(n as i64) as usize)
                        .collect();
                    o[box_lattice.flat_unchecked(&wrapped)]
                }
                (Repr::Dirichlet(_), Some(col)) => {
                    let wrapped: Vec<usize> = dx
                        .iter()
                        .map(|&c| c.rem_euclid(n as i64) as usize)
                        .collect();
                    col[box_lattice.flat_unchecked(&wrapped)]
                }
                _ => zd_green(self.dim, self.kind.mass2(), &dx)?,
            };
            out.push((dx, value));
        }
        debug_assert!(out.iter().all(|(dx, _)| dx
            .iter()
            .all(|&c| lift_coord(c.rem_euclid(n as i64) as usize, n) == c)));
        Ok(out)
    }
}

/// `G(0, y)` on the torus by a direct cosine sum over modes, without
/// building the full orbit. Deterministic regardless of thread count.
pub fn torus_green_point(lattice: &TorusLattice, weights: ModeWeights, y: &[usize]) -> Result<f64> {
    let site = lattice.site(y)?;
    let n = lattice.side();
    let d = lattice.dim();
    let coords = lattice.coords(site)?;
    let axis = axis_eigenvalues(n);
    let cos: Vec<Vec<f64>> = coords
        .iter()
        .map(|&c| {
            (0..n)
                .map(|k| (2.0 * std::f64::consts::PI * ((k * c) % n) as f64 / n as f64).cos())
                .collect()
        })
        .collect();
    if d == 1 {
        let terms = (0..n).map(|k| weights.weight(axis[k]) * cos[0][k]);
        return Ok(compensated_sum(terms) / n as f64);
    }
    let middle = d - 2;
    let combos = n.pow(middle as u32);
    let partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut acc = Vec::with_capacity(combos);
            let mut idx = vec![0usize; middle];
            for _ in 0..combos {
                let mut eta = axis[first];
                let mut prod = cos[0][first];
                for (a, &k) in idx.iter().enumerate() {
                    eta += axis[k];
                    prod *= cos[a + 1][k];
                }
                let line: f64 = (0..n)
                    .map(|k| weights.weight(eta + axis[k]) * cos[d - 1][k])
                    .sum();
                acc.push(prod * line);
                for a in (0..middle).rev() {
                    idx[a] += 1;
                    if idx[a] < n {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            compensated_sum(acc)
        })
        .collect();
    Ok(compensated_sum(partial) / lattice.volume() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::laplacian_matrix;

    #[test]
    fn massive_example_two_by_two() {
        let l = TorusLattice::new(2, 2).unwrap();
        let g = massive_green(&l, 1.0).unwrap();
        let trace = 1.0 + 2.0 / 5.0 + 1.0 / 9.0;
        assert!((g.trace().unwrap() - trace).abs() < 1e-14);
        assert!((g.value(l.origin(), l.origin()).unwrap() - 17.0 / 45.0).abs() < 1e-14);
        assert!(massive_green(&l, 0.0).is_err());
        assert!(massive_green(&l, -1.0).is_err());
    }

    #[test]
    fn zero_average_example_two_by_two() {
        let l = TorusLattice::new(2, 2).unwrap();
        let g = zero_average_green(&l).unwrap();
        assert!((g.value(l.origin(), l.origin()).unwrap() - 5.0 / 32.0).abs() < 1e-14);
        assert!(!g.in_model_scope());
    }

    #[test]
    fn laplacian_inverse_and_trace_identities() {
        for (d, n, m2) in [(2, 5, 0.3), (3, 8, 1.0), (3, 6, 0.01), (4, 4, 2.0)] {
            let l = TorusLattice::new(d, n).unwrap();
            let g = massive_green(&l, m2).unwrap();
            let o = g.orbit().unwrap();
            let nb = l.neighbors(l.origin()).unwrap();
            let lhs = (2.0 * d as f64 + m2) * o[0] - nb.iter().map(|s| o[s.flat()]).sum::<f64>();
            assert!((lhs - 1.0).abs() < 1e-10);
            let tr = g.trace().unwrap();
            assert!((tr - l.volume() as f64 * o[0]).abs() < 1e-12 * tr.max(1.0));
        }
    }

    #[test]
    fn zero_average_rows_vanish_and_symmetric() {
        for (d, n) in [(3, 4), (3, 7), (4, 4)] {
            let l = TorusLattice::new(d, n).unwrap();
            let g = zero_average_green(&l).unwrap();
            let s: f64 = g.orbit().unwrap().iter().sum();
            assert!(s.abs() < 1e-10);
            for y in l.sites() {
                let a = g.value(l.origin(), y).unwrap();
                let b = g.value(y, l.origin()).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_matches_direct_inverse() {
        for (d, n, m2) in [(2, 6, 0.5), (3, 5, 1.3), (3, 8, 0.2)] {
            let l = TorusLattice::new(d, n).unwrap();
            let g = massive_green(&l, m2).unwrap();
            let mut a = laplacian_matrix(&l).unwrap();
            for i in 0..l.volume() {
                a[(i, i)] += m2;
            }
            let inv = a.try_inverse().unwrap();
            for x in l.sites() {
                for y in l.sites() {
                    let v = g.value(x, y).unwrap();
                    assert!((v - inv[(x.flat(), y.flat())]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn large_mass_diagonal() {
        let l = TorusLattice::new(3, 4).unwrap();
        let m2 = 1e3;
        let g = massive_green(&l, m2).unwrap();
        let v = g.value(l.origin(), l.origin()).unwrap();
        assert!((v - 1.0 / m2).abs() < 10.0 / (m2 * m2));
    }

    #[test]
    fn direct_point_sum_matches_orbit() {
        for (d, n) in [(3, 6), (4, 4), (2, 5), (1, 7), (5, 4)] {
            let l = TorusLattice::new(d, n).unwrap();
            for w in [ModeWeights::Massive(0.7), ModeWeights::ZeroAverage] {
                let g = match w {
                    ModeWeights::Massive(m) => massive_green(&l, m).unwrap(),
                    ModeWeights::ZeroAverage => zero_average_green(&l).unwrap(),
                };
                for flat in [0, 1, l.volume() / 2, l.volume() - 1] {
                    let y = l.coords(l.site_from_flat(flat).unwrap()).unwrap();
                    let p = torus_green_point(&l, w, &y).unwrap();
                    assert!((p - g.orbit().unwrap()[flat]).abs() < 1e-12, "d={d} n={n}");
                }
            }
        }
    }

    #[test]
    fn dirichlet_properties() {
        let l = TorusLattice::new(2, 6).unwrap();
        let u = [l.origin()];
        let g = dirichlet_green(&l, &u, 0.0).unwrap();
        for y in l.sites() {
            assert_eq!(g.value(l.origin(), y).unwrap(), 0.0);
            assert_eq!(g.value(y, l.origin()).unwrap(), 0.0);
        }
        let x = l.site(&[2, 3]).unwrap();
        let y = l.site(&[4, 1]).unwrap();
        assert!((g.value(x, y).unwrap() - g.value(y, x).unwrap()).abs() < 1e-12);

        // eigenvalues of the restricted kernel lie in [1/(m²+4d), 1/m²]
        let m2 = 0.4;
        let g = dirichlet_green(&l, &[l.origin(), l.unit(1)], m2).unwrap();
        let op = g.dirichlet_operator().unwrap();
        let inv = op.dense_matrix().try_inverse().unwrap();
        let eig = inv.symmetric_eigenvalues();
        for &e in eig.iter() {
            assert!(e >= 1.0 / (m2 + 8.0) - 1e-12 && e <= 1.0 / m2 + 1e-12);
        }
        let tr: f64 = (0..inv.nrows()).map(|i| inv[(i, i)]).sum();
        assert!((g.trace().unwrap() - tr).abs() < 1e-10);
    }

    #[test]
    fn decomposition_identity() {
        let l = TorusLattice::new(2, 6).unwrap();
        let m2 = 0.3;
        let u = vec![l.site(&[0, 0]).unwrap(), l.site(&[3, 3]).unwrap()];
        let k = vec![
            l.site(&[1, 4]).unwrap(),
            l.site(&[5, 2]).unwrap(),
            l.site(&[2, 2]).unwrap(),
        ];
        let g_u = dirichlet_green(&l, &u, m2).unwrap();
        let mut uk = u.clone();
        uk.extend(&k);
        let g_uk = dirichlet_green(&l, &uk, m2).unwrap();
        let y = l.site(&[4, 0]).unwrap();
        let col = g_u.column(y).unwrap();
        let data: Vec<f64> = k.iter().map(|z| col[z.flat()]).collect();
        let h = harmonic_extension(&l, &u, m2, &k, &data).unwrap();
        for x in l.sites() {
            let lhs = g_u.value(x, y).unwrap();
            let rhs = g_uk.value(x, y).unwrap() + h[x.flat()];
            assert!((lhs - rhs).abs() < 1e-8, "{x:?}");
        }
    }

    #[test]
    fn rw_oracle_matches_massive_table() {
        let l = TorusLattice::new(3, 8).unwrap();
        let g = massive_green(&l, 1.0).unwrap();
        let dom = WalkDomain::new(&l, 1.0, &[]).unwrap();
        let est = rw_green_oracle(&dom, l.origin(), l.origin(), 100_000, 42).unwrap();
        let want = g.value(l.origin(), l.origin()).unwrap();
        assert!(
            (est.value - want).abs() <= 4.0 * est.std_error,
            "{est:?} vs {want}"
        );
        assert!(est.std_error > 0.0);
    }

    #[test]
    fn rw_harmonic_matches_solve() {
        let l = TorusLattice::new(2, 6).unwrap();
        let u = [l.site(&[3, 3]).unwrap()];
        let k = [l.origin(), l.site(&[0, 3]).unwrap()];
        let vals = [1.0, -2.0];
        let h = harmonic_extension(&l, &u, 0.2, &k, &vals).unwrap();
        let dom = WalkDomain::new(&l, 0.2, &u).unwrap();
        for x in [l.site(&[1, 1]).unwrap(), l.site(&[2, 4]).unwrap()] {
            let e = rw_harmonic_oracle(&dom, &k, &vals, x, 40_000, 5).unwrap();
            assert!(
                (e.value - h[x.flat()]).abs() <= 4.0 * e.std_error,
                "{e:?} vs {}",
                h[x.flat()]
            );
        }
    }

    #[test]
    fn zd_table_and_kernel_box() {
        let g = zd_green_table(3, 0.0).unwrap();
        assert!((g.value_at_offset(&[0, 0, 0]).unwrap() - 0.252_731_009_858_663).abs() < 1e-12);
        assert!(zd_green_table(2, 0.0).is_err());
        let l = TorusLattice::new(2, 4).unwrap();
        let t = zero_average_green(&l).unwrap();
        let b = t.kernel_box(0).unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(b[0].0, vec![-2, -2]);
        let total: f64 = b.iter().map(|(_, v)| v).sum();
        assert!(total.abs() < 1e-12);
    }
}
