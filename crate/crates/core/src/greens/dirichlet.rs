//! `-Δ + m²` restricted to functions vanishing on a removed set, and the
//! linear solves built on it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::lattice::{SiteIndex, TorusLattice};

/// Largest free-site count solved by dense Cholesky factorization.
pub const MAX_DENSE_SITES: usize = 4096;
const CG_TOL: f64 = 1e-12;

#[derive(Clone)]
enum Solver {
    Dense(Cholesky<f64, Dyn>),
    ConjugateGradient,
}

/// Operator on the free sites `Λ_n \ removed`.
#[derive(Clone)]
pub struct DirichletOperator {
    lattice: TorusLattice,
    mass2: f64,
    removed: Vec<bool>,
    free: Vec<usize>,
    position: Vec<usize>,
    solver: Solver,
}

impl std::fmt::Debug for DirichletOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletOperator")
            .field("lattice", &self.lattice)
            .field("mass2", &self.mass2)
            .field("free_sites", &self.free.len())
            .finish()
    }
}

pub(crate) fn site_mask(lattice: &TorusLattice, sites: &[SiteIndex]) -> Result<Vec<bool>> {
    let mut mask = vec![false; lattice.volume()];
    for s in sites {
        *mask
            .get_mut(s.flat())
            .ok_or_else(|| Error::domain(format!("site {} out of range", s.flat())))? = true;
    }
    Ok(mask)
}

impl DirichletOperator {
    pub fn new(lattice: &TorusLattice, removed: Vec<bool>, mass2: f64) -> Result<Self> {
        if removed.len() != lattice.volume() {
            return Err(Error::LengthMismatch {
                expected: lattice.volume(),
                got: removed.len(),
            });
        }
        if !(mass2 >= 0.0) || !mass2.is_finite() {
            return Err(Error::domain(format!(
                "m² must be finite and ≥ 0, got {mass2}"
            )));
        }
        if mass2 == 0.0 && !removed.iter().any(|&r| r) {
            return Err(Error::domain(
                "massless Dirichlet problem needs a nonempty boundary set",
            ));
        }
        let free: Vec<usize> = (0..lattice.volume()).filter(|&x| !removed[x]).collect();
        let mut position = vec![usize::MAX; lattice.volume()];
        for (i, &x) in free.iter().enumerate() {
            position[x] = i;
        }
        let mut op = Self {
            lattice: *lattice,
            mass2,
            removed,
            free,
            position,
            solver: Solver::ConjugateGradient,
        };
        if op.free.len() <= MAX_DENSE_SITES {
            let m = op.dense_matrix();
            let chol = Cholesky::new(m).ok_or_else(|| {
                Error::Numerical("Dirichlet operator is not positive definite".into())
            })?;
            op.solver = Solver::Dense(chol);
        }
        Ok(op)
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn mass2(&self) -> f64 {
        self.mass2
    }

    pub fn is_removed(&self, x: usize) -> bool {
        self.removed[x]
    }

    /// Free sites in increasing flat order.
    pub fn free_sites(&self) -> &[usize] {
        &self.free
    }

    pub fn uses_dense_factorization(&self) -> bool {
        matches!(self.solver, Solver::Dense(_))
    }

    fn diagonal(&self) -> f64 {
        2.0 * self.lattice.dim() as f64 + self.mass2
    }

    /// Matrix on free sites in `free_sites` order.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let k = self.free.len();
        let mut m = DMatrix::zeros(k, k);
        let mut nb = vec![0; 2 * self.lattice.dim()];
        for (i, &x) in self.free.iter().enumerate() {
            m[(i, i)] += self.diagonal();
            self.lattice.neighbor_flats(x, &mut nb);
            for &y in &nb {
                let j = self.position[y];
                if j != usize::MAX {
                    m[(i, j)] -= 1.0;
                }
            }
        }
        m
    }

    /// Applies the operator to a vector on free sites.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut nb = vec![0; 2 * self.lattice.dim()];
        self.free
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                self.lattice.neighbor_flats(x, &mut nb);
                let mut s = self.diagonal() * v[i];
                for &y in &nb {
                    let j = self.position[y];
                    if j != usize::MAX {
                        s -= v[j];
                    }
                }
                s
            })
            .collect()
    }

    /// Solves `A u = rhs` on free sites.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.free.len() {
            return Err(Error::LengthMismatch {
                expected: self.free.len(),
                got: rhs.len(),
            });
        }
        match &self.solver {
            Solver::Dense(chol) => Ok(chol
                .solve(&DVector::from_column_slice(rhs))
                .iter()
                .copied()
                .collect()),
            Solver::ConjugateGradient => self.conjugate_gradient(rhs),
        }
    }

    fn conjugate_gradient(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let k = rhs.len();
        let inv_diag = 1.0 / self.diagonal();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let norm_b = dot(rhs, rhs).sqrt();
        if norm_b == 0.0 {
            return Ok(vec![0.0; k]);
        }
        let mut x = vec![0.0; k];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..(10 * k + 1000) {
            let ap = self.apply(&p);
            let step = rz / dot(&p, &ap);
            for i in 0..k {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            if dot(&r, &r).sqrt() <= CG_TOL * norm_b {
                return Ok(x);
            }
            for i in 0..k {
                z[i] = r[i] * inv_diag;
            }
            let rz_next = dot(&r, &z);
            let ratio = rz_next / rz;
            rz = rz_next;
            for i in 0..k {
                p[i] = z[i] + ratio * p[i];
            }
        }
        Err(Error::Numerical(
            "conjugate gradient did not converge".into(),
        ))
    }

    /// Column `G(·, y)` as a site-space vector, zero on removed sites.
    pub fn green_column(&self, y: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.lattice.volume()];
        if y >= self.lattice.volume() {
            return Err(Error::domain(format!("site {y} out of range")));
        }
        if self.removed[y] {
            return Ok(out);
        }
        let mut rhs = vec![0.0; self.free.len()];
        rhs[self.position[y]] = 1.0;
        for (i, v) in self.solve(&rhs)?.into_iter().enumerate() {
            out[self.free[i]] = v;
        }
        Ok(out)
    }

    /// `Σ_x G(x,x)` over free sites; only offered for dense factorizations.
    pub fn trace(&self) -> Option<f64> {
        match &self.solver {
            Solver::Dense(chol) => {
                let k = self.free.len();
                let inv = chol.l().solve_lower_triangular(&DMatrix::identity(k, k))?;
                Some(inv.iter().map(|v| v * v).sum())
            }
            Solver::ConjugateGradient => None,
        }
    }
}

/// The function equal to `values` on `targets`, zero on `absorbing`, and
/// satisfying `(2d+m²)h(x) - Σ_{y∼x} h(y) = 0` elsewhere. Zero wins on
/// sites that are both targets and absorbing.
pub fn harmonic_extension(
    lattice: &TorusLattice,
    absorbing: &[SiteIndex],
    mass2: f64,
    targets: &[SiteIndex],
    values: &[f64],
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::domain(
            "harmonic extension needs a nonempty target set",
        ));
    }
    if targets.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            got: values.len(),
        });
    }
    let blocked = site_mask(lattice, absorbing)?;
    let mut boundary = vec![0.0; lattice.volume()];
    let mut removed = blocked.clone();
    for (s, &v) in targets.iter().zip(values) {
        let x = s.flat();
        if x >= lattice.volume() {
            return Err(Error::domain(format!("site {x} out of range")));
        }
        removed[x] = true;
        if !blocked[x] {
            boundary[x] = v;
        }
    }
    let op = DirichletOperator::new(lattice, removed, mass2)?;
    let mut nb = vec![0; 2 * lattice.dim()];
    let rhs: Vec<f64> = op
        .free
        .iter()
        .map(|&x| {
            lattice.neighbor_flats(x, &mut nb);
            nb.iter().map(|&y| boundary[y]).sum()
        })
        .collect();
    let solution = op.solve(&rhs)?;
    let mut out = boundary;
    for (i, v) in solution.into_iter().enumerate() {
        out[op.free[i]] = v;
    }
    Ok(out)
}
