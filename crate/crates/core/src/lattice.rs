//! Geometry of the discrete torus `T^d_n`.
//!
//! Sites are stored as flat row-major indices with axis 0 varying slowest.
//! The same convention is used by the spectral transforms and every table
//! in the crate, so a flat index means the same site everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest lattice volume accepted. Keeps flat indices exactly representable
/// as `f64` and bounds accidental huge allocations.
pub const MAX_VOLUME: usize = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct TorusLattice {
    dim: usize,
    side: usize,
    volume: usize,
}

#[derive(Serialize, Deserialize)]
struct LatticeRepr {
    dim: usize,
    side: usize,
}

impl TryFrom<LatticeRepr> for TorusLattice {
    type Error = Error;

    fn try_from(r: LatticeRepr) -> Result<Self> {
        TorusLattice::new(r.dim, r.side)
    }
}

impl From<TorusLattice> for LatticeRepr {
    fn from(l: TorusLattice) -> Self {
        LatticeRepr {
            dim: l.dim,
            side: l.side,
        }
    }
}

/// A site of a particular lattice, as its flat row-major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteIndex(usize);

impl SiteIndex {
    pub fn flat(self) -> usize {
        self.0
    }
}

impl TorusLattice {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("lattice dimension must be at least 1"));
        }
        if side < 2 {
            return Err(Error::domain(format!(
                "lattice side must be at least 2, got {side}"
            )));
        }
        let volume = u32::try_from(dim)
            .ok()
            .and_then(|d| side.checked_pow(d))
            .filter(|&v| v <= MAX_VOLUME)
            .ok_or_else(|| {
                Error::Resource(format!("lattice volume {side}^{dim} exceeds {MAX_VOLUME}"))
            })?;
        Ok(Self { dim, side, volume })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Stride of `axis` in the flat index.
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn site(&self, coords: &[usize]) -> Result<SiteIndex> {
        if coords.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        if let Some(&c) = coords.iter().find(|&&c| c >= self.side) {
            return Err(Error::domain(format!(
                "coordinate {c} out of range for side {}",
                self.side
            )));
        }
        Ok(SiteIndex(self.flat_unchecked(coords)))
    }

    pub fn site_from_flat(&self, flat: usize) -> Result<SiteIndex> {
        self.check(SiteIndex(flat))?;
        Ok(SiteIndex(flat))
    }

    /// Site with coordinates reduced modulo `n`, accepting any integers.
    pub fn site_wrapping(&self, coords: &[i64]) -> Result<SiteIndex> {
        if coords.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        let n = self.side as i64;
        let flat = coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(n) as usize);
        Ok(SiteIndex(flat))
    }

    pub fn origin(&self) -> SiteIndex {
        SiteIndex(0)
    }

    /// Unit vector along `axis`.
    pub fn unit(&self, axis: usize) -> SiteIndex {
        SiteIndex(self.stride(axis))
    }

    pub fn sites(&self) -> impl Iterator<Item = SiteIndex> {
        (0..self.volume).map(SiteIndex)
    }

    pub fn coords(&self, x: SiteIndex) -> Result<Vec<usize>> {
        self.check(x)?;
        Ok(self.coords_unchecked(x.0))
    }

    pub(crate) fn coords_unchecked(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.side;
            rest /= self.side;
        }
        out
    }

    pub(crate) fn flat_unchecked(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    fn check(&self, x: SiteIndex) -> Result<()> {
        if x.0 >= self.volume {
            return Err(Error::domain(format!(
                "site index {} out of range for volume {}",
                x.0, self.volume
            )));
        }
        Ok(())
    }

    /// The `2d` neighbours in the order `+e_0, -e_0, +e_1, -e_1, ...`.
    ///
    /// For `n = 2` the two neighbours along an axis are the same site and
    /// both entries are kept.
    pub fn neighbors(&self, x: SiteIndex) -> Result<Vec<SiteIndex>> {
        self.check(x)?;
        let mut out = vec![0; 2 * self.dim];
        self.neighbor_flats(x.0, &mut out);
        Ok(out.into_iter().map(SiteIndex).collect())
    }

    /// Unchecked fast path of [`neighbors`](Self::neighbors); `out.len()` must be `2d`.
    #[inline]
    pub fn neighbor_flats(&self, flat: usize, out: &mut [usize]) {
        let n = self.side;
        let mut stride = self.volume;
        for axis in 0..self.dim {
            stride /= n;
            let c = (flat / stride) % n;
            let base = flat - c * stride;
            out[2 * axis] = base + ((c + 1) % n) * stride;
            out[2 * axis + 1] = base + ((c + n - 1) % n) * stride;
        }
    }

    /// Flat map `x ↦ x + k e_axis`.
    pub fn translation(&self, axis: usize, k: usize) -> Vec<usize> {
        let n = self.side;
        let stride = self.stride(axis);
        (0..self.volume)
            .map(|x| {
                let c = (x / stride) % n;
                x - c * stride + ((c + k) % n) * stride
            })
            .collect()
    }

    /// Flat index of `x + y` on the torus.
    pub fn add(&self, x: SiteIndex, y: SiteIndex) -> SiteIndex {
        SiteIndex(self.combine(x.0, y.0, |a, b, n| (a + b) % n))
    }

    /// Flat index of `y - x` on the torus.
    pub fn difference(&self, x: SiteIndex, y: SiteIndex) -> SiteIndex {
        SiteIndex(self.combine(x.0, y.0, |a, b, n| (b + n - a) % n))
    }

    #[inline]
    pub(crate) fn combine(
        &self,
        x: usize,
        y: usize,
        op: impl Fn(usize, usize, usize) -> usize,
    ) -> usize {
        let n = self.side;
        let (mut xr, mut yr) = (x, y);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            out += op(xr % n, yr % n, n) * stride;
            xr /= n;
            yr /= n;
            stride *= n;
        }
        out
    }

    /// Representative of `x` in the box `[-floor(n/2), n - floor(n/2))^d`.
    pub fn canonical_lift(&self, x: SiteIndex) -> Result<Vec<i64>> {
        Ok(self
            .coords(x)?
            .into_iter()
            .map(|c| lift_coord(c, self.side))
            .collect())
    }

    pub fn graph_distance(&self, x: SiteIndex, y: SiteIndex) -> Result<usize> {
        let cx = self.coords(x)?;
        let cy = self.coords(y)?;
        Ok(cx
            .iter()
            .zip(&cy)
            .map(|(&a, &b)| {
                let diff = a.abs_diff(b);
                diff.min(self.side - diff)
            })
            .sum())
    }
}

pub(crate) fn lift_coord(c: usize, n: usize) -> i64 {
    if c < n - n / 2 {
        c as i64
    } else {
        c as i64 - n as i64
    }
}
