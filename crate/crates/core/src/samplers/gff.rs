//! Exact spectral samplers for the massive and zero-average free fields.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FieldSample, LawTag, RngProvenance};
use crate::error::{Error, Result};
use crate::lattice::TorusLattice;
use crate::rng;
use crate::spectral::{HartleyTransform, SpectrumTable};

/// Draws fields `Σ_w σ_w Z_w q^w` with i.i.d. standard normal `Z_w`.
#[derive(Debug, Clone)]
pub struct GffSampler {
    lattice: TorusLattice,
    sigma: Vec<f64>,
    transform: HartleyTransform,
    law: LawTag,
}

impl GffSampler {
    pub fn massive(lattice: &TorusLattice, mass2: f64) -> Result<Self> {
        if !(mass2 > 0.0) || !mass2.is_finite() {
            return Err(Error::domain(format!("m² must be positive, got {mass2}")));
        }
        let spec = SpectrumTable::build(lattice)?;
        Ok(Self {
            lattice: *lattice,
            sigma: spec
                .eigenvalues()
                .iter()
                .map(|e| 1.0 / (mass2 + e).sqrt())
                .collect(),
            transform: HartleyTransform::new(lattice),
            law: LawTag::MassiveGff { mass2 },
        })
    }

    pub fn zero_average(lattice: &TorusLattice) -> Result<Self> {
        let spec = SpectrumTable::build(lattice)?;
        Ok(Self {
            lattice: *lattice,
            sigma: spec
                .eigenvalues()
                .iter()
                .map(|&e| if e == 0.0 { 0.0 } else { 1.0 / e.sqrt() })
                .collect(),
            transform: HartleyTransform::new(lattice),
            law: LawTag::ZeroAvgGff,
        })
    }

    pub fn law(&self) -> LawTag {
        self.law
    }

    /// One scalar field.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .sigma
            .iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect();
        self.transform
            .apply(&mut v)
            .expect("length matches lattice");
        v
    }

    /// Mode coefficients of one draw, without transforming to sites.
    pub fn draw_modes<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect()
    }

    /// A tagged sample with `components` independent components from stream
    /// `(seed, tag, index)`.
    pub fn sample(&self, components: usize, seed: u64, index: u64) -> Result<FieldSample> {
        if components == 0 {
            return Err(Error::domain("at least one component is required"));
        }
        let tag = match self.law {
            LawTag::MassiveGff { .. } => "gff-massive",
            _ => "gff-zero-avg",
        };
        let mut r = rng::stream(seed, tag, index);
        let v = self.lattice.volume();
        let mut values = vec![0.0; v * components];
        for c in 0..components {
            let field = self.draw(&mut r);
            for (x, f) in field.into_iter().enumerate() {
                values[x * components + c] = f;
            }
        }
        Ok(FieldSample {
            lattice: self.lattice,
            components,
            values,
            law: self.law,
            provenance: RngProvenance {
                seed,
                stream: tag.to_string(),
                index,
                sweeps: 0,
            },
        })
    }
}

pub fn sample_massive_gff(
    lattice: &TorusLattice,
    mass2: f64,
    components: usize,
    seed: u64,
    index: u64,
) -> Result<FieldSample> {
    GffSampler::massive(lattice, mass2)?.sample(components, seed, index)
}

/// Zero-average field; with `constant = Some(c)` the constant `c` is added
/// and the sample is tagged accordingly.
pub fn sample_zero_avg_gff(
    lattice: &TorusLattice,
    constant: Option<f64>,
    seed: u64,
    index: u64,
) -> Result<FieldSample> {
    let mut s = GffSampler::zero_average(lattice)?.sample(1, seed, index)?;
    if let Some(c) = constant {
        s.values.iter_mut().for_each(|v| *v += c);
        s.law = LawTag::ZeroAvgPlusConstant { c };
    }
    Ok(s)
}
