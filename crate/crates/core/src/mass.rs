//! Mass equation `G_{Λ_n, m²}(0,0) = β` on the torus and regime classification.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::zd;
use crate::lattice::TorusLattice;
use crate::numeric::compensated_sum;
use crate::spectral::SpectrumTable;

/// Relative half-width of the critical window around `β_c`.
pub const CRITICAL_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    HighT,
    Critical,
    LowT,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::HighT => "HighT",
            Regime::Critical => "Critical",
            Regime::LowT => "LowT",
        })
    }
}

/// `β_c(d)`, computed once per dimension and cached.
pub fn beta_critical_cached(d: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().expect("cache poisoned").get(&d) {
        return Ok(v);
    }
    let v = zd::beta_critical(d)?;
    cache.lock().expect("cache poisoned").insert(d, v);
    Ok(v)
}

pub fn classify(beta: f64, beta_c: f64, tol: f64) -> Regime {
    if beta < beta_c - tol {
        Regime::HighT
    } else if beta > beta_c + tol {
        Regime::LowT
    } else {
        Regime::Critical
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lattice: TorusLattice,
    pub beta: f64,
    /// Infinite when `d ≤ 2`.
    pub beta_c: f64,
    pub tol_c: f64,
    pub regime: Regime,
}

impl ModelParams {
    pub fn new(lattice: &TorusLattice, beta: f64) -> Result<Self> {
        let beta_c = beta_critical_cached(lattice.dim())?;
        Self::with_beta_c(lattice, beta, beta_c)
    }

    pub fn with_beta_c(lattice: &TorusLattice, beta: f64, beta_c: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::domain(format!(
                "β must be finite and ≥ 0, got {beta}"
            )));
        }
        let tol_c = if beta_c.is_finite() {
            CRITICAL_REL_TOL * beta_c
        } else {
            0.0
        };
        Ok(Self {
            lattice: *lattice,
            beta,
            beta_c,
            tol_c,
            regime: classify(beta, beta_c, tol_c),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassSolution {
    pub m_squared: f64,
    /// `|G_{Λ_n, m²}(0,0) - β|`.
    pub residual: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

struct MassEquation {
    groups: Vec<(f64, f64)>,
    volume: f64,
    beta: f64,
}

impl MassEquation {
    /// `G(0,0) - β` as a function of `m²`.
    fn residual(&self, m2: f64) -> f64 {
        let g = compensated_sum(self.groups.iter().map(|&(eta, mult)| mult / (m2 + eta)));
        g / self.volume - self.beta
    }

    fn derivative(&self, m2: f64) -> f64 {
        -compensated_sum(
            self.groups
                .iter()
                .map(|&(eta, mult)| mult / ((m2 + eta) * (m2 + eta))),
        ) / self.volume
    }
}

/// Unique `m² > 0` with `(1/n^d) Σ_w 1/(m² + η_w) = β`.
pub fn solve_torus_mass(params: &ModelParams) -> Result<MassSolution> {
    let spectrum = SpectrumTable::build(&params.lattice)?;
    solve_torus_mass_with(&spectrum, params.beta)
}

pub fn solve_torus_mass_with(spectrum: &SpectrumTable, beta: f64) -> Result<MassSolution> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!(
            "β must be positive and finite, got {beta}"
        )));
    }
    let lattice = spectrum.lattice();
    let eq = MassEquation {
        groups: spectrum
            .multiplicities()
            .into_iter()
            .map(|(e, m)| (e, m as f64))
            .collect(),
        volume: lattice.volume() as f64,
        beta,
    };
    let d = lattice.dim() as f64;
    let mut lo = 0.5 / (beta * eq.volume);
    let mut hi = 2.0 * (4.0 * d).max(1.0 / beta);
    while eq.residual(lo) <= 0.0 {
        lo *= 0.5;
    }
    while eq.residual(hi) >= 0.0 {
        hi *= 2.0;
    }
    let bracket = (lo, hi);
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    let mut iterations = 0;
    while lhi - llo > 1e-14 * llo.abs().max(1.0) && iterations < 400 {
        let mid = 0.5 * (llo + lhi);
        if eq.residual(mid.exp()) > 0.0 {
            llo = mid;
        } else {
            lhi = mid;
        }
        iterations += 1;
    }
    let (blo, bhi) = (llo.exp(), lhi.exp());
    let mut m2 = 0.5 * (blo + bhi);
    for _ in 0..3 {
        let next = m2 - eq.residual(m2) / eq.derivative(m2);
        if next.is_finite() && next > 0.0 && eq.residual(next).abs() <= eq.residual(m2).abs() {
            m2 = next;
        }
        iterations += 1;
    }
    Ok(MassSolution {
        m_squared: m2,
        residual: eq.residual(m2).abs(),
        iterations,
        bracket,
    })
}

/// `m² (β - β_c) n^d`, which tends to 1 at low temperature.
pub fn low_t_diagnostic(params: &ModelParams, m2: f64) -> f64 {
    m2 * (params.beta - params.beta_c) * params.lattice.volume() as f64
}
