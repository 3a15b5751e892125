//! Conditional covariance of the zero-average field off a finite set.
//!
//! With `G = Σ_w g_w q^w (q^w)ᵀ`, `g_w = 1/η_w` (`g = 0` on the constant
//! mode), the conditional covariance given the values on `U` is
//! `C = G - G_{·U} A^{-1} G_{U·}`, `A = G_{UU}`. It vanishes on `U` and
//! equals the Schur complement `Ξ` on `U^c`. In the eigenbasis it is a
//! diagonal matrix minus a rank-`|U|` term, so inside each eigenspace of
//! multiplicity `m` all but `min(m, |U|)` directions keep the eigenvalue
//! `g`. A QR factorization per eigenspace reduces the problem to a dense
//! eigensolve of size at most `|U|` times the number of distinct eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{SiteIndex, TorusLattice};
use crate::mass::beta_critical_cached;
use crate::numeric::compensated_sum;
use crate::spectral::{basis_value, SpectrumTable};

pub const MAX_CONDITIONED_SITES: usize = 4;
pub const MAX_SCHUR_VOLUME: usize = 32_768;
/// Powers `l` for the trace-power ratios.
pub const TRACE_POWERS: [u32; 5] = [2, 3, 4, 5, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpectrumReport {
    pub n: usize,
    pub d: usize,
    /// Flat indices of `U`.
    pub conditioned: Vec<usize>,
    pub y: Vec<f64>,
    /// Eigenvalues of `Ξ`, nonincreasing, `u_n = n^d - |U|` of them.
    pub mu: Vec<f64>,
    /// `E‖γ‖² = Σ_{w≠0} 1/η_w`.
    pub mean_gamma: f64,
    /// `Var‖γ‖² = 2 Σ_{w≠0} 1/η_w²`.
    pub var_gamma: f64,
    /// `E‖γ̂^y‖²`, including `‖y‖²`.
    pub mean_gamma_hat: f64,
    /// `Var‖γ̂^y‖² = 2 Σ_k (μ_k² + 2 h_k(y)² μ_k)`.
    pub var_gamma_hat: f64,
    /// `‖h(y)‖² = ‖ν(y)‖²`.
    pub shift_norm2: f64,
    /// `(l, Σ_k μ_k^l / Σ_{k≥2} η_k^{-l})`.
    pub trace_power_ratios: Vec<(u32, f64)>,
    /// `(β_c n^d - E‖γ‖²) / √Var‖γ‖²`.
    pub t_n: f64,
    /// Same with `γ̂^y`.
    pub t_hat_n: f64,
    /// `η_2² Var‖γ‖²`.
    pub var_gamma_eta2: f64,
    /// Entries outside the eigenvalue bracket, beyond a `1e-9` relative slack.
    pub interlacing_violations: usize,
    pub min_mu: f64,
}

pub fn conditioned_covariance_spectrum(
    lattice: &TorusLattice,
    conditioned: &[SiteIndex],
    y: &[f64],
) -> Result<CriticalSpectrumReport> {
    let d = lattice.dim();
    let volume = lattice.volume();
    if d < 3 {
        return Err(Error::domain("conditioned spectrum needs d ≥ 3"));
    }
    if volume > MAX_SCHUR_VOLUME {
        return Err(Error::Resource(format!(
            "conditioned spectrum limited to {MAX_SCHUR_VOLUME} sites"
        )));
    }
    let k = conditioned.len();
    if k > MAX_CONDITIONED_SITES {
        return Err(Error::domain(format!(
            "at most {MAX_CONDITIONED_SITES} conditioned sites"
        )));
    }
    if y.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: y.len(),
        });
    }
    let u: Vec<usize> = conditioned.iter().map(|s| s.flat()).collect();
    if u.iter().any(|&x| x >= volume) {
        return Err(Error::domain("conditioned site out of range"));
    }
    {
        let mut sorted = u.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k {
            return Err(Error::domain("conditioned sites must be distinct"));
        }
    }

    let spec = SpectrumTable::build(lattice)?;
    let eta = spec.eigenvalues();
    let g: Vec<f64> = eta
        .iter()
        .map(|&e| if e == 0.0 { 0.0 } else { 1.0 / e })
        .collect();
    // V[w, j] = g_w q^w(u_j)
    let v = DMatrix::from_fn(volume, k, |w, j| g[w] * basis_value(lattice, w, u[j]));
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] =
                compensated_sum((0..volume).map(|w| v[(w, i)] * basis_value(lattice, w, u[j])));
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let (a_inv, l) = if k > 0 {
        let chol = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("G restricted to U is singular".into()))?;
        let a_inv = chol.inverse();
        let a_inv = (&a_inv + a_inv.transpose()) * 0.5;
        let l = a_inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("inverse of G restricted to U is singular".into()))?
            .l();
        (a_inv, l)
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    let z = &v * &l;

    // compress each eigenspace to at most k directions
    let mut exact: Vec<f64> = Vec::with_capacity(volume);
    let mut diag: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (e, modes) in spec.eigen_groups() {
        let gv = if e == 0.0 { 0.0 } else { 1.0 / e };
        let m = modes.len();
        if k == 0 || e == 0.0 {
            exact.extend(std::iter::repeat_n(gv, m));
            continue;
        }
        let zg = DMatrix::from_fn(m, k, |i, j| z[(modes[i], j)]);
        let r = if m > k {
            exact.extend(std::iter::repeat_n(gv, m - k));
            zg.qr().r()
        } else {
            zg
        };
        for i in 0..r.nrows() {
            diag.push(gv);
            rows.push(r.row(i).iter().copied().collect());
        }
    }
    let s = diag.len();
    let mut spectrum = exact;
    if s > 0 {
        let zc = DMatrix::from_fn(s, k, |i, j| rows[i][j]);
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(diag));
        m -= &zc * zc.transpose();
        let m = (&m + m.transpose()) * 0.5;
        spectrum.extend(SymmetricEigen::new(m).eigenvalues.iter());
    }
    debug_assert_eq!(spectrum.len(), volume);
    spectrum.sort_by(|a, b| b.total_cmp(a));
    // the k smallest belong to the sites of U
    spectrum.truncate(volume - k);
    let mu = spectrum;

    // statistics
    let inv_eta: Vec<f64> = spec.sorted_eigenvalues()[1..]
        .iter()
        .map(|e| 1.0 / e)
        .collect();
    let mean_gamma = compensated_sum(inv_eta.iter().copied());
    let var_gamma = 2.0 * compensated_sum(inv_eta.iter().map(|x| x * x));
    let trace_xi = compensated_sum(mu.iter().copied());
    let trace_xi2 = compensated_sum(mu.iter().map(|m| m * m));

    // ν̂ = V A^{-1} y in mode space; ‖ν_{U^c}‖² = ‖ν̂‖² - ‖y‖²
    let (shift_norm2, quad) = if k > 0 {
        let coef = &a_inv * DVector::from_column_slice(y);
        let nu_hat = &v * &coef;
        let full = compensated_sum(nu_hat.iter().map(|x| x * x));
        let y2: f64 = y.iter().map(|x| x * x).sum();
        // νᵀ C ν = Σ g ν̂² - (Vᵀν̂)ᵀ A^{-1} (Vᵀν̂)
        let gnu = compensated_sum((0..volume).map(|w| g[w] * nu_hat[w] * nu_hat[w]));
        let vt = v.transpose() * &nu_hat;
        let corr = (vt.transpose() * &a_inv * &vt)[(0, 0)];
        ((full - y2).max(0.0), (gnu - corr).max(0.0))
    } else {
        (0.0, 0.0)
    };
    let y2: f64 = y.iter().map(|x| x * x).sum();
    let mean_gamma_hat = y2 + trace_xi + shift_norm2;
    let var_gamma_hat = 2.0 * trace_xi2 + 4.0 * quad;

    let trace_power_ratios = TRACE_POWERS
        .iter()
        .map(|&p| {
            let num = compensated_sum(mu.iter().map(|m| m.max(0.0).powi(p as i32)));
            let den = compensated_sum(inv_eta.iter().map(|x| x.powi(p as i32)));
            (p, num / den)
        })
        .collect();

    let beta_c = beta_critical_cached(d)?;
    let nd = volume as f64;
    let t_n = (beta_c * nd - mean_gamma) / var_gamma.sqrt();
    let t_hat_n = (beta_c * nd - mean_gamma_hat) / var_gamma_hat.sqrt();
    let eta2 = spec.kth(2).unwrap_or(0.0);

    // μ_k ∈ [1/η_{n^d - u_n + k + |U| + 1}, 1/η_{k+1}] for k ≤ u_n - |U|
    let un = mu.len();
    let sorted_eta = spec.sorted_eigenvalues();
    let recip = |idx: usize| -> f64 {
        // 1-based; η_1 = 0 maps to +∞
        let e = sorted_eta[idx - 1];
        if e == 0.0 {
            f64::INFINITY
        } else {
            1.0 / e
        }
    };
    let mut violations = 0;
    for kk in 1..=un.saturating_sub(k) {
        let upper = if kk < volume {
            recip(kk + 1)
        } else {
            f64::INFINITY
        };
        let lo_idx = volume - un + kk + k + 1;
        let lower = if lo_idx <= volume { recip(lo_idx) } else { 0.0 };
        let m = mu[kk - 1];
        let slack = 1e-9 * upper.clamp(1.0, 1e300);
        if !(lower - slack..=upper + slack).contains(&m) {
            violations += 1;
        }
    }
    let min_mu = mu.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(CriticalSpectrumReport {
        n: lattice.side(),
        d,
        conditioned: u,
        y: y.to_vec(),
        mu,
        mean_gamma,
        var_gamma,
        mean_gamma_hat,
        var_gamma_hat,
        shift_norm2,
        trace_power_ratios,
        t_n,
        t_hat_n,
        var_gamma_eta2: eta2 * eta2 * var_gamma,
        interlacing_violations: violations,
        min_mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::zero_average_green;

    /// Dense Schur complement from the Green table, for cross-checking.
    fn dense_schur(l: &TorusLattice, u: &[usize]) -> DMatrix<f64> {
        let g = zero_average_green(l).unwrap();
        let val = |x: usize, y: usize| {
            g.value(l.site_from_flat(x).unwrap(), l.site_from_flat(y).unwrap())
                .unwrap()
        };
        let rest: Vec<usize> = (0..l.volume()).filter(|x| !u.contains(x)).collect();
        let gcc = DMatrix::from_fn(rest.len(), rest.len(), |i, j| val(rest[i], rest[j]));
        if u.is_empty() {
            return gcc;
        }
        let gcu = DMatrix::from_fn(rest.len(), u.len(), |i, j| val(rest[i], u[j]));
        let guu = DMatrix::from_fn(u.len(), u.len(), |i, j| val(u[i], u[j]));
        let inv = guu.try_inverse().unwrap();
        &gcc - &gcu * inv * gcu.transpose()
    }

    fn sites(l: &TorusLattice, flats: &[usize]) -> Vec<SiteIndex> {
        flats
            .iter()
            .map(|&x| l.site_from_flat(x).unwrap())
            .collect()
    }

    #[test]
    fn empty_set_gives_inverse_eigenvalues() {
        let l = TorusLattice::new(3, 4).unwrap();
        let r = conditioned_covariance_spectrum(&l, &[], &[]).unwrap();
        let spec = SpectrumTable::build(&l).unwrap();
        let mut want: Vec<f64> = spec.sorted_eigenvalues()[1..]
            .iter()
            .map(|e| 1.0 / e)
            .collect();
        want.push(0.0);
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in r.mu.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((r.var_gamma_hat - r.var_gamma).abs() < 1e-9 * r.var_gamma);
        assert!((r.trace_power_ratios[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_schur_complement() {
        let l = TorusLattice::new(3, 4).unwrap();
        for u in [vec![0], vec![0, 1], vec![0, 5, 21, 63]] {
            let r =
                conditioned_covariance_spectrum(&l, &sites(&l, &u), &vec![0.0; u.len()]).unwrap();
            let dense = SymmetricEigen::new(dense_schur(&l, &u));
            let mut want: Vec<f64> = dense.eigenvalues.iter().copied().collect();
            want.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(want.len(), r.mu.len());
            for (a, b) in r.mu.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{u:?}: {a} vs {b}");
            }
            assert_eq!(r.interlacing_violations, 0);
            assert!(r.min_mu > -1e-10);
        }
    }

    #[test]
    fn shifted_variance_matches_dense_quadratic_form() {
        let l = TorusLattice::new(3, 4).unwrap();
        let u = [0usize, 6];
        let y = [0.7, -0.3];
        let r = conditioned_covariance_spectrum(&l, &sites(&l, &u), &y).unwrap();
        let xi = dense_schur(&l, &u);
        let g = zero_average_green(&l).unwrap();
        let val = |a: usize, b: usize| {
            g.value(l.site_from_flat(a).unwrap(), l.site_from_flat(b).unwrap())
                .unwrap()
        };
        let rest: Vec<usize> = (0..l.volume()).filter(|x| !u.contains(x)).collect();
        let gcu = DMatrix::from_fn(rest.len(), 2, |i, j| val(rest[i], u[j]));
        let guu = DMatrix::from_fn(2, 2, |i, j| val(u[i], u[j]));
        let nu = gcu * guu.try_inverse().unwrap() * DVector::from_column_slice(&y);
        let want = 2.0 * (&xi * &xi).trace() + 4.0 * (nu.transpose() * &xi * &nu)[(0, 0)];
        assert!(
            (r.var_gamma_hat - want).abs() < 1e-9 * want,
            "{} vs {want}",
            r.var_gamma_hat
        );
        assert!((r.shift_norm2 - nu.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn upper_bracket_and_trace_ratio_bounds() {
        let l = TorusLattice::new(3, 8).unwrap();
        let r = conditioned_covariance_spectrum(&l, &[l.origin()], &[0.0]).unwrap();
        assert_eq!(r.interlacing_violations, 0);
        for &(_, t) in &r.trace_power_ratios {
            assert!(t > 0.0 && t <= 1.0 + 1e-12);
        }
        assert!(r.t_n > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let l = TorusLattice::new(3, 4).unwrap();
        let o = l.origin();
        assert!(conditioned_covariance_spectrum(&l, &[o, o], &[0.0, 0.0]).is_err());
        assert!(conditioned_covariance_spectrum(&l, &[o], &[]).is_err());
        let l2 = TorusLattice::new(2, 4).unwrap();
        assert!(conditioned_covariance_spectrum(&l2, &[], &[]).is_err());
    }
}
