//! Green function of `-Δ + m²` on the infinite lattice `ℤ^d`.
//!
//! Evaluated through the heat-kernel integral
//! `G(0,y) = ∫_0^∞ e^{-m² t} Π_i e^{-2t} I_{|y_i|}(2t) dt`
//! with exp-sinh double-exponential quadrature and step halving.

use std::f64::consts::{FRAC_PI_2, PI};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const U_MAX: f64 = 6.0;
const QUAD_TOL: f64 = 1e-14;
const MAX_LEVELS: usize = 12;

/// Exponentially scaled modified Bessel function `e^{-x} I_ν(x)` for `x ≥ 0`.
pub fn bessel_i_scaled(nu: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0 { 1.0 } else { 0.0 };
    }
    let nuf = nu as f64;
    if x <= 50.0 {
        series(nuf, x)
    } else if x >= 25.0 * nuf * nuf {
        hankel(nuf, x)
    } else {
        miller(nu, x)
    }
}

fn series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = (nu * half.ln() - ln_gamma(nu + 1.0) - x).exp();
    let q = half * half;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term <= 1e-17 * sum && k > half {
            break;
        }
        if term == 0.0 {
            break;
        }
    }
    sum
}

fn hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

/// Backward recurrence normalized by `I_0`; valid for `x > 50`.
fn miller(nu: u32, x: f64) -> f64 {
    let nuf = nu as f64;
    let start = (nuf * nuf + 82.0 * x).sqrt().ceil() as u32 + 5;
    let mut above = 0.0f64;
    let mut current = 1.0f64;
    let mut at_nu = if start == nu { current } else { 0.0 };
    for k in (1..=start).rev() {
        let below = above + (2.0 * k as f64 / x) * current;
        above = current;
        current = below;
        if k - 1 == nu {
            at_nu = current;
        }
        if current > 1e250 {
            above *= 1e-250;
            current *= 1e-250;
            at_nu *= 1e-250;
        }
    }
    at_nu / current * hankel(0.0, x)
}

/// Integrand of the heat-kernel representation at time `t`, times `t^power`.
fn integrand(offsets: &[u32], mass2: f64, t: f64, power: i32) -> f64 {
    let mut value = (-mass2 * t).exp();
    if value == 0.0 {
        return 0.0;
    }
    let mut last: Option<(u32, f64)> = None;
    for &nu in offsets {
        let b = match last {
            Some((prev, b)) if prev == nu => b,
            _ => bessel_i_scaled(nu, 2.0 * t),
        };
        last = Some((nu, b));
        value *= b;
    }
    value * t.powi(power)
}

fn exp_sinh(f: impl Fn(f64) -> f64) -> Result<f64> {
    let node = |u: f64| {
        let t = (FRAC_PI_2 * u.sinh()).exp();
        let w = t * FRAC_PI_2 * u.cosh();
        if t.is_finite() && w.is_finite() {
            f(t) * w
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let steps = (U_MAX / h) as i64;
    let mut raw: f64 = (-steps..=steps).map(|k| node(k as f64 * h)).sum();
    let mut estimate = raw * h;
    for _ in 0..MAX_LEVELS {
        h *= 0.5;
        let steps = (U_MAX / h) as i64;
        let fresh: f64 = (-steps..=steps)
            .filter(|k| k % 2 != 0)
            .map(|k| node(k as f64 * h))
            .sum();
        raw += fresh;
        let next = raw * h;
        if (next - estimate).abs() <= QUAD_TOL * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Numerical(format!(
        "exp-sinh quadrature did not converge (last estimate {estimate})"
    )))
}

fn sorted_offsets(y: &[i64]) -> Vec<u32> {
    let mut v: Vec<u32> = y.iter().map(|c| c.unsigned_abs() as u32).collect();
    v.sort_unstable();
    v
}

fn check_args(d: usize, mass2: f64, y: &[i64]) -> Result<()> {
    if y.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: y.len(),
        });
    }
    if !(mass2 >= 0.0) || !mass2.is_finite() {
        return Err(Error::domain(format!(
            "m² must be finite and ≥ 0, got {mass2}"
        )));
    }
    if mass2 == 0.0 && d <= 2 {
        return Err(Error::domain(format!(
            "massless Green function is infinite on Z^{d} (critical β is infinite)"
        )));
    }
    Ok(())
}

/// `G_{ℤ^d, m²}(0, y)` under the convention `-Δf(x) = 2d f(x) - Σ_{y∼x} f(y)`.
pub fn zd_green(d: usize, mass2: f64, y: &[i64]) -> Result<f64> {
    check_args(d, mass2, y)?;
    let offsets = sorted_offsets(y);
    exp_sinh(|t| integrand(&offsets, mass2, t, 0))
}

/// `∂/∂m² G_{ℤ^d, m²}(0, y)`, which is negative.
pub fn zd_green_mass_derivative(d: usize, mass2: f64, y: &[i64]) -> Result<f64> {
    check_args(d, mass2, y)?;
    if mass2 == 0.0 && d <= 4 {
        return Err(Error::domain(
            "mass derivative diverges at m² = 0 for d ≤ 4",
        ));
    }
    let offsets = sorted_offsets(y);
    exp_sinh(|t| -integrand(&offsets, mass2, t, 1))
}

/// Critical inverse temperature `β_c(d) = G_{ℤ^d}(0,0)`; infinite for `d ≤ 2`.
pub fn beta_critical(d: usize) -> Result<f64> {
    if d <= 2 {
        return Ok(f64::INFINITY);
    }
    zd_green(d, 0.0, &vec![0; d])
}

/// Solves `G_{ℤ^d, m²}(0,0) = β` for `m² > 0`.
pub fn solve_zd_mass(d: usize, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!(
            "β must be positive and finite, got {beta}"
        )));
    }
    let origin = vec![0i64; d];
    let bc = beta_critical(d)?;
    if beta >= bc {
        return Err(Error::domain(format!(
            "no positive-mass solution for β = {beta} ≥ β_c = {bc}"
        )));
    }
    let g = |m2: f64| zd_green(d, m2, &origin);
    // G(m²) ≤ 1/m², so m² = 1/β is an upper bracket
    let mut hi = 1.0 / beta;
    let mut lo = hi;
    loop {
        lo *= 1e-4;
        if lo < 1e-300 {
            return Err(Error::Numerical(format!(
                "no lower mass bracket for β = {beta}"
            )));
        }
        if g(lo)? > beta {
            break;
        }
        hi = lo;
    }
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    while lhi - llo > 1e-13 {
        let mid = 0.5 * (llo + lhi);
        if g(mid.exp())? > beta {
            llo = mid;
        } else {
            lhi = mid;
        }
    }
    let mut m2 = (0.5 * (llo + lhi)).exp();
    if d > 4 || m2 > 1e-8 {
        for _ in 0..2 {
            let r = g(m2)? - beta;
            let dg = zd_green_mass_derivative(d, m2, &origin)?;
            let next = m2 - r / dg;
            if next > 0.0 && next.is_finite() {
                m2 = next;
            }
        }
    }
    Ok(m2)
}
