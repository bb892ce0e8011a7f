//! Per-bin maximization of the Lagrangian.
//!
//! For prices `μ` (source power) and `λ` (relay power) each bin solves
//!
//! ```text
//! max_{P ≥ 0, Ξ̄ ≥ 0}  (1/2W) log₂(1 + s(Ξ̄) P) − μP − λΞ̄²(gP + N0)
//! s(Ξ̄) = (a + bΞ̄)² / ((cΞ̄² + 1) N0)
//! ```
//!
//! with `a = |H_SD|`, `b = |H_RD H_SR|`, `c = |H_RD|²`, `g = |H_SR|²`.
//! For fixed `Ξ̄` the optimal `P` is the water level `χ(Ξ̄)`; the value after
//! substituting it depends on `Ξ̄` only through `β(Ξ̄) = s / (μ + λgΞ̄²)`, minus
//! the forwarded-noise cost `λN0Ξ̄²`. A bin is active only when
//! `max β > (2 ln 2) W`.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::relay_model::XI_BAR_MAX;

/// Floor applied to a zero source price inside bin solves.
pub const EPS_DUAL: f64 = 1e-15;

/// Log-spaced probe count for the amplitude scan in [`solve_bin`].
const SCAN_POINTS: usize = 48;

/// Per-bin constants of the subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCoefficients {
    /// `|H_SD|`
    pub a: f64,
    /// `|H_RD H_SR|`
    pub b: f64,
    /// `|H_RD|²`
    pub c: f64,
    /// `|H_SR|²`
    pub g: f64,
    pub n0: f64,
    /// Total bandwidth `W` (enters the `1/(2W)` rate weight).
    pub w: f64,
}

impl BinCoefficients {
    pub fn from_channels(h_sd: Complex64, h_sr: Complex64, h_rd: Complex64, n0: f64, w: f64) -> Self {
        Self {
            a: h_sd.norm(),
            b: (h_rd * h_sr).norm(),
            c: h_rd.norm_sqr(),
            g: h_sr.norm_sqr(),
            n0,
            w,
        }
    }

    /// Activation threshold `(2 ln 2) W`.
    #[inline]
    pub fn kappa(&self) -> f64 {
        2.0 * LN_2 * self.w
    }

    /// SNR per unit source PSD at amplitude `xi`.
    #[inline]
    pub fn snr_gain(&self, xi: f64) -> f64 {
        let amp = self.a + self.b * xi;
        amp * amp / ((self.c * xi * xi + 1.0) * self.n0)
    }

    /// `(1/2W) log₂(1 + s(Ξ̄) P)`.
    #[inline]
    pub fn rate(&self, p: f64, xi: f64) -> f64 {
        (self.snr_gain(xi) * p).ln_1p() / (2.0 * LN_2 * self.w)
    }
}

/// Optimal point of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSolution {
    pub p_star: f64,
    pub xi_star: f64,
    /// Lagrangian density at the optimum (without the `μP̄ + λQ̄` constants).
    pub value: f64,
}

impl BinSolution {
    pub const ZERO: BinSolution = BinSolution { p_star: 0.0, xi_star: 0.0, value: 0.0 };
}

#[inline]
fn price(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    let m = mu + lambda * xi * xi * k.g;
    if !(m > 0.0) {
        return Err(Error::DegenerateDual { mu, lambda });
    }
    Ok(m)
}

/// `β(Ξ̄) = (a + bΞ̄)² / ((μ + λΞ̄²g)(cΞ̄² + 1) N0)`.
pub fn beta(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    Ok(k.snr_gain(xi) / price(xi, k, mu, lambda)?)
}

/// Water level `χ(Ξ̄) = (1/((2 ln 2) W (μ + λΞ̄²g)) − 1/s(Ξ̄))⁺`.
pub fn chi(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    let m = price(xi, k, mu, lambda)?;
    let s = k.snr_gain(xi);
    if s <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 / (k.kappa() * m) - 1.0 / s).max(0.0))
}

/// Value of `(1/2W) log₂(1 + sP) − (μ + λΞ̄²g) P` at `P = χ(Ξ̄)`:
/// zero when `β ≤ (2 ln 2) W`, else `(1/2W) log₂(β/κ) − 1/κ + 1/β`.
pub fn v_value(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    let b = beta(xi, k, mu, lambda)?;
    let kappa = k.kappa();
    if b <= kappa {
        return Ok(0.0);
    }
    Ok((b / kappa).ln() / (2.0 * LN_2 * k.w) - 1.0 / kappa + 1.0 / b)
}

/// Full bin Lagrangian density at `(P, Ξ̄)`, including the forwarded-noise
/// cost `λN0Ξ̄²` of the relay budget.
pub fn lagrangian_density(p: f64, xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> f64 {
    k.rate(p, xi) - mu * p - lambda * xi * xi * (k.g * p + k.n0)
}

/// Bin Lagrangian maximized over `P` at fixed `Ξ̄`: `v(Ξ̄) − λN0Ξ̄²`.
pub fn bin_value(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    Ok(v_value(xi, k, mu, lambda)? - lambda * k.n0 * xi * xi)
}

/// `d ln β / d ln Ξ̄`. Positive left of the maximizer of `β`, negative right of it.
pub fn beta_log_slope(xi: f64, k: &BinCoefficients, mu: f64, lambda: f64) -> f64 {
    let bx = k.b * xi;
    let direct = if bx == 0.0 { 0.0 } else { 2.0 * bx / (k.a + bx) };
    let u = lambda * k.g * xi * xi;
    let price_term = if u == 0.0 { 0.0 } else { 2.0 * u / (mu + u) };
    let w = k.c * xi * xi;
    direct - price_term - 2.0 * w / (1.0 + w)
}

/// Global maximizer of the quasi-concave `β` over `[0, XI_BAR_MAX]`.
///
/// `β` rises then falls in `Ξ̄`, so the sign of its log-slope brackets the
/// peak; the bracket is grown geometrically and then bisected in `ln Ξ̄`.
pub fn maximize_beta(k: &BinCoefficients, mu: f64, lambda: f64) -> Result<f64> {
    if mu < 0.0 || lambda < 0.0 || (mu == 0.0 && (lambda == 0.0 || k.g == 0.0)) {
        return Err(Error::DegenerateDual { mu, lambda });
    }
    if k.b == 0.0 || mu == 0.0 {
        // b = 0: β decreasing. μ = 0: β(0) is the (infinite) supremum.
        return Ok(0.0);
    }
    let slope = |x: f64| beta_log_slope(x, k, mu, lambda);

    // Natural scales of the three factors of β.
    let mut scale = f64::INFINITY;
    if k.a > 0.0 && k.c > 0.0 {
        scale = scale.min(k.b / (k.a * k.c));
    }
    if k.c > 0.0 {
        scale = scale.min(1.0 / k.c.sqrt());
    }
    if lambda * k.g > 0.0 {
        scale = scale.min((mu / (lambda * k.g)).sqrt());
    }
    if k.a > 0.0 {
        scale = scale.min(k.a / k.b);
    }
    if !scale.is_finite() || scale <= 0.0 {
        scale = 1.0;
    }

    let mut hi = scale;
    while slope(hi) > 0.0 {
        if hi >= XI_BAR_MAX {
            return Ok(XI_BAR_MAX);
        }
        hi = (hi * 4.0).min(XI_BAR_MAX);
    }
    let mut lo = hi;
    while !(slope(lo) > 0.0) {
        lo /= 4.0;
        if lo < 1e-300 {
            return Ok(0.0);
        }
    }
    // ln-space bisection on the slope sign.
    for _ in 0..200 {
        if hi / lo - 1.0 <= 1e-13 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (blo, bhi) = (beta(lo, k, mu, lambda)?, beta(hi, k, mu, lambda)?);
    Ok(if bhi > blo { hi } else { lo })
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Solves one bin.
///
/// Inactive bins (`max β ≤ (2 ln 2) W`, including equality) return all
/// zeros. Otherwise the amplitude maximizes `v(Ξ̄) − λN0Ξ̄²` on
/// `[0, argmax β]`; with `λ = 0` this is `argmax β` itself. Ties go to the
/// smaller amplitude.
pub fn solve_bin(k: &BinCoefficients, mu: f64, lambda: f64) -> Result<BinSolution> {
    if mu < 0.0 || lambda < 0.0 || mu.is_nan() || lambda.is_nan() {
        return Err(Error::DegenerateDual { mu, lambda });
    }
    let mu = if mu == 0.0 { EPS_DUAL } else { mu };
    let at = |xi: f64| -> Result<BinSolution> {
        Ok(BinSolution {
            p_star: chi(xi, k, mu, lambda)?,
            xi_star: xi,
            value: bin_value(xi, k, mu, lambda)?,
        })
    };
    if k.b == 0.0 {
        return at(0.0);
    }
    let peak = maximize_beta(k, mu, lambda)?;
    if beta(peak, k, mu, lambda)? <= k.kappa() {
        return Ok(BinSolution::ZERO);
    }
    if lambda == 0.0 || peak == 0.0 {
        return at(peak);
    }

    let u = |xi: f64| bin_value(xi, k, mu, lambda).unwrap_or(f64::NEG_INFINITY);
    let mut best_x = 0.0;
    let mut best_u = u(0.0);
    let lo = peak * 1e-9;
    let ratio = (peak / lo).powf(1.0 / (SCAN_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo * ratio.powi(i as i32)).collect();
    let mut best_i = None;
    for (i, &x) in grid.iter().enumerate() {
        let ux = u(x);
        if ux > best_u {
            best_u = ux;
            best_x = x;
            best_i = Some(i);
        }
    }
    if let Some(i) = best_i {
        let left = if i == 0 { 0.0 } else { grid[i - 1] };
        let right = grid[(i + 1).min(SCAN_POINTS - 1)];
        let (x, ux) = golden_max(u, left, right);
        if ux > best_u {
            best_x = x;
        }
    }
    at(best_x)
}
