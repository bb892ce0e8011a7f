//! Closed-form model of the full-duplex filter-and-forward relay channel.
//!
//! With relay filter `Θ(f)` and loop-back `α̂(f) = α exp(-j2πτf)` the
//! end-to-end response, noise PSD at the destination and relay transmit PSD
//! all share the loop gain `Θ / (1 - α̂Θ)`. Substituting `Ξ = Θ / (1 - α̂Θ)`
//! removes `α` and `τ` from every quantity, and aligning the phase of `Ξ`
//! with the direct path leaves only the amplitude `Ξ̄ = |Ξ|` to optimize.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::channel::{ChannelSet, FrequencyGrid, SystemConfig};
use crate::error::{Error, Result};

/// Below this the loop / mapping denominators are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Amplitudes beyond this are clamped before evaluation.
pub const XI_BAR_MAX: f64 = 1e12;

/// Per-bin loop-back response `α̂(f_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackResponse {
    pub alpha_hat: Vec<Complex64>,
}

pub fn loopback_response(alpha: f64, tau: f64, grid: &FrequencyGrid) -> Result<LoopbackResponse> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let alpha_hat = grid
        .centers
        .iter()
        .map(|&f| Complex64::from_polar(alpha, -2.0 * PI * tau * f))
        .collect();
    Ok(LoopbackResponse { alpha_hat })
}

fn check_len(n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::LengthMismatch { expected: n, got });
    }
    Ok(())
}

/// Loop gain `Θ / (1 - α̂Θ)` at one bin.
fn loop_gain(theta: Complex64, alpha_hat: Complex64, bin: usize) -> Result<Complex64> {
    let den = Complex64::new(1.0, 0.0) - alpha_hat * theta;
    let magnitude = den.norm();
    if magnitude < SINGULAR_EPS {
        return Err(Error::SingularLoop { bin, magnitude });
    }
    Ok(theta / den)
}

fn loop_gains(theta: &[Complex64], alpha_hat: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(theta.len(), alpha_hat.len())?;
    theta
        .iter()
        .zip(alpha_hat)
        .enumerate()
        .map(|(k, (&t, &a))| loop_gain(t, a, k))
        .collect()
}

/// End-to-end response `H_SD + H_RD H_SR Θ / (1 - α̂Θ)`.
pub fn effective_response(
    channels: &ChannelSet,
    theta: &[Complex64],
    alpha_hat: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_len(channels.len(), theta.len())?;
    let gains = loop_gains(theta, alpha_hat)?;
    Ok(gains
        .iter()
        .enumerate()
        .map(|(k, &l)| channels.h_sd[k] + channels.h_rd[k] * channels.h_sr[k] * l)
        .collect())
}

/// Destination noise PSD `(|H_RD Θ / (1 - α̂Θ)|² + 1) N0`.
pub fn effective_noise_psd(
    h_rd: &[Complex64],
    theta: &[Complex64],
    alpha_hat: &[Complex64],
    n0: f64,
) -> Result<Vec<f64>> {
    check_len(h_rd.len(), theta.len())?;
    let gains = loop_gains(theta, alpha_hat)?;
    Ok(gains
        .iter()
        .zip(h_rd)
        .map(|(&l, &h)| ((h * l).norm_sqr() + 1.0) * n0)
        .collect())
}

/// Relay transmit PSD `|Θ / (1 - α̂Θ)|² (|H_SR|² P + N0)`.
pub fn relay_tx_psd(
    theta: &[Complex64],
    alpha_hat: &[Complex64],
    h_sr: &[Complex64],
    p: &[f64],
    n0: f64,
) -> Result<Vec<f64>> {
    check_len(theta.len(), h_sr.len())?;
    check_len(theta.len(), p.len())?;
    let gains = loop_gains(theta, alpha_hat)?;
    Ok(gains
        .iter()
        .zip(h_sr.iter().zip(p))
        .map(|(&l, (&h, &pk))| l.norm_sqr() * (h.norm_sqr() * pk + n0))
        .collect())
}

/// `Θ = Ξ / (1 + α̂Ξ)`.
pub fn theta_from_xi(xi: &[Complex64], alpha_hat: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(xi.len(), alpha_hat.len())?;
    xi.iter()
        .zip(alpha_hat)
        .enumerate()
        .map(|(k, (&x, &a))| {
            let den = Complex64::new(1.0, 0.0) + a * x;
            if den.norm() < SINGULAR_EPS {
                return Err(Error::SingularMapping { bin: k });
            }
            Ok(x / den)
        })
        .collect()
}

/// `Ξ = Θ / (1 - α̂Θ)`.
pub fn xi_from_theta(theta: &[Complex64], alpha_hat: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(theta.len(), alpha_hat.len())?;
    theta
        .iter()
        .zip(alpha_hat)
        .enumerate()
        .map(|(k, (&t, &a))| {
            let den = Complex64::new(1.0, 0.0) - a * t;
            if den.norm() < SINGULAR_EPS {
                return Err(Error::SingularMapping { bin: k });
            }
            Ok(t / den)
        })
        .collect()
}

/// Gives `Ξ` amplitude `Ξ̄` and the phase of `H_SD H_RD* H_SR*`, so the relayed
/// path adds coherently to the direct path. Bins where that product vanishes
/// get phase 0.
pub fn align_phase(xi_bar: &[f64], channels: &ChannelSet) -> Vec<Complex64> {
    xi_bar
        .iter()
        .enumerate()
        .map(|(k, &amp)| {
            let dir = channels.h_sd[k] * (channels.h_rd[k] * channels.h_sr[k]).conj();
            let norm = dir.norm();
            if norm > 0.0 && norm.is_finite() {
                dir * (amp / norm)
            } else {
                Complex64::new(amp, 0.0)
            }
        })
        .collect()
}

/// Filter response realizing amplitudes `Ξ̄` under loop-back `α̂`.
pub fn theta_for_amplitudes(
    xi_bar: &[f64],
    channels: &ChannelSet,
    alpha_hat: &[Complex64],
) -> Result<Vec<Complex64>> {
    theta_from_xi(&align_phase(xi_bar, channels), alpha_hat)
}

/// `½ log₂(1 + |H_eff|² P / noise_eff)` per bin, through the loop formulas.
pub fn rate_density(
    p: &[f64],
    theta: &[Complex64],
    channels: &ChannelSet,
    alpha_hat: &[Complex64],
    n0: f64,
) -> Result<Vec<f64>> {
    check_len(channels.len(), p.len())?;
    let h_eff = effective_response(channels, theta, alpha_hat)?;
    let noise = effective_noise_psd(&channels.h_rd, theta, alpha_hat, n0)?;
    Ok(h_eff
        .iter()
        .zip(noise.iter().zip(p))
        .map(|(h, (&nz, &pk))| 0.5 * (1.0 + h.norm_sqr() * pk / nz).log2())
        .collect())
}

/// Per-bin SNR in the amplitude parametrization.
#[inline]
pub fn reformulated_snr(p: f64, xi_bar: f64, a: f64, b: f64, c: f64, n0: f64) -> f64 {
    let x = xi_bar.min(XI_BAR_MAX);
    if p <= 0.0 {
        return 0.0;
    }
    let amp = a + b * x;
    amp * amp * p / ((c * x * x + 1.0) * n0)
}

/// `½ log₂(1 + (|H_SD| + |H_RD H_SR| Ξ̄)² P / ((|H_RD|² Ξ̄² + 1) N0))` per bin.
pub fn rate_density_reformulated(p: &[f64], xi_bar: &[f64], channels: &ChannelSet, n0: f64) -> Vec<f64> {
    (0..channels.len())
        .map(|k| {
            let a = channels.h_sd[k].norm();
            let b = (channels.h_rd[k] * channels.h_sr[k]).norm();
            let c = channels.h_rd[k].norm_sqr();
            0.5 * reformulated_snr(p[k], xi_bar[k], a, b, c, n0).ln_1p() / std::f64::consts::LN_2
        })
        .collect()
}

/// Relay transmit PSD in the amplitude parametrization, `Ξ̄² (|H_SR|² P + N0)`.
pub fn relay_psd_reformulated(p: &[f64], xi_bar: &[f64], channels: &ChannelSet, n0: f64) -> Vec<f64> {
    (0..channels.len())
        .map(|k| {
            let x = xi_bar[k].min(XI_BAR_MAX);
            x * x * (channels.h_sr[k].norm_sqr() * p[k] + n0)
        })
        .collect()
}

/// Source PSD, relay amplitude and the filter realizing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub p: Vec<f64>,
    pub xi_bar: Vec<f64>,
    pub theta: Vec<Complex64>,
}

impl Allocation {
    /// Builds the allocation and derives `Θ` for the given loop-back.
    pub fn new(
        p: Vec<f64>,
        xi_bar: Vec<f64>,
        channels: &ChannelSet,
        alpha_hat: &[Complex64],
    ) -> Result<Self> {
        check_len(channels.len(), p.len())?;
        check_len(channels.len(), xi_bar.len())?;
        if p.iter().chain(&xi_bar).any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConfig("allocation entries must be nonnegative".into()));
        }
        let theta = theta_for_amplitudes(&xi_bar, channels, alpha_hat)?;
        Ok(Self { p, xi_bar, theta })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            xi_bar: vec![0.0; n],
            theta: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Solver-side notes attached to a report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub converged: bool,
    /// Bins where the designed loop has `|α̂Θ| >= 1`. Reported, not rejected.
    pub unstable_loop_bins: usize,
    /// Primal recovery had to rescale the per-bin solutions.
    pub recovery_adjusted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Achievable rate in bps/Hz.
    pub rate_bps_hz: f64,
    /// `R(f_k)` per bin.
    pub rate_density: Vec<f64>,
    pub source_power_used: f64,
    pub relay_power_used: f64,
    pub duality_gap_rel: f64,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
}

/// Rate and power usage of an allocation, evaluated in the amplitude form.
pub fn total_rate(alloc: &Allocation, channels: &ChannelSet, grid: &FrequencyGrid, config: &SystemConfig) -> RateReport {
    let n0 = config.noise_psd_n0;
    let rate_density = rate_density_reformulated(&alloc.p, &alloc.xi_bar, channels, n0);
    let rate_bps_hz = grid.integrate(&rate_density) / config.bandwidth_w;
    let source_power_used = grid.integrate(&alloc.p);
    let relay_power_used = grid.integrate(&relay_psd_reformulated(&alloc.p, &alloc.xi_bar, channels, n0));
    let alpha_hat = loopback_response(config.loopback_alpha, config.loopback_tau, grid)
        .map(|l| l.alpha_hat)
        .unwrap_or_default();
    let unstable_loop_bins = alpha_hat
        .iter()
        .zip(&alloc.theta)
        .filter(|(a, t)| (**a * **t).norm() >= 1.0)
        .count();
    RateReport {
        rate_bps_hz,
        rate_density,
        source_power_used,
        relay_power_used,
        duality_gap_rel: 0.0,
        iterations: 0,
        diagnostics: Diagnostics {
            unstable_loop_bins,
            ..Default::default()
        },
    }
}

/// Rate and relay power recomputed through the loop formulas with the
/// allocation's `Θ` and the given loop-back. Returns `(rate_bps_hz, relay_power_w)`.
pub fn evaluate_through_loop(
    alloc: &Allocation,
    channels: &ChannelSet,
    alpha_hat: &[Complex64],
    grid: &FrequencyGrid,
    config: &SystemConfig,
) -> Result<(f64, f64)> {
    let n0 = config.noise_psd_n0;
    let r = rate_density(&alloc.p, &alloc.theta, channels, alpha_hat, n0)?;
    let q = relay_tx_psd(&alloc.theta, alpha_hat, &channels.h_sr, &alloc.p, n0)?;
    Ok((grid.integrate(&r) / config.bandwidth_w, grid.integrate(&q)))
}
