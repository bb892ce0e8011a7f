//! Frequency grid, multi-tap channel generation and unit conversions.
//!
//! Everything downstream works on the discretized band: `N` equal bins of
//! width `W / N`, integrals over the band become midpoint sums over the bin
//! centers. Channels are tapped delay lines with circularly-symmetric complex
//! Gaussian taps, evaluated on the bin centers.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Physical and budget parameters of one relay link, in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Total bandwidth `W` in Hz.
    pub bandwidth_w: f64,
    /// Center frequency in Hz.
    pub center_freq: f64,
    pub num_subchannels: usize,
    /// Noise PSD at both receivers, W/Hz.
    pub noise_psd_n0: f64,
    /// Source power budget, W.
    pub source_budget_p: f64,
    /// Relay power budget, W.
    pub relay_budget_q: f64,
    /// Loop-back attenuation, in `[0, 1)`.
    pub loopback_alpha: f64,
    /// Loop-back delay in seconds.
    pub loopback_tau: f64,
    pub seed: u64,
}

impl SystemConfig {
    /// Full-size setup: 10.24 MHz split in 1024 bins, N0 = -145 dBm/Hz,
    /// 30 dBm at both source and relay.
    pub fn paper() -> Self {
        Self {
            bandwidth_w: 10.24e6,
            center_freq: 0.0,
            num_subchannels: 1024,
            noise_psd_n0: dbm_per_hz_to_w_per_hz(-145.0),
            source_budget_p: dbm_to_w(30.0),
            relay_budget_q: dbm_to_w(30.0),
            loopback_alpha: 0.5,
            loopback_tau: 4.0 / 10.24e6,
            seed: 0,
        }
    }

    /// Same physics on 256 bins, for quick runs.
    pub fn desk() -> Self {
        Self {
            num_subchannels: 256,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.bandwidth_w.is_finite() && self.bandwidth_w > 0.0) {
            return bad("bandwidth must be positive");
        }
        if self.num_subchannels == 0 {
            return bad("need at least one subchannel");
        }
        if !(self.noise_psd_n0.is_finite() && self.noise_psd_n0 > 0.0) {
            return bad("noise PSD must be positive");
        }
        if !(self.source_budget_p >= 0.0 && self.relay_budget_q >= 0.0) {
            return bad("power budgets must be nonnegative");
        }
        if !self.center_freq.is_finite() {
            return bad("center frequency must be finite");
        }
        if !(self.loopback_tau.is_finite() && self.loopback_tau >= 0.0) {
            return bad("loop-back delay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.loopback_alpha) {
            return Err(Error::AlphaOutOfRange(self.loopback_alpha));
        }
        Ok(())
    }
}

/// Uniform partition of the band into bins, represented by their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub centers: Vec<f64>,
    pub delta_f: f64,
}

impl FrequencyGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Total bandwidth covered, `N * delta_f`.
    pub fn bandwidth(&self) -> f64 {
        self.delta_f * self.centers.len() as f64
    }

    /// Midpoint Riemann sum of per-bin densities.
    pub fn integrate(&self, density: &[f64]) -> f64 {
        density.iter().sum::<f64>() * self.delta_f
    }
}

pub fn build_grid(config: &SystemConfig) -> Result<FrequencyGrid> {
    config.validate()?;
    let n = config.num_subchannels;
    let delta_f = config.bandwidth_w / n as f64;
    let first = config.center_freq - config.bandwidth_w / 2.0 + delta_f / 2.0;
    let centers = (0..n).map(|k| first + k as f64 * delta_f).collect();
    Ok(FrequencyGrid { centers, delta_f })
}

/// Tapped-delay-line impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct TapVector {
    pub taps: Vec<Complex64>,
    /// Spacing between taps in seconds.
    pub tap_spacing: f64,
}

impl TapVector {
    pub fn new(taps: Vec<Complex64>, tap_spacing: f64) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("taps must be finite and nonempty".into()));
        }
        Ok(Self { taps, tap_spacing })
    }

    /// Frequency response `sum_m taps[m] exp(-j 2 pi f m T)` at `f`.
    pub fn response_at(&self, f: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, -2.0 * PI * f * self.tap_spacing);
        // Horner in the per-tap phasor keeps this O(taps) without repeated trig.
        self.taps
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &t| acc * step + t)
    }
}

/// Draws `num_taps` circularly-symmetric complex Gaussian taps of total
/// variance `10^(variance_db / 10)` each (real and imaginary halves get half).
pub fn sample_taps<R: Rng + ?Sized>(
    num_taps: usize,
    variance_db: f64,
    tap_spacing: f64,
    rng: &mut R,
) -> TapVector {
    assert!(num_taps >= 1, "need at least one tap");
    let variance = 10f64.powf(variance_db / 10.0);
    let sigma = (variance / 2.0).sqrt();
    let taps = (0..num_taps)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    TapVector { taps, tap_spacing }
}

pub fn response_on_grid(taps: &TapVector, grid: &FrequencyGrid) -> Vec<Complex64> {
    grid.centers.iter().map(|&f| taps.response_at(f)).collect()
}

/// The three link responses sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_sd: Vec<Complex64>,
    pub h_sr: Vec<Complex64>,
    pub h_rd: Vec<Complex64>,
}

impl ChannelSet {
    pub fn new(h_sd: Vec<Complex64>, h_sr: Vec<Complex64>, h_rd: Vec<Complex64>) -> Result<Self> {
        let n = h_sd.len();
        for v in [&h_sr, &h_rd] {
            if v.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: v.len() });
            }
        }
        if [&h_sd, &h_sr, &h_rd].iter().any(|v| v.iter().any(|h| !h.is_finite())) {
            return Err(Error::InvalidConfig("channel responses must be finite".into()));
        }
        Ok(Self { h_sd, h_sr, h_rd })
    }

    /// Flat channels with the given real gains on `n` bins.
    pub fn flat(n: usize, h_sd: f64, h_sr: f64, h_rd: f64) -> Self {
        let c = |x: f64| vec![Complex64::new(x, 0.0); n];
        Self {
            h_sd: c(h_sd),
            h_sr: c(h_sr),
            h_rd: c(h_rd),
        }
    }

    pub fn len(&self) -> usize {
        self.h_sd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_sd.is_empty()
    }
}

/// Tap counts and per-tap variances (dB) for the three links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    pub taps_sd: usize,
    pub taps_sr: usize,
    pub taps_rd: usize,
    pub tap_var_db_sd: f64,
    pub tap_var_db_sr: f64,
    pub tap_var_db_rd: f64,
}

impl Default for ChannelProfile {
    /// 8 taps per link; S-D 10 dB weaker than the two relay hops.
    fn default() -> Self {
        Self {
            taps_sd: 8,
            taps_sr: 8,
            taps_rd: 8,
            tap_var_db_sd: -110.0,
            tap_var_db_sr: -100.0,
            tap_var_db_rd: -100.0,
        }
    }
}

/// Impulse responses of the three links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    pub sd: TapVector,
    pub sr: TapVector,
    pub rd: TapVector,
}

impl ChannelTaps {
    pub fn on_grid(&self, grid: &FrequencyGrid) -> ChannelSet {
        ChannelSet {
            h_sd: response_on_grid(&self.sd, grid),
            h_sr: response_on_grid(&self.sr, grid),
            h_rd: response_on_grid(&self.rd, grid),
        }
    }
}

impl ChannelProfile {
    /// Draws S-D, S-R, R-D taps in that order from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, tap_spacing: f64, rng: &mut R) -> ChannelTaps {
        let sd = sample_taps(self.taps_sd, self.tap_var_db_sd, tap_spacing, rng);
        let sr = sample_taps(self.taps_sr, self.tap_var_db_sr, tap_spacing, rng);
        let rd = sample_taps(self.taps_rd, self.tap_var_db_rd, tap_spacing, rng);
        ChannelTaps { sd, sr, rd }
    }
}

pub fn dbm_per_hz_to_w_per_hz(x: f64) -> f64 {
    10f64.powf((x - 30.0) / 10.0)
}

pub fn dbm_to_w(x: f64) -> f64 {
    10f64.powf((x - 30.0) / 10.0)
}

pub fn w_to_dbm(x: f64) -> f64 {
    10.0 * x.log10() + 30.0
}

pub fn db_to_linear(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}
