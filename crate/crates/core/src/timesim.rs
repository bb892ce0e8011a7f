//! Sample-level simulation of the relay feedback loop and Welch spectral
//! estimators, used to check the closed-form loop response.
//!
//! The simulation runs in complex baseband at `Fs = W`. Passband-referenced
//! taps (the convention of [`TapVector::response_at`]) are shifted down by
//! the carrier, so a baseband frequency `f_b` corresponds to `f_c + f_b`.
//!
//! ```text
//! r[n] = (h_sr * s)[n] + α_bb x[n − D] + n_R[n]
//! x[n] = (θ * r)[n]
//! y[n] = (h_sd * s)[n] + (h_rd * x)[n] + n_D[n]
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::channel::{build_grid, ChannelProfile, ChannelTaps, FrequencyGrid, SystemConfig, TapVector};
use crate::error::{Error, Result};
use crate::relay_model::{effective_noise_psd, effective_response, loopback_response, relay_tx_psd};

/// Magnitude above which a sample is treated as a diverging loop.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Largest loop gain `max |α̂Θ|` accepted for fixtures.
pub const STABILITY_MARGIN: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub sample_rate: f64,
    pub center_freq: f64,
    pub num_samples: usize,
    pub warmup_samples: usize,
    /// Loop-back delay in samples, at least 1.
    pub delay_samples: usize,
    /// Relay filter impulse response, passband-referenced.
    pub filter_taps: Vec<Complex64>,
    pub channel_taps: ChannelTaps,
    pub alpha: f64,
    /// W/Hz at both receivers.
    pub noise_psd: f64,
    /// Flat source PSD, W/Hz. Zero silences the source.
    pub source_psd: f64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.sample_rate > 0.0) {
            return bad("sample rate must be positive");
        }
        if self.delay_samples < 1 {
            return bad("loop-back delay must be at least one sample");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if !(self.noise_psd >= 0.0 && self.source_psd >= 0.0) {
            return bad("PSDs must be nonnegative");
        }
        if self.num_samples == 0 {
            return bad("num_samples must be positive");
        }
        Ok(())
    }

    pub fn loop_delay(&self) -> f64 {
        self.delay_samples as f64 / self.sample_rate
    }

    fn to_baseband(&self, taps: &[Complex64]) -> Vec<Complex64> {
        let step = -2.0 * PI * self.center_freq / self.sample_rate;
        taps.iter()
            .enumerate()
            .map(|(n, &h)| h * Complex64::from_polar(1.0, step * n as f64))
            .collect()
    }
}

/// Signals after warm-up.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecords {
    pub sample_rate: f64,
    pub center_freq: f64,
    pub s: Vec<Complex64>,
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

/// `N` taps whose transform `Σ θ[n] e^{−j2π f_k n / W}` reproduces `theta`
/// on the grid.
pub fn filter_taps_from_response(theta: &[Complex64], grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    let n = grid.len();
    if theta.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let fs = grid.bandwidth();
    let f0 = grid.centers[0];
    // θ[n] = (1/N) Σ_k Θ_k e^{j2π f_k n/Fs} = e^{j2π f0 n/Fs} · IDFT(Θ)[n]
    let mut buf = theta.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf
        .into_iter()
        .enumerate()
        .map(|(i, v)| v * scale * Complex64::from_polar(1.0, 2.0 * PI * f0 * i as f64 / fs))
        .collect())
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

/// Drops trailing taps that are negligible next to the largest one.
fn trim(taps: &[Complex64]) -> Vec<Complex64> {
    let peak = taps.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let keep = taps.iter().rposition(|t| t.norm() > 1e-14 * peak).map_or(0, |i| i + 1);
    taps[..keep].to_vec()
}

fn fir(taps: &[Complex64], history: &[Complex64], n: usize) -> Complex64 {
    taps.iter()
        .enumerate()
        .take(n + 1)
        .map(|(m, &h)| h * history[n - m])
        .sum()
}

/// Runs the loop sample by sample and returns the records after warm-up.
pub fn simulate<R: Rng + ?Sized>(scenario: &SimScenario, rng: &mut R) -> Result<SimRecords> {
    scenario.validate()?;
    let total = scenario.warmup_samples + scenario.num_samples;
    let fs = scenario.sample_rate;
    let h_sd = trim(&scenario.to_baseband(&scenario.channel_taps.sd.taps));
    let h_sr = trim(&scenario.to_baseband(&scenario.channel_taps.sr.taps));
    let h_rd = trim(&scenario.to_baseband(&scenario.channel_taps.rd.taps));
    let theta = trim(&scenario.to_baseband(&scenario.filter_taps));
    let d = scenario.delay_samples;
    let alpha_bb =
        Complex64::from_polar(scenario.alpha, -2.0 * PI * scenario.center_freq * d as f64 / fs);
    let src_var = scenario.source_psd * fs;
    let noise_var = scenario.noise_psd * fs;

    let mut s = Vec::with_capacity(total);
    for _ in 0..total {
        s.push(if src_var > 0.0 { gaussian(rng, src_var) } else { Complex64::new(0.0, 0.0) });
    }
    let mut r = vec![Complex64::new(0.0, 0.0); total];
    let mut x = vec![Complex64::new(0.0, 0.0); total];
    let mut y = vec![Complex64::new(0.0, 0.0); total];
    for n in 0..total {
        let n_r = if noise_var > 0.0 { gaussian(rng, noise_var) } else { Complex64::new(0.0, 0.0) };
        let n_d = if noise_var > 0.0 { gaussian(rng, noise_var) } else { Complex64::new(0.0, 0.0) };
        let fed_back = if n >= d { alpha_bb * x[n - d] } else { Complex64::new(0.0, 0.0) };
        r[n] = fir(&h_sr, &s, n) + fed_back + n_r;
        x[n] = fir(&theta, &r, n);
        if !(x[n].norm() <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence { sample: n });
        }
        y[n] = fir(&h_sd, &s, n) + fir(&h_rd, &x, n) + n_d;
    }
    let w = scenario.warmup_samples;
    Ok(SimRecords {
        sample_rate: fs,
        center_freq: scenario.center_freq,
        s: s.split_off(w),
        x: x.split_off(w),
        y: y.split_off(w),
    })
}

/// Welch estimates on the grid frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    /// Grid centers, Hz (passband-referenced).
    pub freqs: Vec<f64>,
    /// `Ŝ_ys / Ŝ_ss`; zero where the source carries no power.
    pub transfer: Vec<Complex64>,
    /// PSD of `y`, W/Hz. Equals the destination noise PSD when the source is silent.
    pub noise_psd_at_d: Vec<f64>,
    /// PSD of `x`, W/Hz.
    pub relay_tx_psd: Vec<f64>,
    pub num_averages: usize,
}

/// Samples needed for `num_segments` Hann segments at 50% overlap.
pub fn samples_needed(segment_len: usize, num_segments: usize) -> usize {
    if num_segments == 0 {
        return 0;
    }
    segment_len + (num_segments - 1) * (segment_len / 2)
}

/// Averaged cross- and auto-spectra with Hann windows and 50% overlap,
/// evaluated at the grid centers. `segment_len` must be a positive multiple
/// of the grid size; longer segments trade averages for less window leakage.
pub fn estimate_transfer(
    records: &SimRecords,
    grid: &FrequencyGrid,
    segment_len: usize,
    num_segments: usize,
) -> Result<SpectralEstimate> {
    if grid.is_empty() || segment_len == 0 || segment_len % grid.len() != 0 {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: segment_len,
        });
    }
    let stride = segment_len / grid.len();
    let needed = samples_needed(segment_len, num_segments);
    let have = records.s.len().min(records.x.len()).min(records.y.len());
    if num_segments == 0 || have < needed {
        return Err(Error::InsufficientData { needed, have });
    }
    let l = segment_len;
    let hop = (l / 2).max(1);
    let fs = records.sample_rate;
    let f0 = grid.centers[0] - records.center_freq;
    // periodic Hann, premultiplied by the shift that puts bin 0 on the first grid center
    let window: Vec<Complex64> = (0..l)
        .map(|n| {
            let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / l as f64).cos();
            Complex64::from_polar(w, -2.0 * PI * f0 * n as f64 / fs)
        })
        .collect();
    let power: f64 = window.iter().map(|w| w.norm_sqr()).sum();
    let fft = FftPlanner::new().plan_fft_forward(l);

    let mut s_ss = vec![0.0; l];
    let mut s_xx = vec![0.0; l];
    let mut s_yy = vec![0.0; l];
    let mut s_ys = vec![Complex64::new(0.0, 0.0); l];
    let mut bufs = [vec![Complex64::new(0.0, 0.0); l], vec![Complex64::new(0.0, 0.0); l], vec![Complex64::new(0.0, 0.0); l]];
    for seg in 0..num_segments {
        let start = seg * hop;
        for (buf, sig) in bufs.iter_mut().zip([&records.s, &records.x, &records.y]) {
            for n in 0..l {
                buf[n] = sig[start + n] * window[n];
            }
            fft.process(buf);
        }
        let [bs, bx, by] = &bufs;
        for k in 0..l {
            s_ss[k] += bs[k].norm_sqr();
            s_xx[k] += bx[k].norm_sqr();
            s_yy[k] += by[k].norm_sqr();
            s_ys[k] += by[k] * bs[k].conj();
        }
    }
    let norm = 1.0 / (num_segments as f64 * fs * power);
    let on_grid = |k: usize| k * stride;
    let transfer = (0..grid.len())
        .map(|k| {
            let (c, a) = (s_ys[on_grid(k)], s_ss[on_grid(k)]);
            if a > 0.0 {
                c / a
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(SpectralEstimate {
        freqs: grid.centers.clone(),
        transfer,
        noise_psd_at_d: (0..grid.len()).map(|k| s_yy[on_grid(k)] * norm).collect(),
        relay_tx_psd: (0..grid.len()).map(|k| s_xx[on_grid(k)] * norm).collect(),
        num_averages: num_segments,
    })
}

/// A loop scenario plus everything needed to compare it against the closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub config: SystemConfig,
    pub grid: FrequencyGrid,
    pub taps: ChannelTaps,
    /// Relay filter response on the grid.
    pub theta: Vec<Complex64>,
    pub delay_samples: usize,
    pub source_psd: f64,
    /// Welch segment length, a multiple of the grid size.
    pub segment_len: usize,
    /// Averages for the transfer run (source on).
    pub transfer_segments: usize,
    /// Averages for the noise run (source silent).
    pub noise_segments: usize,
    pub seed: u64,
}

impl Fixture {
    pub fn max_loop_gain(&self) -> Result<f64> {
        let a = loopback_response(self.config.loopback_alpha, self.config.loopback_tau, &self.grid)?.alpha_hat;
        Ok(a.iter().zip(&self.theta).map(|(a, t)| (a * t).norm()).fold(0.0, f64::max))
    }

    fn scenario(&self, source_psd: f64, segments: usize) -> Result<SimScenario> {
        let warmup = 8 * self.grid.len();
        Ok(SimScenario {
            sample_rate: self.config.bandwidth_w,
            center_freq: self.config.center_freq,
            num_samples: samples_needed(self.segment_len, segments),
            warmup_samples: warmup,
            delay_samples: self.delay_samples,
            filter_taps: filter_taps_from_response(&self.theta, &self.grid)?,
            channel_taps: self.taps.clone(),
            alpha: self.config.loopback_alpha,
            noise_psd: self.config.noise_psd_n0,
            source_psd,
        })
    }
}

/// Relative-error summary of one fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureReport {
    pub name: String,
    pub max_loop_gain: f64,
    pub transfer_median_err: f64,
    pub transfer_max_err: f64,
    /// Band-integrated relay PSD vs the closed form.
    pub relay_power_err: f64,
    /// Band-integrated destination noise PSD vs the closed form.
    pub noise_power_err: f64,
    /// Median per-bin destination noise PSD error.
    pub noise_median_err: f64,
    /// Set when the fixture was skipped; the errors are then NaN.
    pub skipped: Option<String>,
}

/// Tolerances a fixture must meet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub transfer_median: f64,
    pub transfer_max: f64,
    pub relay_power: f64,
    pub noise_power: f64,
    pub noise_median: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            transfer_median: 0.01,
            transfer_max: 0.05,
            relay_power: 0.05,
            noise_power: 0.05,
            noise_median: 0.05,
        }
    }
}

impl FixtureReport {
    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.skipped.is_none()
            && self.transfer_median_err <= tol.transfer_median
            && self.transfer_max_err <= tol.transfer_max
            && self.relay_power_err <= tol.relay_power
            && self.noise_power_err <= tol.noise_power
            && self.noise_median_err <= tol.noise_median
    }
}

impl std::fmt::Display for FixtureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(why) = &self.skipped {
            return write!(f, "{} skipped: {why}", self.name);
        }
        write!(
            f,
            "{} loop_gain={:.3} transfer_median={:.2e} transfer_max={:.2e} relay_power={:.2e} noise_power={:.2e} noise_median={:.2e}",
            self.name,
            self.max_loop_gain,
            self.transfer_median_err,
            self.transfer_max_err,
            self.relay_power_err,
            self.noise_power_err,
            self.noise_median_err
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn skipped(f: &Fixture, gain: f64, why: String) -> FixtureReport {
    FixtureReport {
        name: f.name.clone(),
        max_loop_gain: gain,
        transfer_median_err: f64::NAN,
        transfer_max_err: f64::NAN,
        relay_power_err: f64::NAN,
        noise_power_err: f64::NAN,
        noise_median_err: f64::NAN,
        skipped: Some(why),
    }
}

/// Simulates a fixture twice (source on, source silent) and compares the
/// estimates with the closed-form loop response, destination noise PSD and
/// relay PSD.
pub fn verify_fixture(f: &Fixture) -> Result<FixtureReport> {
    let gain = f.max_loop_gain()?;
    if gain > STABILITY_MARGIN {
        return Ok(skipped(f, gain, format!("loop gain {gain:.3} above {STABILITY_MARGIN}")));
    }
    let channels = f.taps.on_grid(&f.grid);
    let alpha_hat = loopback_response(f.config.loopback_alpha, f.config.loopback_tau, &f.grid)?.alpha_hat;
    let n0 = f.config.noise_psd_n0;
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);

    let on = match simulate(&f.scenario(f.source_psd, f.transfer_segments)?, &mut rng) {
        Ok(r) => r,
        Err(Error::Divergence { sample }) => return Ok(skipped(f, gain, format!("diverged at sample {sample}"))),
        Err(e) => return Err(e),
    };
    let est = estimate_transfer(&on, &f.grid, f.segment_len, f.transfer_segments)?;
    let h = effective_response(&channels, &f.theta, &alpha_hat)?;
    let errs: Vec<f64> = est.transfer.iter().zip(&h).map(|(e, h)| (e - h).norm() / h.norm()).collect();
    let p = vec![f.source_psd; f.grid.len()];
    let q = relay_tx_psd(&f.theta, &alpha_hat, &channels.h_sr, &p, n0)?;
    let relay_power_err = (f.grid.integrate(&est.relay_tx_psd) - f.grid.integrate(&q)).abs() / f.grid.integrate(&q);

    let off = match simulate(&f.scenario(0.0, f.noise_segments)?, &mut rng) {
        Ok(r) => r,
        Err(Error::Divergence { sample }) => return Ok(skipped(f, gain, format!("diverged at sample {sample}"))),
        Err(e) => return Err(e),
    };
    let noise = estimate_transfer(&off, &f.grid, f.segment_len, f.noise_segments)?;
    let nd = effective_noise_psd(&channels.h_rd, &f.theta, &alpha_hat, n0)?;
    let noise_power_err = (f.grid.integrate(&noise.noise_psd_at_d) - f.grid.integrate(&nd)).abs() / f.grid.integrate(&nd);
    let noise_errs: Vec<f64> = noise.noise_psd_at_d.iter().zip(&nd).map(|(e, t)| (e - t).abs() / t).collect();

    Ok(FixtureReport {
        name: f.name.clone(),
        max_loop_gain: gain,
        transfer_median_err: median(errs.clone()),
        transfer_max_err: errs.iter().copied().fold(0.0, f64::max),
        relay_power_err,
        noise_power_err,
        noise_median_err: median(noise_errs),
        skipped: None,
    })
}

/// Response of a short filter on the grid.
pub fn short_filter_response(taps: &[Complex64], grid: &FrequencyGrid, sample_rate: f64) -> Vec<Complex64> {
    let tv = TapVector {
        taps: taps.to_vec(),
        tap_spacing: 1.0 / sample_rate,
    };
    grid.centers.iter().map(|&f| tv.response_at(f)).collect()
}

/// Fixture Welch segments span this many grid lengths. One grid length
/// leaves a leakage bias of a few percent at deep notches of strong loops.
pub const SEGMENT_FACTOR: usize = 4;

/// Stable fixtures with random channels, loop-back and a short relay filter.
/// The first fixture has no loop-back.
pub fn default_fixtures(seed: u64, count: usize) -> Result<Vec<Fixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = SystemConfig {
        center_freq: 0.0,
        num_subchannels: 1024,
        noise_psd_n0: 1e-6 / 10.24e6,
        ..SystemConfig::paper()
    };
    let profile = ChannelProfile {
        taps_sd: 4,
        taps_sr: 4,
        taps_rd: 4,
        tap_var_db_sd: -6.0,
        tap_var_db_sr: -6.0,
        tap_var_db_rd: -6.0,
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let delay: usize = rng.random_range(1..=8);
        let alpha = if i == 0 { 0.0 } else { rng.random_range(0.2..0.9) };
        let config = SystemConfig {
            loopback_alpha: alpha,
            loopback_tau: delay as f64 / base.bandwidth_w,
            ..base.clone()
        };
        let grid = build_grid(&config)?;
        let grid_len = grid.len();
        let taps = profile.draw(1.0 / config.bandwidth_w, &mut rng);
        let raw: Vec<Complex64> = (0..3).map(|_| gaussian(&mut rng, 1.0)).collect();
        let mut theta = short_filter_response(&raw, &grid, config.bandwidth_w);
        let target = if alpha > 0.0 { rng.random_range(0.3..0.8) } else { 1.0 };
        let peak = theta.iter().map(|t| t.norm()).fold(0.0, f64::max) * if alpha > 0.0 { alpha } else { 1.0 };
        theta.iter_mut().for_each(|t| *t *= target / peak);
        out.push(Fixture {
            name: format!("fixture-{i}"),
            config,
            grid,
            taps,
            theta,
            delay_samples: delay,
            source_psd: 1.0 / base.bandwidth_w,
            segment_len: SEGMENT_FACTOR * grid_len,
            transfer_segments: 512,
            noise_segments: 2048,
            seed: rng.random(),
        });
    }
    Ok(out)
}
