//! Reference schemes the joint design is compared against.
//!
//! * [`equal_power`]: flat source PSD, relay amplitude that spreads `Q̄` evenly.
//! * [`source_only`]: relay amplitude frozen at the equal-power value, source PSD optimized.
//! * [`relay_only`]: source PSD frozen at `P̄/W`, relay amplitude optimized.
//! * [`conventional_sic`]: loop-back ignored at design time, residual
//!   self-interference added to the relay noise at evaluation time.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::channel::{db_to_linear, ChannelSet, FrequencyGrid, SystemConfig};
use crate::dual_solver::{
    self, amplitude_ceiling, bin_coefficients, candidate_rate, ellipsoid_minimize, optimize_relay, optimize_source,
    water_fill, JointSolution, SolverOptions, BUDGET_TOL,
};
use crate::error::{Error, Result};
use crate::relay_model::{loopback_response, total_rate, Allocation, RateReport};

/// Grid size of the per-bin amplitude search in [`relay_only`].
pub const RELAY_ONLY_GRID: usize = 256;

/// Scheme selector used by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Joint,
    Equal,
    SourceOnly,
    RelayOnly,
    Conventional,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Joint,
        Scheme::Equal,
        Scheme::SourceOnly,
        Scheme::RelayOnly,
        Scheme::Conventional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Joint => "joint",
            Scheme::Equal => "equal",
            Scheme::SourceOnly => "source_only",
            Scheme::RelayOnly => "relay_only",
            Scheme::Conventional => "conventional",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown scheme `{s}`")))
    }
}

/// Residual self-interference left after cancellation, modeled as white
/// noise at the relay receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSiModel {
    /// Linear reduction factor.
    pub zeta: f64,
    /// `Q̄ α² / (W ζ)`, W/Hz.
    pub si_psd: f64,
}

impl ResidualSiModel {
    pub fn new(zeta: f64, alpha: f64, config: &SystemConfig) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(Error::InvalidConfig(format!("zeta must be positive, got {zeta}")));
        }
        Ok(Self {
            zeta,
            si_psd: config.relay_budget_q * alpha * alpha / (config.bandwidth_w * zeta),
        })
    }

    pub fn from_db(zeta_db: f64, alpha: f64, config: &SystemConfig) -> Result<Self> {
        Self::new(db_to_linear(zeta_db), alpha, config)
    }
}

fn alpha_hat(config: &SystemConfig, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    Ok(loopback_response(config.loopback_alpha, config.loopback_tau, grid)?.alpha_hat)
}

fn equal_amplitudes(channels: &ChannelSet, p: f64, config: &SystemConfig) -> Vec<f64> {
    channels
        .h_sr
        .iter()
        .map(|h| (config.relay_budget_q / (config.bandwidth_w * (h.norm_sqr() * p + config.noise_psd_n0))).sqrt())
        .collect()
}

/// Flat source PSD `P̄/W` and `Ξ̄ = sqrt(Q̄ / (W(|H_SR|²P + N0)))`, which spends
/// the relay budget exactly.
pub fn equal_power(channels: &ChannelSet, grid: &FrequencyGrid, config: &SystemConfig) -> Result<Allocation> {
    config.validate()?;
    let p = config.source_budget_p / config.bandwidth_w;
    let xi = equal_amplitudes(channels, p, config);
    Allocation::new(vec![p; channels.len()], xi, channels, &alpha_hat(config, grid)?)
}

/// Optimal source PSD for relay amplitudes frozen at the equal-power values.
///
/// A concave program with two linear constraints, solved on its dual with the
/// same ellipsoid machinery as the joint problem. Never worse than
/// [`equal_power`], which is feasible here.
pub fn source_only(
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    opts: &SolverOptions,
) -> Result<Allocation> {
    config.validate()?;
    let n = channels.len();
    let p_flat = config.source_budget_p / config.bandwidth_w;
    let xi = equal_amplitudes(channels, p_flat, config);
    let coeffs = bin_coefficients(channels, config);
    let delta_f = grid.delta_f;
    let budgets = [config.source_budget_p, config.relay_budget_q];
    let noise: f64 = coeffs.iter().zip(&xi).map(|(k, x)| x * x * k.n0).sum::<f64>() * delta_f;
    if noise > budgets[1] * (1.0 + BUDGET_TOL) {
        return Err(Error::InfeasibleRelayBudget {
            budget: budgets[1],
            noise,
        });
    }
    let ah = alpha_hat(config, grid)?;
    if budgets[0] <= 0.0 {
        return Allocation::new(vec![0.0; n], xi, channels, &ah);
    }
    if budgets[1] <= 0.0 || xi.iter().all(|&x| x == 0.0) {
        let gains: Vec<f64> = coeffs.iter().zip(&xi).map(|(k, &x)| k.snr_gain(x)).collect();
        return Allocation::new(water_fill(&gains, budgets[0], delta_f), xi, channels, &ah);
    }

    let best = optimize_source(&coeffs, &xi, budgets, delta_f, opts)?;
    let flat_rate = candidate_rate(&coeffs, &vec![p_flat; n], &xi, delta_f);
    let p = if best.rate >= flat_rate { best.p } else { vec![p_flat; n] };
    Allocation::new(p, xi, channels, &ah)
}

/// Optimal relay amplitudes for the flat source PSD `P̄/W`.
///
/// One-dimensional dual: bisection on the relay price, per-bin amplitude by
/// grid bracket plus golden-section refinement. The best feasible point seen
/// (including the equal-power amplitudes) is returned.
pub fn relay_only(channels: &ChannelSet, grid: &FrequencyGrid, config: &SystemConfig) -> Result<Allocation> {
    config.validate()?;
    let n = channels.len();
    let ah = alpha_hat(config, grid)?;
    let p = config.source_budget_p / config.bandwidth_w;
    let q = config.relay_budget_q;
    if q <= 0.0 || p <= 0.0 {
        let xi = equal_amplitudes(channels, p, config);
        return Allocation::new(vec![p; n], xi, channels, &ah);
    }
    let coeffs = bin_coefficients(channels, config);
    let delta_f = grid.delta_f;
    let start = equal_amplitudes(channels, p, config);
    let best = optimize_relay(
        &coeffs,
        &vec![p; n],
        &start,
        q,
        delta_f,
        amplitude_ceiling(config, delta_f),
        RELAY_ONLY_GRID,
    );
    Allocation::new(vec![p; n], best.xi, channels, &ah)
}

/// Rate of a zero-loop-back design evaluated with residual self-interference
/// of PSD `si.si_psd` added to the relay receiver noise.
///
/// The relay power reported is what the filter actually radiates, which
/// exceeds `Q̄` whenever `si_psd > 0`. With `rescale` the filter is scaled
/// back onto the budget before evaluation.
pub fn conventional_sic(
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    si: &ResidualSiModel,
    opts: &SolverOptions,
    rescale: bool,
) -> Result<RateReport> {
    let design = conventional_design(channels, grid, config, opts)?;
    evaluate_conventional(&design, channels, grid, config, si, rescale)
}

/// Joint design with the loop-back ignored (`α = 0`, so `Θ = Ξ`).
pub fn conventional_design(
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    opts: &SolverOptions,
) -> Result<JointSolution> {
    let design_cfg = SystemConfig {
        loopback_alpha: 0.0,
        ..config.clone()
    };
    ellipsoid_minimize(channels, grid, &design_cfg, opts)
}

/// Evaluation half of [`conventional_sic`] for an existing design.
pub fn evaluate_conventional(
    design: &JointSolution,
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    si: &ResidualSiModel,
    rescale: bool,
) -> Result<RateReport> {
    let alloc = &design.allocation;
    if alloc.len() != channels.len() {
        return Err(Error::LengthMismatch {
            expected: channels.len(),
            got: alloc.len(),
        });
    }
    let n0 = config.noise_psd_n0;
    let s = si.si_psd;
    let radiated = |theta: &[Complex64]| -> f64 {
        (0..channels.len())
            .map(|k| theta[k].norm_sqr() * (channels.h_sr[k].norm_sqr() * alloc.p[k] + n0 + s))
            .sum::<f64>()
            * grid.delta_f
    };
    let mut theta = alloc.theta.clone();
    let mut relay_power = radiated(&theta);
    if rescale && relay_power > config.relay_budget_q {
        let t = (config.relay_budget_q / relay_power).sqrt();
        theta.iter_mut().for_each(|v| *v *= t);
        relay_power = radiated(&theta);
    }
    let rate_density: Vec<f64> = (0..channels.len())
        .map(|k| {
            let num = (channels.h_sd[k] + channels.h_rd[k] * channels.h_sr[k] * theta[k]).norm_sqr() * alloc.p[k];
            let den = (channels.h_rd[k] * theta[k]).norm_sqr() * (n0 + s) + n0;
            0.5 * (num / den).ln_1p() / std::f64::consts::LN_2
        })
        .collect();
    Ok(RateReport {
        rate_bps_hz: grid.integrate(&rate_density) / config.bandwidth_w,
        rate_density,
        source_power_used: grid.integrate(&alloc.p),
        relay_power_used: relay_power,
        ..design.report.clone()
    })
}

/// Runs one scheme and reports its rate. `si` is required for
/// [`Scheme::Conventional`] and ignored otherwise.
pub fn run_scheme(
    scheme: Scheme,
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    opts: &SolverOptions,
    si: Option<&ResidualSiModel>,
) -> Result<RateReport> {
    let report = |alloc: Allocation| total_rate(&alloc, channels, grid, config);
    let mut r = match scheme {
        Scheme::Joint => return Ok(dual_solver::ellipsoid_minimize(channels, grid, config, opts)?.report),
        Scheme::Equal => report(equal_power(channels, grid, config)?),
        Scheme::SourceOnly => report(source_only(channels, grid, config, opts)?),
        Scheme::RelayOnly => report(relay_only(channels, grid, config)?),
        Scheme::Conventional => {
            let si = si.ok_or_else(|| Error::InvalidConfig("conventional scheme needs a residual SI model".into()))?;
            return conventional_sic(channels, grid, config, si, opts, false);
        }
    };
    r.diagnostics.converged = true;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::build_grid;
    use crate::channel::ChannelProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(n: usize, seed: u64) -> (SystemConfig, FrequencyGrid, ChannelSet) {
        let cfg = SystemConfig {
            num_subchannels: n,
            ..SystemConfig::paper()
        };
        let grid = build_grid(&cfg).unwrap();
        let ch = ChannelProfile::default()
            .draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(seed))
            .on_grid(&grid);
        (cfg, grid, ch)
    }

    fn rate(a: &Allocation, ch: &ChannelSet, grid: &FrequencyGrid, cfg: &SystemConfig) -> f64 {
        total_rate(a, ch, grid, cfg).rate_bps_hz
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("joint_opt".parse::<Scheme>().is_err());
    }

    #[test]
    fn equal_power_spends_relay_budget() {
        let (cfg, grid, ch) = instance(64, 1);
        let a = equal_power(&ch, &grid, &cfg).unwrap();
        let r = total_rate(&a, &ch, &grid, &cfg);
        assert!((r.relay_power_used / cfg.relay_budget_q - 1.0).abs() < 1e-12);
        assert!((r.source_power_used / cfg.source_budget_p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_power_without_relay_budget() {
        let (mut cfg, grid, ch) = instance(32, 2);
        cfg.relay_budget_q = 0.0;
        let a = equal_power(&ch, &grid, &cfg).unwrap();
        assert!(a.xi_bar.iter().all(|&x| x == 0.0));
        let p = cfg.source_budget_p / cfg.bandwidth_w;
        let direct: f64 = ch
            .h_sd
            .iter()
            .map(|h| 0.5 * (1.0 + h.norm_sqr() * p / cfg.noise_psd_n0).log2() * grid.delta_f)
            .sum::<f64>()
            / cfg.bandwidth_w;
        assert!((rate(&a, &ch, &grid, &cfg) - direct).abs() < 1e-12);
    }

    #[test]
    fn flat_channels_give_flat_solutions() {
        let cfg = SystemConfig {
            num_subchannels: 16,
            ..SystemConfig::paper()
        };
        let grid = build_grid(&cfg).unwrap();
        let ch = ChannelSet::flat(16, 3e-6, 1e-5, 1e-5);
        let eq = equal_power(&ch, &grid, &cfg).unwrap();
        assert!(eq.xi_bar.iter().all(|&x| (x / eq.xi_bar[0] - 1.0).abs() < 1e-14));
        let so = source_only(&ch, &grid, &cfg, &SolverOptions::tight()).unwrap();
        assert!(so.p.iter().all(|&p| (p / so.p[0] - 1.0).abs() < 1e-6), "{:?}", so.p);
        assert!((rate(&so, &ch, &grid, &cfg) - rate(&eq, &ch, &grid, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn heuristics_beat_equal_power() {
        for seed in 0..5 {
            let (cfg, grid, ch) = instance(64, seed);
            let eq = rate(&equal_power(&ch, &grid, &cfg).unwrap(), &ch, &grid, &cfg);
            let so = source_only(&ch, &grid, &cfg, &SolverOptions::tight()).unwrap();
            let ro = relay_only(&ch, &grid, &cfg).unwrap();
            for a in [&so, &ro] {
                let r = total_rate(a, &ch, &grid, &cfg);
                assert!(r.rate_bps_hz >= eq - 1e-9, "seed {seed}: {} < {eq}", r.rate_bps_hz);
                assert!(r.source_power_used <= cfg.source_budget_p * (1.0 + 1e-9));
                assert!(r.relay_power_used <= cfg.relay_budget_q * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn source_only_without_relay_is_water_filling() {
        let (mut cfg, grid, ch) = instance(32, 3);
        cfg.relay_budget_q = 0.0;
        let a = source_only(&ch, &grid, &cfg, &SolverOptions::tight()).unwrap();
        // water level by bisection: P_k = max(0, L - N0/|H_SD|²), sum P_k Δf = P̄
        let inv: Vec<f64> = ch.h_sd.iter().map(|h| cfg.noise_psd_n0 / h.norm_sqr()).collect();
        let spent = |l: f64| inv.iter().map(|i| (l - i).max(0.0)).sum::<f64>() * grid.delta_f;
        let (mut lo, mut hi) = (0.0, 1.0);
        while spent(hi) < cfg.source_budget_p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spent(mid) < cfg.source_budget_p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let level = 0.5 * (lo + hi);
        for (p, i) in a.p.iter().zip(&inv) {
            let want = (level - i).max(0.0);
            assert!((p - want).abs() <= 1e-8 * level, "{p} vs {want}");
        }
    }

    #[test]
    fn relay_only_without_relay_budget() {
        let (mut cfg, grid, ch) = instance(16, 4);
        cfg.relay_budget_q = 0.0;
        let a = relay_only(&ch, &grid, &cfg).unwrap();
        assert!(a.xi_bar.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relay_only_single_bin_matches_scan() {
        for seed in 0..4 {
            let (cfg, grid, ch) = instance(1, seed);
            let a = relay_only(&ch, &grid, &cfg).unwrap();
            let got = rate(&a, &ch, &grid, &cfg);
            let p = cfg.source_budget_p / cfg.bandwidth_w;
            let xi_max = (cfg.relay_budget_q / (grid.delta_f * (ch.h_sr[0].norm_sqr() * p + cfg.noise_psd_n0))).sqrt();
            let step = 1e-5 * xi_max;
            let mut best: f64 = 0.0;
            for i in 0..=100_000 {
                let t = Allocation::new(vec![p], vec![i as f64 * step], &ch, &[Complex64::new(0.0, 0.0)]).unwrap();
                best = best.max(rate(&t, &ch, &grid, &cfg));
            }
            assert!(got >= best - 1e-9, "seed {seed}: {got} < {best}");
            assert!(got <= best + 1e-6, "seed {seed}: {got} > {best}");
        }
    }

    #[test]
    fn conventional_without_loopback_matches_joint() {
        let (mut cfg, grid, ch) = instance(64, 5);
        cfg.loopback_alpha = 0.0;
        let opts = SolverOptions::tight();
        let joint = ellipsoid_minimize(&ch, &grid, &cfg, &opts).unwrap();
        let si = ResidualSiModel::new(1e9, 0.0, &cfg).unwrap();
        assert_eq!(si.si_psd, 0.0);
        let conv = conventional_sic(&ch, &grid, &cfg, &si, &opts, false).unwrap();
        assert!((conv.rate_bps_hz - joint.report.rate_bps_hz).abs() < 1e-12);
    }

    #[test]
    fn conventional_degrades_with_interference() {
        let (cfg, grid, ch) = instance(64, 6);
        let opts = SolverOptions::tight();
        let design = conventional_design(&ch, &grid, &cfg, &opts).unwrap();
        let eval = |zeta_db: f64, alpha: f64| {
            let si = ResidualSiModel::from_db(zeta_db, alpha, &cfg).unwrap();
            evaluate_conventional(&design, &ch, &grid, &cfg, &si, false).unwrap()
        };
        let clean = eval(90.0, 0.0).rate_bps_hz;
        let mut last = clean;
        for alpha in [0.01, 0.1, 0.5, 0.9] {
            let r90 = eval(90.0, alpha);
            let r120 = eval(120.0, alpha);
            assert!(r90.rate_bps_hz < clean);
            assert!(r90.rate_bps_hz <= last);
            assert!(r120.rate_bps_hz >= r90.rate_bps_hz);
            assert!(r90.relay_power_used > cfg.relay_budget_q);
            last = r90.rate_bps_hz;
        }
        let si = ResidualSiModel::from_db(90.0, 0.9, &cfg).unwrap();
        let scaled = evaluate_conventional(&design, &ch, &grid, &cfg, &si, true).unwrap();
        assert!((scaled.relay_power_used / cfg.relay_budget_q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conventional_requires_si_model() {
        let (cfg, grid, ch) = instance(8, 7);
        assert!(run_scheme(Scheme::Conventional, &ch, &grid, &cfg, &SolverOptions::default(), None).is_err());
        assert!(ResidualSiModel::new(0.0, 0.5, &cfg).is_err());
    }
}
