//! Flat key/value configuration files (TOML syntax).
//!
//! ```toml
//! bandwidth_hz = 10.24e6
//! num_subchannels = 256
//! noise_psd_dbm_hz = -145
//! source_power_dbm = 30
//! relay_power_dbm = 30
//! alpha = 0.5
//! tau_s = 3.90625e-7
//! taps_sd = 8
//! tap_var_db_sd = -110
//! gap_tol = 1e-4
//! ```
//!
//! Every key is optional; missing keys keep the value of the base profile.
//! Power and noise values are in dBm, internally converted to W and W/Hz.

use std::path::Path;

use serde::Deserialize;

use crate::channel::{dbm_per_hz_to_w_per_hz, dbm_to_w, w_to_dbm, ChannelProfile, SystemConfig};
use crate::dual_solver::SolverOptions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub bandwidth_hz: Option<f64>,
    pub center_freq_hz: Option<f64>,
    pub num_subchannels: Option<usize>,
    pub noise_psd_dbm_hz: Option<f64>,
    pub source_power_dbm: Option<f64>,
    pub relay_power_dbm: Option<f64>,
    pub alpha: Option<f64>,
    pub tau_s: Option<f64>,
    pub seed: Option<u64>,
    pub taps_sd: Option<usize>,
    pub taps_sr: Option<usize>,
    pub taps_rd: Option<usize>,
    pub tap_var_db_sd: Option<f64>,
    pub tap_var_db_sr: Option<f64>,
    pub tap_var_db_rd: Option<f64>,
    pub sim_samples: Option<usize>,
    pub warmup: Option<usize>,
    pub segment_len: Option<usize>,
    pub num_segments: Option<usize>,
    pub gap_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub radius_scale: Option<f64>,
}

/// Time-domain simulation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    /// Samples kept after warm-up. Zero means "as many as the segments need".
    pub sim_samples: usize,
    pub warmup: usize,
    /// Zero means "the number of subchannels".
    pub segment_len: usize,
    pub num_segments: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            sim_samples: 0,
            warmup: 8192,
            segment_len: 0,
            num_segments: 1024,
        }
    }
}

/// Everything a run needs. Runs start from the tight solver settings
/// because they compare schemes whose rates can differ by less than the
/// default gap tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub profile: ChannelProfile,
    pub solver: SolverOptions,
    pub sim: SimSettings,
}

/// Named base configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 256 subchannels.
    Desk,
    /// 1024 subchannels.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Parse(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        Self {
            system: match p {
                Profile::Desk => SystemConfig::desk(),
                Profile::Paper => SystemConfig::paper(),
            },
            profile: ChannelProfile::default(),
            solver: SolverOptions::tight(),
            sim: SimSettings::default(),
        }
    }

    /// Overrides the fields present in `file`.
    pub fn apply(mut self, file: &ConfigFile) -> Result<Self> {
        let s = &mut self.system;
        macro_rules! set {
            ($src:ident => $dst:expr) => {
                if let Some(v) = file.$src {
                    $dst = v;
                }
            };
            ($src:ident => $dst:expr, $conv:expr) => {
                if let Some(v) = file.$src {
                    $dst = $conv(v);
                }
            };
        }
        set!(bandwidth_hz => s.bandwidth_w);
        set!(center_freq_hz => s.center_freq);
        set!(num_subchannels => s.num_subchannels);
        set!(noise_psd_dbm_hz => s.noise_psd_n0, dbm_per_hz_to_w_per_hz);
        set!(source_power_dbm => s.source_budget_p, dbm_to_w);
        set!(relay_power_dbm => s.relay_budget_q, dbm_to_w);
        set!(alpha => s.loopback_alpha);
        set!(tau_s => s.loopback_tau);
        set!(seed => s.seed);
        let p = &mut self.profile;
        set!(taps_sd => p.taps_sd);
        set!(taps_sr => p.taps_sr);
        set!(taps_rd => p.taps_rd);
        set!(tap_var_db_sd => p.tap_var_db_sd);
        set!(tap_var_db_sr => p.tap_var_db_sr);
        set!(tap_var_db_rd => p.tap_var_db_rd);
        let m = &mut self.sim;
        set!(sim_samples => m.sim_samples);
        set!(warmup => m.warmup);
        set!(segment_len => m.segment_len);
        set!(num_segments => m.num_segments);
        let o = &mut self.solver;
        set!(gap_tol => o.gap_tol);
        set!(max_iter => o.max_iter);
        set!(radius_scale => o.radius_scale);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let p = &self.profile;
        if p.taps_sd == 0 || p.taps_sr == 0 || p.taps_rd == 0 {
            return Err(Error::InvalidConfig("tap counts must be positive".into()));
        }
        let o = &self.solver;
        if !(o.gap_tol > 0.0) || o.max_iter == 0 || !(o.radius_scale >= 1.0) {
            return Err(Error::InvalidConfig(
                "need gap_tol > 0, max_iter > 0 and radius_scale >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Renders the configuration back into the file format.
    pub fn to_toml(&self) -> String {
        let s = &self.system;
        let p = &self.profile;
        format!(
            "bandwidth_hz = {:e}\ncenter_freq_hz = {:e}\nnum_subchannels = {}\nnoise_psd_dbm_hz = {}\n\
             source_power_dbm = {}\nrelay_power_dbm = {}\nalpha = {}\ntau_s = {:e}\nseed = {}\n\
             taps_sd = {}\ntaps_sr = {}\ntaps_rd = {}\ntap_var_db_sd = {}\ntap_var_db_sr = {}\ntap_var_db_rd = {}\n\
             sim_samples = {}\nwarmup = {}\nsegment_len = {}\nnum_segments = {}\n\
             gap_tol = {:e}\nmax_iter = {}\nradius_scale = {}\n",
            s.bandwidth_w,
            s.center_freq,
            s.num_subchannels,
            w_to_dbm(s.noise_psd_n0),
            w_to_dbm(s.source_budget_p),
            w_to_dbm(s.relay_budget_q),
            s.loopback_alpha,
            s.loopback_tau,
            s.seed,
            p.taps_sd,
            p.taps_sr,
            p.taps_rd,
            p.tap_var_db_sd,
            p.tap_var_db_sr,
            p.tap_var_db_rd,
            self.sim.sim_samples,
            self.sim.warmup,
            self.sim.segment_len,
            self.sim.num_segments,
            self.solver.gap_tol,
            self.solver.max_iter,
            self.solver.radius_scale,
        )
    }
}

pub fn parse(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads `path` and applies it on top of `base`.
pub fn load(path: &Path, base: Profile) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::profile(base).apply(&parse(&text)?)
}
