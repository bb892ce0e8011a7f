//! Loads a key/value file over a base profile and solves once.
//!
//! `cargo run --example config_file -- my.toml`

use fdff::config::{self, Profile};
use fdff::harness::{run_single, ExperimentSpec};

const SAMPLE: &str = "\
num_subchannels = 128
source_power_dbm = 20
relay_power_dbm = 25
alpha = 0.3
taps_sd = 4
seed = 11
";

fn main() -> fdff::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => config::load(path.as_ref(), Profile::Desk)?,
        None => config::RunConfig::profile(Profile::Desk).apply(&config::parse(SAMPLE)?)?,
    };
    print!("{}", cfg.to_toml());
    let rows = run_single(&ExperimentSpec::rate_vs_power(cfg))?;
    for r in rows {
        println!("{:<12} {:.6} bps/Hz", r.scheme, r.rate_bps_hz);
    }
    Ok(())
}
