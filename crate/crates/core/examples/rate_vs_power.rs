//! Monte-Carlo budget sweep, mean rate per scheme, CSV to a file.
//!
//! `cargo run --release --example rate_vs_power -- 20 power.csv`

use std::fs::File;

use fdff::config::{Profile, RunConfig};
use fdff::harness::{mean_rates, run_rate_vs_power, write_csv, ExperimentSpec};

fn main() -> fdff::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let out = args.next();

    let mut base = RunConfig::profile(Profile::Desk);
    base.system.seed = 42;
    let spec = ExperimentSpec {
        trials,
        ..ExperimentSpec::rate_vs_power(base)
    };
    let rows = run_rate_vs_power(&spec)?;
    for (dbm, scheme, mean) in mean_rates(&rows) {
        println!("{dbm:>5} dBm  {scheme:<12} {mean:.6}");
    }
    let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
    println!("{} rows, {flagged} flagged", rows.len());
    if let Some(path) = out {
        write_csv(&rows, File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
