//! Loop-back sweep: the joint design is indifferent to α, the
//! conventional design loses rate as residual self-interference grows.

use fdff::config::{Profile, RunConfig};
use fdff::harness::{mean_rates, run_rate_vs_alpha, ExperimentSpec};

fn main() -> fdff::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = ExperimentSpec {
        trials,
        ..ExperimentSpec::rate_vs_alpha(RunConfig::profile(Profile::Desk))
    };
    let rows = run_rate_vs_alpha(&spec)?;
    let means = mean_rates(&rows);
    let labels: Vec<String> = {
        let mut v: Vec<String> = means.iter().map(|m| m.1.clone()).collect();
        v.dedup();
        v.truncate(1 + spec.zeta_db_list.len());
        v
    };
    print!("{:>10}", "alpha^2");
    for l in &labels {
        print!(" {l:>20}");
    }
    println!();
    for &a2 in &spec.sweep {
        print!("{a2:>10.1e}");
        for l in &labels {
            let m = means.iter().find(|m| m.0 == a2 && &m.1 == l).map(|m| m.2).unwrap_or(f64::NAN);
            print!(" {m:>20.6}");
        }
        println!();
    }
    Ok(())
}
