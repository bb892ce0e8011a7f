//! Joint design against the heuristic schemes and the conventional design
//! with residual self-interference, on a handful of draws.

use fdff::baselines::{run_scheme, ResidualSiModel, Scheme};
use fdff::channel::{build_grid, ChannelProfile, SystemConfig};
use fdff::dual_solver::SolverOptions;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdff::Result<()> {
    let cfg = SystemConfig::desk();
    let grid = build_grid(&cfg)?;
    let opts = SolverOptions::tight();
    let si = ResidualSiModel::from_db(90.0, cfg.loopback_alpha, &cfg)?;

    print!("{:>5}", "draw");
    for s in Scheme::ALL {
        print!(" {:>13}", s.as_str());
    }
    println!();
    for seed in 0..5 {
        let ch = ChannelProfile::default()
            .draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(seed))
            .on_grid(&grid);
        print!("{seed:>5}");
        for s in Scheme::ALL {
            let r = run_scheme(s, &ch, &grid, &cfg, &opts, Some(&si))?;
            print!(" {:>13.6}", r.rate_bps_hz);
        }
        println!();
    }
    println!("(conventional at zeta = 90 dB, alpha = {})", cfg.loopback_alpha);
    Ok(())
}
