//! Joint source PSD / relay filter design on one channel draw.

use fdff::channel::{build_grid, ChannelProfile, SystemConfig};
use fdff::dual_solver::{complementary_slackness, ellipsoid_minimize, SolverOptions};
use fdff::relay_model::{evaluate_through_loop, loopback_response};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdff::Result<()> {
    let cfg = SystemConfig::paper();
    let grid = build_grid(&cfg)?;
    let ch = ChannelProfile::default()
        .draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(1))
        .on_grid(&grid);

    let t = std::time::Instant::now();
    let sol = ellipsoid_minimize(&ch, &grid, &cfg, &SolverOptions::tight())?;
    let r = &sol.report;
    println!("rate          {:.6} bps/Hz", r.rate_bps_hz);
    println!("source power  {:.9} W of {}", r.source_power_used, cfg.source_budget_p);
    println!("relay power   {:.9} W of {}", r.relay_power_used, cfg.relay_budget_q);
    println!("duality gap   {:.2e} after {} iterations ({:?})", r.duality_gap_rel, r.iterations, t.elapsed());
    println!("duals         mu={:.4e} lambda={:.4e}", sol.duals.mu, sol.duals.lambda);
    let cs = complementary_slackness(&sol, &cfg);
    println!("slackness     {:.2e} {:.2e}", cs[0], cs[1]);

    // the designed filter, pushed through the actual loop, gives the same rate
    let ah = loopback_response(cfg.loopback_alpha, cfg.loopback_tau, &grid)?.alpha_hat;
    let (rate, relay) = evaluate_through_loop(&sol.allocation, &ch, &ah, &grid, &cfg)?;
    println!("through loop  rate {:.6}, relay {:.9} W", rate, relay);

    let active = sol.allocation.p.iter().filter(|&&p| p > 0.0).count();
    println!("active bins   {active} / {}", grid.len());
    Ok(())
}
