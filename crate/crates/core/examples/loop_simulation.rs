//! Sample-by-sample simulation of the relay loop, checked against the
//! closed-form end-to-end response and noise spectrum.

use fdff::harness::{lemma1_passes, run_verify_lemma1};
use fdff::timesim::{default_fixtures, estimate_transfer, samples_needed, simulate, SimScenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdff::Result<()> {
    // one fixture by hand
    let f = &default_fixtures(3, 2)?[1];
    let n = f.grid.len();
    let segments = 256;
    let scenario = SimScenario {
        sample_rate: f.config.bandwidth_w,
        center_freq: f.config.center_freq,
        num_samples: samples_needed(n, segments),
        warmup_samples: 8 * n,
        delay_samples: f.delay_samples,
        filter_taps: fdff::timesim::filter_taps_from_response(&f.theta, &f.grid)?,
        channel_taps: f.taps.clone(),
        alpha: f.config.loopback_alpha,
        noise_psd: f.config.noise_psd_n0,
        source_psd: f.source_psd,
    };
    let rec = simulate(&scenario, &mut ChaCha8Rng::seed_from_u64(0))?;
    let est = estimate_transfer(&rec, &f.grid, n, segments)?;
    println!("{}: alpha={} delay={} samples, {} averages", f.name, f.config.loopback_alpha, f.delay_samples, est.num_averages);
    for k in (0..n).step_by(n / 8) {
        println!("  f={:>10.0} Hz  |H_hat|={:.4e}", est.freqs[k], est.transfer[k].norm());
    }

    // the full check on ten fixtures
    let reports = run_verify_lemma1(0, 10)?;
    for r in &reports {
        println!("{r}");
    }
    println!("{}", if lemma1_passes(&reports) { "all fixtures pass" } else { "some fixtures fail" });
    Ok(())
}
