//! Draws one set of frequency-selective channels and prints a few bins.
//!
//! `cargo run --example channel_grid -- 7`

use fdff::channel::{build_grid, ChannelProfile, SystemConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdff::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let cfg = SystemConfig::desk();
    let grid = build_grid(&cfg)?;
    let taps = ChannelProfile::default().draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(seed));
    let ch = taps.on_grid(&grid);

    println!("{} bins of {:.0} Hz", grid.len(), grid.delta_f);
    println!("{:>12} {:>10} {:>10} {:>10}", "f (Hz)", "|H_SD| dB", "|H_SR| dB", "|H_RD| dB");
    let db = |h: num_complex::Complex64| 20.0 * h.norm().log10();
    for k in (0..grid.len()).step_by(grid.len() / 16) {
        println!(
            "{:>12.0} {:>10.1} {:>10.1} {:>10.1}",
            grid.centers[k],
            db(ch.h_sd[k]),
            db(ch.h_sr[k]),
            db(ch.h_rd[k])
        );
    }
    // the grid response is the tap transform evaluated at the bin centers
    let f = grid.centers[5];
    assert!((taps.sd.response_at(f) - ch.h_sd[5]).norm() < 1e-18);
    Ok(())
}
