#![allow(dead_code)]

use fdff::channel::{build_grid, ChannelProfile, ChannelSet, FrequencyGrid, SystemConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rate of one bin, `(1/2W) log₂(1 + SNR)·Δf`, written out independently of the library.
fn bin_rate(hsd: f64, hsr2: f64, hrd2: f64, p: f64, xi: f64, n0: f64, w: f64, df: f64) -> f64 {
    let amp = hsd + (hrd2 * hsr2).sqrt() * xi;
    let snr = amp * amp * p / ((hrd2 * xi * xi + 1.0) * n0);
    (1.0 + snr).log2() / (2.0 * w) * df
}

/// Exhaustive optimum over per-bin shares of both budgets on a lattice with
/// `units` steps each. A bin with `i` source units and `j` relay units gets
/// `P = i P̄ / (units Δf)` and the amplitude that makes it radiate `j Q̄ / units`.
pub fn lattice_optimum(ch: &ChannelSet, grid: &FrequencyGrid, cfg: &SystemConfig, units: usize) -> f64 {
    let n = ch.len();
    let u = units;
    let df = grid.delta_f;
    let tables: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let (hsd, hsr2, hrd2) = (ch.h_sd[k].norm(), ch.h_sr[k].norm_sqr(), ch.h_rd[k].norm_sqr());
            let mut t = vec![0.0; (u + 1) * (u + 1)];
            for i in 0..=u {
                let p = i as f64 * cfg.source_budget_p / (u as f64 * df);
                for j in 0..=u {
                    let q = j as f64 * cfg.relay_budget_q / u as f64;
                    let xi = (q / (df * (hsr2 * p + cfg.noise_psd_n0))).sqrt();
                    t[i * (u + 1) + j] = bin_rate(hsd, hsr2, hrd2, p, xi, cfg.noise_psd_n0, cfg.bandwidth_w, df);
                }
            }
            t
        })
        .collect();
    let merge = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut c = vec![f64::NEG_INFINITY; (u + 1) * (u + 1)];
        for big_i in 0..=u {
            for big_j in 0..=u {
                let mut best = f64::NEG_INFINITY;
                for i in 0..=big_i {
                    let ra = &a[i * (u + 1)..];
                    let rb = &b[(big_i - i) * (u + 1)..];
                    for j in 0..=big_j {
                        let v = ra[j] + rb[big_j - j];
                        if v > best {
                            best = v;
                        }
                    }
                }
                c[big_i * (u + 1) + big_j] = best;
            }
        }
        c
    };
    // exact-sum tables for the first and second half, then budgets spent at most
    let half = n / 2;
    let fold = |ts: &[Vec<f64>]| -> Vec<f64> {
        let mut acc = ts[0].clone();
        for t in &ts[1..] {
            acc = merge(&acc, t);
        }
        acc
    };
    let left = fold(&tables[..half.max(1)]);
    let right = if n > 1 { fold(&tables[half.max(1)..]) } else { vec![0.0; (u + 1) * (u + 1)] };
    let mut closure = right.clone();
    for i in 0..=u {
        for j in 0..=u {
            let mut v = closure[i * (u + 1) + j];
            if i > 0 {
                v = v.max(closure[(i - 1) * (u + 1) + j]);
            }
            if j > 0 {
                v = v.max(closure[i * (u + 1) + j - 1]);
            }
            closure[i * (u + 1) + j] = v;
        }
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..=u {
        for j in 0..=u {
            best = best.max(left[i * (u + 1) + j] + closure[(u - i) * (u + 1) + (u - j)]);
        }
    }
    best
}

/// Four-bin instance with two-tap channels and 1 mW budgets.
pub fn small_instance(seed: u64, tap_var_db: [f64; 3]) -> (SystemConfig, FrequencyGrid, ChannelSet) {
    let cfg = SystemConfig {
        num_subchannels: 4,
        source_budget_p: 1e-3,
        relay_budget_q: 1e-3,
        ..SystemConfig::paper()
    };
    let grid = build_grid(&cfg).unwrap();
    let profile = ChannelProfile {
        taps_sd: 2,
        taps_sr: 2,
        taps_rd: 2,
        tap_var_db_sd: tap_var_db[0],
        tap_var_db_sr: tap_var_db[1],
        tap_var_db_rd: tap_var_db[2],
    };
    let ch = profile
        .draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(seed))
        .on_grid(&grid);
    (cfg, grid, ch)
}
