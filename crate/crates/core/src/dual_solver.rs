//! Lagrange dual of the joint source/relay allocation problem.
//!
//! The dual function `Υ(μ, λ) = Σ_k max L_k Δf + μP̄ + λQ̄` is convex and
//! evaluated bin by bin via [`solve_bin`]; its subgradient is the budget
//! slack of the per-bin maximizers. The dual is minimized with a central-cut
//! ellipsoid method in the normalized coordinates `x = (μP̄, λQ̄)` (bps/Hz),
//! and a feasible primal point is recovered from the per-bin solutions at
//! every iterate.

use rayon::prelude::*;

use crate::channel::{ChannelSet, FrequencyGrid, SystemConfig};
use crate::error::{Error, Result};
use crate::relay_model::{self, total_rate, Allocation, Diagnostics, RateReport};
use crate::subproblem::{self, chi, solve_bin, v_value, BinCoefficients, BinSolution};

/// Relative budget overshoot tolerated before recovery rescales.
pub const BUDGET_TOL: f64 = 1e-9;

/// Grid size of the amplitude re-solve during primal recovery.
const RESOLVE_GRID: usize = 96;

/// Grid size of the amplitude step of [`polish`].
const POLISH_GRID: usize = 256;

const POLISH_ROUNDS: usize = 50;

/// Up to this many bins every active subset seeds a polish run.
const SUBSET_SEARCH_MAX_BINS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualPoint {
    /// Price of source power, (bps/Hz)/W.
    pub mu: f64,
    /// Price of relay power, (bps/Hz)/W.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `(Υ_best − primal_best) / primal_best` falls below this...
    pub gap_tol: f64,
    /// ...and the complementary-slackness residuals, relative to `Υ_best`, below this.
    pub cs_tol: f64,
    pub max_iter: usize,
    /// Multiplies the radius of the initial ball.
    pub radius_scale: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            cs_tol: 1e-6,
            max_iter: 200,
            radius_scale: 1.5,
        }
    }
}

impl SolverOptions {
    /// Tight settings used when solutions are compared against each other.
    pub fn tight() -> Self {
        Self {
            gap_tol: 1e-9,
            cs_tol: 1e-9,
            max_iter: 400,
            ..Self::default()
        }
    }
}

/// Ellipsoid `{x : (x − c)ᵀ S⁻¹ (x − c) ≤ 1}` in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidState {
    pub center: [f64; 2],
    pub shape: [[f64; 2]; 2],
    pub iteration: usize,
}

impl EllipsoidState {
    pub fn ball(center: [f64; 2], radius: f64) -> Self {
        let r2 = radius * radius;
        Self {
            center,
            shape: [[r2, 0.0], [0.0, r2]],
            iteration: 0,
        }
    }

    /// Positive definiteness via the 2×2 LDLᵀ pivots.
    pub fn is_positive_definite(&self) -> bool {
        let d1 = self.shape[0][0];
        d1 > 0.0 && self.shape[1][1] - self.shape[0][1] * self.shape[1][0] / d1 > 0.0
    }

    /// Area relative to the unit disk: `sqrt(det S)`.
    pub fn volume(&self) -> f64 {
        let s = &self.shape;
        (s[0][0] * s[1][1] - s[0][1] * s[1][0]).max(0.0).sqrt()
    }

    /// Central cut keeping `{x : gᵀ(x − c) ≤ 0}`. Returns `false` when the cut
    /// direction has no extent in the ellipsoid.
    pub fn cut(&mut self, g: [f64; 2]) -> bool {
        let s = self.shape;
        let sg = [s[0][0] * g[0] + s[0][1] * g[1], s[1][0] * g[0] + s[1][1] * g[1]];
        let gsg = g[0] * sg[0] + g[1] * sg[1];
        if !(gsg > 0.0) || !gsg.is_finite() {
            return false;
        }
        let root = gsg.sqrt();
        let b = [sg[0] / root, sg[1] / root];
        // n = 2: c ← c − b/3, S ← 4/3 (S − 2/3 b bᵀ)
        self.center[0] -= b[0] / 3.0;
        self.center[1] -= b[1] / 3.0;
        let f = 4.0 / 3.0;
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = f * (s[i][j] - 2.0 / 3.0 * b[i] * b[j]);
            }
        }
        // keep it symmetric
        let off = 0.5 * (next[0][1] + next[1][0]);
        next[0][1] = off;
        next[1][0] = off;
        self.shape = next;
        self.iteration += 1;
        true
    }
}

/// Dual function value, subgradient and the per-bin maximizers behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    pub value: f64,
    /// `[P̄ − Σ P*Δf, Q̄ − Σ Ξ̄*²(gP* + N0)Δf]`, in W.
    pub subgradient: [f64; 2],
    pub bins: Vec<BinSolution>,
}

pub fn bin_coefficients(channels: &ChannelSet, config: &SystemConfig) -> Vec<BinCoefficients> {
    (0..channels.len())
        .map(|k| {
            BinCoefficients::from_channels(
                channels.h_sd[k],
                channels.h_sr[k],
                channels.h_rd[k],
                config.noise_psd_n0,
                config.bandwidth_w,
            )
        })
        .collect()
}

fn check_duals(duals: DualPoint) -> Result<()> {
    if !(duals.mu > 0.0 && duals.lambda >= 0.0) {
        return Err(Error::DegenerateDual {
            mu: duals.mu,
            lambda: duals.lambda,
        });
    }
    Ok(())
}

fn usage(coeffs: &[BinCoefficients], p: &[f64], xi: &[f64], delta_f: f64) -> [f64; 2] {
    let mut used = [0.0; 2];
    for ((k, &pk), &x) in coeffs.iter().zip(p).zip(xi) {
        used[0] += pk;
        used[1] += x * x * (k.g * pk + k.n0);
    }
    [used[0] * delta_f, used[1] * delta_f]
}

fn evaluate_joint(coeffs: &[BinCoefficients], delta_f: f64, budgets: [f64; 2], duals: DualPoint) -> Result<DualEvaluation> {
    check_duals(duals)?;
    let bins = coeffs
        .par_iter()
        .map(|k| solve_bin(k, duals.mu, duals.lambda))
        .collect::<Result<Vec<_>>>()?;
    let density: f64 = bins.iter().map(|b| b.value).sum();
    let p: Vec<f64> = bins.iter().map(|b| b.p_star).collect();
    let xi: Vec<f64> = bins.iter().map(|b| b.xi_star).collect();
    let used = usage(coeffs, &p, &xi, delta_f);
    Ok(DualEvaluation {
        value: density * delta_f + duals.mu * budgets[0] + duals.lambda * budgets[1],
        subgradient: [budgets[0] - used[0], budgets[1] - used[1]],
        bins,
    })
}

/// `Υ(μ, λ)` and its subgradient. Requires `μ > 0`, `λ ≥ 0`.
pub fn dual_value(duals: DualPoint, channels: &ChannelSet, grid: &FrequencyGrid, config: &SystemConfig) -> Result<DualEvaluation> {
    let coeffs = bin_coefficients(channels, config);
    evaluate_joint(
        &coeffs,
        grid.delta_f,
        [config.source_budget_p, config.relay_budget_q],
        duals,
    )
}

/// Feasible primal point built from per-bin solutions.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Candidate {
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
    /// Objective in bps/Hz.
    pub rate: f64,
    pub used: [f64; 2],
    pub adjusted: bool,
}

pub(crate) fn candidate_rate(coeffs: &[BinCoefficients], p: &[f64], xi: &[f64], delta_f: f64) -> f64 {
    // Σ (1/2W) log₂(1 + sP) Δf is already the normalized rate.
    coeffs.iter().zip(p).zip(xi).map(|((k, &pk), &x)| k.rate(pk, x)).sum::<f64>() * delta_f
}

fn make_candidate(coeffs: &[BinCoefficients], p: Vec<f64>, xi: Vec<f64>, delta_f: f64, adjusted: bool) -> Candidate {
    let used = usage(coeffs, &p, &xi, delta_f);
    let rate = candidate_rate(coeffs, &p, &xi, delta_f);
    Candidate { p, xi, rate, used, adjusted }
}

/// Best amplitude for a fixed source PSD at relay price `λ`:
/// `max_Ξ̄ (1/2W) log₂(1 + s(Ξ̄)P) − λΞ̄²(gP + N0)`, searched on a log grid
/// bracket followed by golden-section refinement. Ties go to the smaller amplitude.
pub(crate) fn best_amplitude_fixed_p(k: &BinCoefficients, p: f64, lambda: f64, xi_hi: f64, points: usize) -> f64 {
    if p <= 0.0 || k.b == 0.0 || xi_hi <= 0.0 {
        return 0.0;
    }
    let obj = |x: f64| k.rate(p, x) - lambda * x * x * (k.g * p + k.n0);
    let points = points.max(2);
    let lo = xi_hi * 1e-10;
    let ratio = (xi_hi / lo).powf(1.0 / (points - 1) as f64);
    let mut best = (0.0, obj(0.0));
    let mut best_i = None;
    let mut x = lo;
    let mut grid = vec![0.0; points];
    for (i, slot) in grid.iter_mut().enumerate() {
        *slot = x;
        let v = obj(x);
        if v > best.1 {
            best = (x, v);
            best_i = Some(i);
        }
        x *= ratio;
    }
    if let Some(i) = best_i {
        let left = if i == 0 { 0.0 } else { grid[i - 1] };
        let right = grid[(i + 1).min(points - 1)];
        let (x, v) = golden(&obj, left, right);
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}

pub(crate) fn golden<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Largest amplitude the relay budget allows in a single bin with no source power.
pub(crate) fn amplitude_ceiling(config: &SystemConfig, delta_f: f64) -> f64 {
    (config.relay_budget_q / (delta_f * config.noise_psd_n0)).sqrt()
}

/// Assembles a feasible allocation from the per-bin solutions at `duals`.
///
/// An overspent source budget scales `P` down uniformly, after which the
/// amplitudes are re-solved once at the same `λ` for the new `P`. An
/// overspent relay budget then scales the amplitudes down uniformly. The
/// better of the re-solved and not re-solved variants is kept.
pub(crate) fn recover_candidate(
    coeffs: &[BinCoefficients],
    duals: DualPoint,
    bins: &[BinSolution],
    budgets: [f64; 2],
    delta_f: f64,
    xi_ceiling: f64,
) -> Candidate {
    let mut p: Vec<f64> = bins.iter().map(|b| b.p_star).collect();
    let xi: Vec<f64> = bins.iter().map(|b| b.xi_star).collect();
    let used = usage(coeffs, &p, &xi, delta_f);
    if used[0] <= budgets[0] && used[1] <= budgets[1] {
        return make_candidate(coeffs, p, xi, delta_f, false);
    }
    if used[0] > budgets[0] {
        let t = budgets[0] / used[0];
        p.iter_mut().for_each(|v| *v *= t);
    }
    let fit_relay = |xi: Vec<f64>| -> Candidate {
        let used = usage(coeffs, &p, &xi, delta_f);
        let xi = if used[1] > budgets[1] {
            let t = (budgets[1] / used[1]).sqrt();
            xi.into_iter().map(|v| v * t).collect()
        } else {
            xi
        };
        make_candidate(coeffs, p.clone(), xi, delta_f, true)
    };
    // Rounding in the rescale can leave a last-ulp overshoot; the flag only
    // records overshoots beyond BUDGET_TOL.
    let flagged = used[0] > budgets[0] * (1.0 + BUDGET_TOL) || used[1] > budgets[1] * (1.0 + BUDGET_TOL);
    let kept = fit_relay(xi);
    let resolved: Vec<f64> = coeffs
        .iter()
        .zip(&p)
        .map(|(k, &pk)| best_amplitude_fixed_p(k, pk, duals.lambda, xi_ceiling, RESOLVE_GRID))
        .collect();
    let resolved = fit_relay(resolved);
    let mut out = if resolved.rate > kept.rate { resolved } else { kept };
    out.adjusted = flagged;
    out
}

pub(crate) fn evaluate_fixed_xi(
    coeffs: &[BinCoefficients],
    xi: &[f64],
    delta_f: f64,
    budgets: [f64; 2],
    duals: DualPoint,
) -> Result<DualEvaluation> {
    let mut density = 0.0;
    let mut used = [0.0; 2];
    let mut bins = Vec::with_capacity(coeffs.len());
    for (k, &x) in coeffs.iter().zip(xi) {
        let p = chi(x, k, duals.mu, duals.lambda)?;
        let value = v_value(x, k, duals.mu, duals.lambda)? - duals.lambda * k.n0 * x * x;
        density += value;
        used[0] += p;
        used[1] += x * x * (k.g * p + k.n0);
        bins.push(BinSolution {
            p_star: p,
            xi_star: x,
            value,
        });
    }
    Ok(DualEvaluation {
        value: density * delta_f + duals.mu * budgets[0] + duals.lambda * budgets[1],
        subgradient: [budgets[0] - used[0] * delta_f, budgets[1] - used[1] * delta_f],
        bins,
    })
}

/// Scales `P` down just enough to satisfy both budgets with `Ξ̄` frozen.
pub(crate) fn fit_source(coeffs: &[BinCoefficients], xi: &[f64], mut p: Vec<f64>, budgets: [f64; 2], delta_f: f64) -> Candidate {
    let spent: f64 = p.iter().sum::<f64>() * delta_f;
    let fixed: f64 = coeffs.iter().zip(xi).map(|(k, x)| x * x * k.n0).sum::<f64>() * delta_f;
    let driven: f64 = coeffs.iter().zip(xi).zip(&p).map(|((k, x), pk)| x * x * k.g * pk).sum::<f64>() * delta_f;
    let mut t: f64 = 1.0;
    let adjusted = spent > budgets[0] * (1.0 + BUDGET_TOL) || fixed + driven > budgets[1] * (1.0 + BUDGET_TOL);
    if spent > budgets[0] {
        t = t.min(budgets[0] / spent);
    }
    if fixed + driven > budgets[1] && driven > 0.0 {
        t = t.min(((budgets[1] - fixed) / driven).max(0.0));
    }
    if t < 1.0 {
        p.iter_mut().for_each(|v| *v *= t);
    }
    let rate = candidate_rate(coeffs, &p, xi, delta_f);
    let used = [
        p.iter().sum::<f64>() * delta_f,
        fixed + coeffs.iter().zip(xi).zip(&p).map(|((k, x), pk)| x * x * k.g * pk).sum::<f64>() * delta_f,
    ];
    Candidate {
        p,
        xi: xi.to_vec(),
        rate,
        used,
        adjusted,
    }
}

/// Best source PSD for fixed amplitudes: concave in `P`, so the dual of the
/// two-budget program is exact. Fails when the forwarded noise alone
/// exceeds the relay budget.
pub(crate) fn optimize_source(
    coeffs: &[BinCoefficients],
    xi: &[f64],
    budgets: [f64; 2],
    delta_f: f64,
    opts: &SolverOptions,
) -> Result<Candidate> {
    let noise: f64 = coeffs.iter().zip(xi).map(|(k, x)| x * x * k.n0).sum::<f64>() * delta_f;
    if noise > budgets[1] * (1.0 + BUDGET_TOL) {
        return Err(Error::InfeasibleRelayBudget {
            budget: budgets[1],
            noise,
        });
    }
    if budgets[0] <= 0.0 {
        return Ok(fit_source(coeffs, xi, vec![0.0; xi.len()], budgets, delta_f));
    }
    let driven = coeffs.iter().zip(xi).any(|(k, &x)| x > 0.0 && k.g > 0.0);
    if budgets[1] <= 0.0 || !driven {
        let gains: Vec<f64> = coeffs.iter().zip(xi).map(|(k, &x)| k.snr_gain(x)).collect();
        let p = water_fill(&gains, budgets[0], delta_f);
        return Ok(fit_source(coeffs, xi, p, budgets, delta_f));
    }
    let run = ellipsoid_search(
        budgets,
        opts,
        |d| evaluate_fixed_xi(coeffs, xi, delta_f, budgets, d),
        |_, ev| fit_source(coeffs, xi, ev.bins.iter().map(|b| b.p_star).collect(), budgets, delta_f),
    )?;
    Ok(run.candidate)
}

/// Best amplitudes for a fixed source PSD under the relay budget `q`:
/// bisection on the relay price, per-bin grid bracket plus golden-section.
/// Returns the best feasible point seen, `start` included.
pub(crate) fn optimize_relay(
    coeffs: &[BinCoefficients],
    p: &[f64],
    start: &[f64],
    q: f64,
    delta_f: f64,
    ceiling: f64,
    points: usize,
) -> Candidate {
    let relay_usage = |xi: &[f64]| -> f64 {
        coeffs.iter().zip(xi).zip(p).map(|((k, x), pk)| x * x * (k.g * pk + k.n0)).sum::<f64>() * delta_f
    };
    let mut best = make_candidate(coeffs, p.to_vec(), start.to_vec(), delta_f, false);
    if q <= 0.0 {
        return best;
    }
    let mut consider = |xi: Vec<f64>| -> f64 {
        let used = relay_usage(&xi);
        let xi = if used > q {
            let t = (q / used).sqrt();
            xi.into_iter().map(|v| v * t).collect()
        } else {
            xi
        };
        let c = make_candidate(coeffs, p.to_vec(), xi, delta_f, used > q);
        if c.rate > best.rate {
            best = c;
        }
        used
    };
    let solve_at = |lambda: f64| -> Vec<f64> {
        coeffs
            .par_iter()
            .zip(p)
            .map(|(k, &pk)| best_amplitude_fixed_p(k, pk, lambda, ceiling, points))
            .collect()
    };
    // price normalized by the budget: y = λQ̄ in bps/Hz
    let (mut lo, mut hi) = (1e-12f64.ln(), 1e6f64.ln());
    if consider(solve_at(lo.exp() / q)) > q {
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if consider(solve_at(mid.exp() / q)) > q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
    }
    best
}

/// Block-coordinate ascent from `start`: source PSD with amplitudes fixed,
/// then amplitudes with the PSD fixed, until a round gains nothing.
pub(crate) fn polish(
    coeffs: &[BinCoefficients],
    start: Candidate,
    budgets: [f64; 2],
    delta_f: f64,
    ceiling: f64,
    opts: &SolverOptions,
) -> Result<Candidate> {
    let mut best = start;
    for _ in 0..POLISH_ROUNDS {
        let before = best.rate;
        let src = optimize_source(coeffs, &best.xi, budgets, delta_f, opts)?;
        if src.rate > best.rate {
            best = src;
        }
        let rel = optimize_relay(coeffs, &best.p, &best.xi, budgets[1], delta_f, ceiling, POLISH_GRID);
        if rel.rate > best.rate {
            best = rel;
        }
        if best.rate <= before * (1.0 + 1e-12) {
            break;
        }
    }
    Ok(best)
}

pub(crate) struct EllipsoidRun {
    pub duals: DualPoint,
    pub best_dual: f64,
    pub candidate: Candidate,
    pub iterations: usize,
    pub converged: bool,
    /// Best recovered point per on/off pattern of the bins, best first.
    pub alternatives: Vec<Candidate>,
}

/// How many distinct activity patterns [`ellipsoid_search`] remembers.
const MAX_ALTERNATIVES: usize = 16;

fn activity(c: &Candidate) -> Vec<u8> {
    c.p.iter().zip(&c.xi).map(|(&p, &x)| (p > 0.0) as u8 | ((x > 0.0) as u8) << 1).collect()
}

fn remember(pool: &mut Vec<(Vec<u8>, Candidate)>, c: &Candidate) {
    let key = activity(c);
    if let Some(slot) = pool.iter_mut().find(|(k, _)| *k == key) {
        if c.rate > slot.1.rate {
            slot.1 = c.clone();
        }
        return;
    }
    if pool.len() < MAX_ALTERNATIVES {
        pool.push((key, c.clone()));
    } else if let Some(worst) = pool.iter_mut().min_by(|a, b| a.1.rate.total_cmp(&b.1.rate)) {
        if c.rate > worst.1.rate {
            *worst = (key, c.clone());
        }
    }
}

impl EllipsoidRun {
    pub fn gap_rel(&self) -> f64 {
        (self.best_dual - self.candidate.rate).max(0.0) / self.candidate.rate.max(f64::MIN_POSITIVE)
    }
}

/// Complementary-slackness residuals `x_i (1 − used_i / budget_i)`, relative to `scale`.
pub(crate) fn cs_residuals(duals: DualPoint, used: [f64; 2], budgets: [f64; 2], scale: f64) -> [f64; 2] {
    let one = |price: f64, u: f64, b: f64| {
        if b <= 0.0 {
            0.0
        } else {
            (price * (b - u)).abs() / scale.max(f64::MIN_POSITIVE)
        }
    };
    [one(duals.mu, used[0], budgets[0]), one(duals.lambda, used[1], budgets[1])]
}

/// Generic ellipsoid loop over the normalized duals `x = (μP̄, λQ̄)`.
pub(crate) fn ellipsoid_search<E, R>(budgets: [f64; 2], opts: &SolverOptions, evaluate: E, recover: R) -> Result<EllipsoidRun>
where
    E: Fn(DualPoint) -> Result<DualEvaluation>,
    R: Fn(DualPoint, &DualEvaluation) -> Candidate,
{
    let to_duals = |x: [f64; 2]| DualPoint {
        mu: x[0] / budgets[0],
        lambda: x[1] / budgets[1],
    };
    let mut best_dual = f64::INFINITY;
    let mut best: Option<(DualPoint, Candidate)> = None;
    let pool = std::cell::RefCell::new(Vec::new());
    let visit = |x: [f64; 2], best_dual: &mut f64, best: &mut Option<(DualPoint, Candidate)>| -> Result<DualEvaluation> {
        let d = to_duals(x);
        let ev = evaluate(d)?;
        *best_dual = best_dual.min(ev.value);
        let cand = recover(d, &ev);
        remember(&mut pool.borrow_mut(), &cand);
        if best.as_ref().is_none_or(|(_, c)| cand.rate > c.rate) {
            *best = Some((d, cand));
        }
        Ok(ev)
    };

    // Υ(x) ≥ x₁ + x₂ everywhere (all-zero primal), so every minimizer lies in
    // the triangle x ≥ 0, x₁ + x₂ ≤ Υ(x_ref) for any reference point.
    let mut bound = f64::INFINITY;
    for t in [0.1, 0.3, 1.0, 3.0] {
        let ev = visit([t, t], &mut best_dual, &mut best)?;
        bound = bound.min(ev.value);
    }
    let radius = opts.radius_scale * bound / std::f64::consts::SQRT_2;
    let mut ell = EllipsoidState::ball([bound / 2.0, bound / 2.0], radius);
    let volume0 = ell.volume();

    let done = |best_dual: f64, best: &Option<(DualPoint, Candidate)>| -> bool {
        let Some((d, c)) = best else { return false };
        let gap = (best_dual - c.rate).max(0.0) / c.rate.max(f64::MIN_POSITIVE);
        let cs = cs_residuals(*d, c.used, budgets, best_dual);
        gap <= opts.gap_tol && cs[0] <= opts.cs_tol && cs[1] <= opts.cs_tol
    };

    let mut converged = done(best_dual, &best);
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let c = ell.center;
        let g = if c[0] <= 0.0 {
            [-1.0, 0.0]
        } else if c[1] <= 0.0 {
            [0.0, -1.0]
        } else {
            let ev = visit(c, &mut best_dual, &mut best)?;
            // ∂Υ/∂x = slack / budget
            let g = [ev.subgradient[0] / budgets[0], ev.subgradient[1] / budgets[1]];
            if g[0] == 0.0 && g[1] == 0.0 {
                converged = done(best_dual, &best);
                break;
            }
            g
        };
        converged = done(best_dual, &best);
        if converged || !ell.cut(g) || ell.volume() < 1e-24 * volume0 {
            break;
        }
    }
    let (duals, candidate) = best.expect("at least one dual evaluation");
    let mut alternatives: Vec<Candidate> = pool.into_inner().into_iter().map(|(_, c)| c).collect();
    alternatives.sort_by(|a, b| b.rate.total_cmp(&a.rate));
    Ok(EllipsoidRun {
        duals,
        best_dual,
        candidate,
        iterations,
        converged,
        alternatives,
    })
}

/// Optimal joint allocation with its duals and rate report.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub allocation: Allocation,
    pub duals: DualPoint,
    pub report: RateReport,
}

/// Water-filling on the direct link alone (relay silent): bisection on the
/// water level so that `Σ P Δf = P̄`.
pub(crate) fn water_fill(gains: &[f64], budget: f64, delta_f: f64) -> Vec<f64> {
    let positive: Vec<f64> = gains.iter().copied().filter(|&s| s > 0.0).collect();
    if budget <= 0.0 || positive.is_empty() {
        return vec![0.0; gains.len()];
    }
    let fill = |level: f64| -> Vec<f64> {
        gains
            .iter()
            .map(|&s| if s > 0.0 { (level - 1.0 / s).max(0.0) } else { 0.0 })
            .collect()
    };
    let spent = |level: f64| fill(level).iter().sum::<f64>() * delta_f;
    let mut lo = 0.0;
    let mut hi = positive.iter().map(|s| 1.0 / s).fold(0.0, f64::max) + budget / (delta_f * positive.len() as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spent(mid) > budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    fill(lo)
}

fn finish(
    p: Vec<f64>,
    xi: Vec<f64>,
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
) -> Result<(Allocation, RateReport)> {
    let alpha_hat = relay_model::loopback_response(config.loopback_alpha, config.loopback_tau, grid)?.alpha_hat;
    let allocation = Allocation::new(p, xi, channels, &alpha_hat)?;
    let report = total_rate(&allocation, channels, grid, config);
    Ok((allocation, report))
}

/// Maximizes the achievable rate over source PSD and relay amplitude.
///
/// Non-convergence within `max_iter` is reported through
/// `report.diagnostics.converged`, not as an error.
pub fn ellipsoid_minimize(
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
    opts: &SolverOptions,
) -> Result<JointSolution> {
    config.validate()?;
    if channels.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: channels.len(),
        });
    }
    let n = grid.len();
    let coeffs = bin_coefficients(channels, config);
    let budgets = [config.source_budget_p, config.relay_budget_q];

    if budgets[0] <= 0.0 {
        let (allocation, mut report) = finish(vec![0.0; n], vec![0.0; n], channels, grid, config)?;
        report.diagnostics.converged = true;
        return Ok(JointSolution {
            allocation,
            duals: DualPoint { mu: 0.0, lambda: 0.0 },
            report,
        });
    }
    if budgets[1] <= 0.0 {
        let gains: Vec<f64> = coeffs.iter().map(|k| k.snr_gain(0.0)).collect();
        let p = water_fill(&gains, budgets[0], grid.delta_f);
        let (allocation, mut report) = finish(p, vec![0.0; n], channels, grid, config)?;
        report.diagnostics.converged = true;
        report.diagnostics.note = Some("relay budget is zero; direct-link water-filling".into());
        return Ok(JointSolution {
            allocation,
            duals: DualPoint { mu: 0.0, lambda: 0.0 },
            report,
        });
    }

    let ceiling = amplitude_ceiling(config, grid.delta_f);
    let run = ellipsoid_search(
        budgets,
        opts,
        |d| evaluate_joint(&coeffs, grid.delta_f, budgets, d),
        |d, ev| recover_candidate(&coeffs, d, &ev.bins, budgets, grid.delta_f, ceiling),
    )?;
    let mut run = run;
    if !run.converged {
        // duality gap left open (few bins, nonconvex bins): improve the primal directly
        // from every activity pattern seen, and from equal power
        let p_flat = budgets[0] / config.bandwidth_w;
        let xi_flat: Vec<f64> = coeffs
            .iter()
            .map(|k| (budgets[1] / (config.bandwidth_w * (k.g * p_flat + k.n0))).sqrt())
            .collect();
        let mut starts = std::mem::take(&mut run.alternatives);
        starts.push(make_candidate(&coeffs, vec![p_flat; n], xi_flat, grid.delta_f, false));
        if n <= SUBSET_SEARCH_MAX_BINS {
            // few bins: the optimum often concentrates on a subset no dual iterate activates
            for mask in 1u32..(1 << n) {
                let m = mask.count_ones() as f64;
                let on = |k: usize| mask >> k & 1 == 1;
                let p: Vec<f64> = (0..n).map(|k| if on(k) { budgets[0] / (m * grid.delta_f) } else { 0.0 }).collect();
                let xi: Vec<f64> = (0..n)
                    .map(|k| {
                        if on(k) {
                            (budgets[1] / (m * grid.delta_f * (coeffs[k].g * p[k] + coeffs[k].n0))).sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                starts.push(make_candidate(&coeffs, p, xi, grid.delta_f, false));
            }
        }
        for start in starts {
            let c = polish(&coeffs, start, budgets, grid.delta_f, ceiling, opts)?;
            if c.rate > run.candidate.rate {
                run.candidate = c;
            }
        }
        run.converged = run.gap_rel() <= opts.gap_tol;
    }
    let gap = run.gap_rel();
    let (allocation, mut report) = finish(run.candidate.p.clone(), run.candidate.xi.clone(), channels, grid, config)?;
    report.duality_gap_rel = gap;
    report.iterations = run.iterations;
    report.diagnostics = Diagnostics {
        converged: run.converged,
        recovery_adjusted: run.candidate.adjusted,
        note: (!run.converged).then(|| format!("gap {gap:.3e} after {} iterations", run.iterations)),
        ..report.diagnostics
    };
    Ok(JointSolution {
        allocation,
        duals: run.duals,
        report,
    })
}

/// Public form of the recovery step: per-bin solutions at `duals` to a
/// feasible allocation. The flag tells whether rescaling was needed.
pub fn recover_primal(
    duals: DualPoint,
    bins: &[BinSolution],
    channels: &ChannelSet,
    grid: &FrequencyGrid,
    config: &SystemConfig,
) -> Result<(Allocation, bool)> {
    let coeffs = bin_coefficients(channels, config);
    let c = recover_candidate(
        &coeffs,
        duals,
        bins,
        [config.source_budget_p, config.relay_budget_q],
        grid.delta_f,
        amplitude_ceiling(config, grid.delta_f),
    );
    let alpha_hat = relay_model::loopback_response(config.loopback_alpha, config.loopback_tau, grid)?.alpha_hat;
    Ok((Allocation::new(c.p, c.xi, channels, &alpha_hat)?, c.adjusted))
}

/// Complementary-slackness residuals of a solution relative to its rate.
pub fn complementary_slackness(solution: &JointSolution, config: &SystemConfig) -> [f64; 2] {
    let budgets = [config.source_budget_p, config.relay_budget_q];
    let r = &solution.report;
    cs_residuals(
        solution.duals,
        [r.source_power_used, r.relay_power_used],
        budgets,
        r.rate_bps_hz,
    )
}

// Re-exported for callers that only need the bin math.
pub use subproblem::EPS_DUAL;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_grid, ChannelProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(n: usize) -> SystemConfig {
        SystemConfig {
            num_subchannels: n,
            source_budget_p: 1e-3,
            relay_budget_q: 1e-3,
            ..SystemConfig::paper()
        }
    }

    fn instance(n: usize, seed: u64) -> (SystemConfig, FrequencyGrid, ChannelSet) {
        let cfg = small_config(n);
        let grid = build_grid(&cfg).unwrap();
        let taps = ChannelProfile::default().draw(1.0 / cfg.bandwidth_w, &mut ChaCha8Rng::seed_from_u64(seed));
        let ch = taps.on_grid(&grid);
        (cfg, grid, ch)
    }

    #[test]
    fn ellipsoid_cut_shrinks_and_stays_pd() {
        let mut e = EllipsoidState::ball([1.0, 1.0], 2.0);
        let v0 = e.volume();
        for i in 0..50 {
            let g = [(i as f64).cos(), (i as f64 * 0.7).sin()];
            assert!(e.cut(g));
            assert!(e.is_positive_definite());
        }
        assert!(e.volume() < v0 * 0.78f64.powi(50));
    }

    #[test]
    fn huge_duals_switch_everything_off() {
        let (cfg, grid, ch) = instance(16, 1);
        let d = DualPoint { mu: 1e30, lambda: 1e30 };
        let ev = dual_value(d, &ch, &grid, &cfg).unwrap();
        assert!(ev.bins.iter().all(|b| *b == BinSolution::ZERO));
        assert_eq!(ev.subgradient, [cfg.source_budget_p, cfg.relay_budget_q]);
        assert!((ev.value - (1e30 * 1e-3 * 2.0)).abs() / ev.value < 1e-15);
    }

    #[test]
    fn dual_rejects_nonpositive_mu() {
        let (cfg, grid, ch) = instance(4, 1);
        let e = dual_value(DualPoint { mu: 0.0, lambda: 1.0 }, &ch, &grid, &cfg);
        assert!(matches!(e, Err(Error::DegenerateDual { .. })));
    }

    #[test]
    fn weak_duality_against_equal_power() {
        let (cfg, grid, ch) = instance(32, 2);
        let n = grid.len();
        let p = vec![cfg.source_budget_p / cfg.bandwidth_w; n];
        let xi: Vec<f64> = ch
            .h_sr
            .iter()
            .zip(&p)
            .map(|(h, &pk)| (cfg.relay_budget_q / (cfg.bandwidth_w * (h.norm_sqr() * pk + cfg.noise_psd_n0))).sqrt())
            .collect();
        let coeffs = bin_coefficients(&ch, &cfg);
        let primal = candidate_rate(&coeffs, &p, &xi, grid.delta_f);
        for (mu, lambda) in [(100.0, 100.0), (1e3, 10.0), (10.0, 1e3), (1.0, 1.0)] {
            let ev = dual_value(DualPoint { mu, lambda }, &ch, &grid, &cfg).unwrap();
            assert!(ev.value >= primal);
        }
    }

    #[test]
    fn zero_source_budget() {
        let (mut cfg, grid, ch) = instance(8, 3);
        cfg.source_budget_p = 0.0;
        let s = ellipsoid_minimize(&ch, &grid, &cfg, &SolverOptions::default()).unwrap();
        assert_eq!(s.report.rate_bps_hz, 0.0);
        assert!(s.allocation.p.iter().chain(&s.allocation.xi_bar).all(|&v| v == 0.0));
    }

    #[test]
    fn converges_and_respects_budgets() {
        let (cfg, grid, ch) = instance(64, 4);
        let s = ellipsoid_minimize(&ch, &grid, &cfg, &SolverOptions::default()).unwrap();
        let r = &s.report;
        assert!(r.diagnostics.converged, "{:?}", r.diagnostics);
        assert!(r.duality_gap_rel <= 1e-4);
        assert!(r.source_power_used <= cfg.source_budget_p * (1.0 + 1e-9));
        assert!(r.relay_power_used <= cfg.relay_budget_q * (1.0 + 1e-9));
        let cs = complementary_slackness(&s, &cfg);
        assert!(cs[0] <= 1e-6 && cs[1] <= 1e-6, "{cs:?}");
    }

    #[test]
    fn feasible_subgradient_needs_no_adjustment() {
        let (cfg, grid, ch) = instance(16, 5);
        let d = DualPoint { mu: 5e3, lambda: 5e3 };
        let ev = dual_value(d, &ch, &grid, &cfg).unwrap();
        assert!(ev.subgradient.iter().all(|&g| g >= 0.0));
        let (alloc, adjusted) = recover_primal(d, &ev.bins, &ch, &grid, &cfg).unwrap();
        assert!(!adjusted);
        assert_eq!(alloc.p, ev.bins.iter().map(|b| b.p_star).collect::<Vec<_>>());
    }

    #[test]
    fn adjusted_recovery_is_feasible() {
        let (cfg, grid, ch) = instance(16, 6);
        let d = DualPoint { mu: 1.0, lambda: 1.0 };
        let ev = dual_value(d, &ch, &grid, &cfg).unwrap();
        assert!(ev.subgradient.iter().any(|&g| g < 0.0));
        let (alloc, adjusted) = recover_primal(d, &ev.bins, &ch, &grid, &cfg).unwrap();
        assert!(adjusted);
        let rep = total_rate(&alloc, &ch, &grid, &cfg);
        assert!(rep.source_power_used <= cfg.source_budget_p * (1.0 + 1e-9));
        assert!(rep.relay_power_used <= cfg.relay_budget_q * (1.0 + 1e-9));
    }
}
