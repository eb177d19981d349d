//! Finite-ensemble depletion under repeated post-selection.
//!
//! Each protocol step groups the current survivors four at a time; every
//! group independently yields one transformed system with the single-step
//! survival probability of the current trajectory point. Leftover systems
//! (fewer than four) are discarded.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{QsiError, Result};
use crate::protocol::iterate_map;
use crate::state::CoeffPair;

/// Largest `M` for which [`estimate_resources`] propagates the exact
/// distribution; beyond it the Poisson approximation is used.
pub const EXACT_SIZE_MAX_ITERS: usize = 3;

/// Relative pmf magnitude below which binomial tails are truncated.
const TAIL_CUTOFF: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Groups of four formed from the previous survivors.
    pub attempts: u64,
    pub survivors: u64,
    /// Systems left over after grouping (`previous mod 4`).
    pub discarded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub initial_size: u64,
    pub per_iteration: Vec<IterationRecord>,
    /// Survival probability used at each step.
    pub step_survival_probs: Vec<f64>,
    pub final_survivors: u64,
    /// `initial_size < 4^M`: too small to complete even without losses.
    pub undersized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMethod {
    ExactBinomial,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub m: usize,
    /// Single-step survival probability at each trajectory point.
    pub per_step_probs: Vec<f64>,
    pub cumulative_survival: f64,
    /// Expected fraction of the initial ensemble that survives: `Π pₙ/4`.
    pub expected_yield_fraction: f64,
    /// Smallest ensemble with at least one final survivor at probability `confidence`.
    pub required_size_for_confidence: u64,
    pub confidence: f64,
    pub method: SizeMethod,
}

fn four_pow(m: usize) -> Result<u64> {
    4u64.checked_pow(m as u32)
        .ok_or_else(|| QsiError::InvalidArgument(format!("4^{m} overflows the ensemble size")))
}

/// Draws one finite-ensemble run of `m` protocol steps starting from `initial_size` copies.
pub fn simulate_ensemble<R: Rng + ?Sized>(
    c: CoeffPair,
    m: usize,
    initial_size: u64,
    rng: &mut R,
) -> Result<EnsembleRun> {
    let traj = iterate_map(c, m)?;
    let undersized = four_pow(m).map_or(true, |min| initial_size < min);
    let mut current = initial_size;
    let mut per_iteration = Vec::with_capacity(m);
    for &p in &traj.per_step_survival {
        let attempts = current / 4;
        let discarded = current % 4;
        let survivors = Binomial::new(attempts, p)
            .map_err(|e| QsiError::InvalidArgument(format!("binomial({attempts}, {p}): {e}")))?
            .sample(rng);
        per_iteration.push(IterationRecord { attempts, survivors, discarded });
        current = survivors;
    }
    Ok(EnsembleRun {
        initial_size,
        per_iteration,
        step_survival_probs: traj.per_step_survival,
        final_survivors: current,
        undersized,
    })
}

/// Probability mass function on a contiguous support `offset..offset + pmf.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePmf {
    pub offset: u64,
    pub pmf: Vec<f64>,
}

impl SparsePmf {
    pub fn point(x: u64) -> Self {
        SparsePmf { offset: x, pmf: vec![1.0] }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.pmf.iter().enumerate().map(move |(i, &w)| (self.offset + i as u64, w))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, w)| x as f64 * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.iter().map(|(x, w)| (x as f64 - mu).powi(2) * w).sum()
    }

    pub fn prob_zero(&self) -> f64 {
        if self.offset == 0 {
            self.pmf[0]
        } else {
            0.0
        }
    }
}

/// `Binomial(n, p)` restricted to the window where the pmf exceeds
/// `TAIL_CUTOFF` times its peak, renormalized on that window.
pub fn binomial_window(n: u64, p: f64) -> SparsePmf {
    if n == 0 || p <= 0.0 {
        return SparsePmf::point(0);
    }
    if p >= 1.0 {
        return SparsePmf::point(n);
    }
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as u64;
    let odds = p / (1.0 - p);
    let mut up = vec![1.0];
    let mut k = mode;
    while k < n {
        let next = up[up.len() - 1] * (n - k) as f64 / (k + 1) as f64 * odds;
        if next < TAIL_CUTOFF {
            break;
        }
        up.push(next);
        k += 1;
    }
    let mut down = Vec::new();
    let (mut k, mut last) = (mode, 1.0);
    while k > 0 {
        last *= k as f64 / (n - k + 1) as f64 / odds;
        if last < TAIL_CUTOFF {
            break;
        }
        down.push(last);
        k -= 1;
    }
    let offset = mode - down.len() as u64;
    let mut pmf: Vec<f64> = down.into_iter().rev().chain(up).collect();
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|w| *w /= total);
    SparsePmf { offset, pmf }
}

/// Distribution of the survivor count after one more step with survival `p`.
fn next_stage(dist: &SparsePmf, p: f64) -> SparsePmf {
    let hi = dist.offset + dist.pmf.len() as u64 - 1;
    let (a_lo, a_hi) = (dist.offset / 4, hi / 4);
    // group the current mass by number of attempts
    let mut by_attempts = vec![0.0; (a_hi - a_lo + 1) as usize];
    for (x, w) in dist.iter() {
        by_attempts[(x / 4 - a_lo) as usize] += w;
    }
    let windows: Vec<SparsePmf> = (a_lo..=a_hi).map(|a| binomial_window(a, p)).collect();
    let lo = windows.iter().map(|w| w.offset).min().unwrap_or(0);
    let top = windows
        .iter()
        .map(|w| w.offset + w.pmf.len() as u64)
        .max()
        .unwrap_or(1);
    let mut pmf = vec![0.0; (top - lo) as usize];
    for (weight, win) in by_attempts.iter().zip(&windows) {
        if *weight == 0.0 {
            continue;
        }
        for (x, w) in win.iter() {
            pmf[(x - lo) as usize] += weight * w;
        }
    }
    SparsePmf { offset: lo, pmf }
}

/// Exact (tail-truncated) distribution of the final survivor count under the
/// grouped-binomial model.
pub fn survivor_distribution(initial_size: u64, step_probs: &[f64]) -> SparsePmf {
    step_probs
        .iter()
        .fold(SparsePmf::point(initial_size), |d, &p| next_stage(&d, p))
}

/// Probability of at least one final survivor from `n` initial copies.
pub fn prob_any_survivor(n: u64, step_probs: &[f64]) -> f64 {
    match step_probs.split_last() {
        None => {
            if n > 0 {
                1.0
            } else {
                0.0
            }
        }
        Some((&last, head)) => {
            // the last stage only needs P(no success) = (1 − p)^attempts
            let d = survivor_distribution(n, head);
            let none: f64 = d.iter().map(|(x, w)| w * (1.0 - last).powf((x / 4) as f64)).sum();
            (1.0 - none).clamp(0.0, 1.0)
        }
    }
}

/// Survival probabilities and ensemble requirements for `m` iterations from `c`.
pub fn estimate_resources(c: CoeffPair, m: usize, confidence: f64) -> Result<ResourceEstimate> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(QsiError::InvalidArgument(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let traj = iterate_map(c, m)?;
    let probs = traj.per_step_survival.clone();
    let expected_yield_fraction: f64 = probs.iter().map(|p| p / 4.0).product();
    let min_size = four_pow(m)?;
    let method = if m <= EXACT_SIZE_MAX_ITERS { SizeMethod::ExactBinomial } else { SizeMethod::Poisson };

    let required = if m == 0 {
        1
    } else if probs.iter().any(|&p| p <= 0.0) {
        return Err(QsiError::ZeroProbability { prob: 0.0 });
    } else {
        match method {
            SizeMethod::Poisson => {
                let n = (-(1.0 - confidence).ln() / expected_yield_fraction).ceil();
                if !n.is_finite() || n >= u64::MAX as f64 {
                    return Err(QsiError::InvalidArgument("required ensemble size overflows".into()));
                }
                (n as u64).max(min_size)
            }
            SizeMethod::ExactBinomial => smallest_size(min_size, confidence, &probs)?,
        }
    };

    Ok(ResourceEstimate {
        m,
        per_step_probs: probs,
        cumulative_survival: traj.cumulative_survival,
        expected_yield_fraction,
        required_size_for_confidence: required,
        confidence,
        method,
    })
}

/// Smallest `n ≥ lo` with `prob_any_survivor(n) ≥ confidence`; the success
/// probability is non-decreasing in `n`.
fn smallest_size(lo: u64, confidence: f64, probs: &[f64]) -> Result<u64> {
    let ok = |n: u64| prob_any_survivor(n, probs) >= confidence;
    if ok(lo) {
        return Ok(lo);
    }
    let mut bad = lo;
    let mut good = lo.saturating_mul(2);
    while !ok(good) {
        if good == u64::MAX {
            return Err(QsiError::InvalidArgument("required ensemble size overflows".into()));
        }
        bad = good;
        good = good.saturating_mul(2);
    }
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if ok(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}
