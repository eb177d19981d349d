//! Random candidate sets and trial campaigns over the identification algorithm.
//!
//! Every trial owns an independent ChaCha8 stream selected by its trial
//! index, so results do not depend on how trials are scheduled across threads.
//! Per-trial results are collected in trial order and reduced sequentially.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QsiError, Result};
use crate::qsi::{identify, CandidateSet, DecisionMode};
use crate::state::CoeffPair;

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3); stream id = trial index";

pub const DEFAULT_RHO_RANGE: (f64, f64) = (0.5, 2.0);
pub const DEFAULT_PHI_RANGE: (f64, f64) = (0.0, TAU);
pub const DEFAULT_TRIALS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub k: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub mode: DecisionMode,
    /// Half-open range `[lo, hi)` for the coefficient magnitudes.
    pub rho_range: (f64, f64),
    /// Half-open range `[lo, hi)` for the coefficient phases.
    pub phi_range: (f64, f64),
    /// Keep `(loops, correct)` for every trial in the output.
    pub keep_per_trial: bool,
}

impl CampaignConfig {
    pub fn new(k: usize, m: usize, trials: usize, seed: u64, mode: DecisionMode) -> Self {
        CampaignConfig {
            k,
            m,
            trials,
            seed,
            mode,
            rho_range: DEFAULT_RHO_RANGE,
            phi_range: DEFAULT_PHI_RANGE,
            keep_per_trial: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(QsiError::InvalidArgument(format!("k must be >= 2, got {}", self.k)));
        }
        if self.trials == 0 {
            return Err(QsiError::InvalidArgument("trials must be >= 1".into()));
        }
        let (r0, r1) = self.rho_range;
        if !(r0.is_finite() && r1.is_finite() && 0.0 < r0 && r0 < r1) {
            return Err(QsiError::InvalidArgument(format!("invalid rho range [{r0}, {r1})")));
        }
        let (p0, p1) = self.phi_range;
        if !(p0.is_finite() && p1.is_finite() && p0 < p1) {
            return Err(QsiError::InvalidArgument(format!("invalid phi range [{p0}, {p1})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub loops: usize,
    pub correct: bool,
    /// Tree-evaluated success probability (EXPECTED mode only).
    pub success_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    /// Fraction of completed trials that ended on the true state; in EXPECTED
    /// mode the mean success probability.
    pub success_rate: f64,
    pub mean_loops: f64,
    /// Population standard deviation of the loop count.
    pub std_loops: f64,
    pub trials: usize,
    pub completed: usize,
    /// Trials aborted by an algorithm error; excluded from every other field.
    pub failures: usize,
    pub per_trial: Option<Vec<TrialOutcome>>,
}

impl CampaignStats {
    /// Binomial standard error of `success_rate`.
    pub fn success_std_error(&self) -> f64 {
        let p = self.success_rate;
        (p * (1.0 - p) / self.completed.max(1) as f64).sqrt()
    }
}

/// Independent generator for trial `trial` of a campaign seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// SplitMix64 finalizer applied to `seed ⊕ tag`, used for derived seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `K` states with `z_ij = ρ_ij·e^{iφ_ij}`, all magnitudes and phases drawn
/// independently and uniformly from the given ranges.
pub fn random_candidate_set_in<R: Rng + ?Sized>(
    k: usize,
    rho_range: (f64, f64),
    phi_range: (f64, f64),
    rng: &mut R,
) -> CandidateSet {
    let mut draw = || {
        let rho = rng.gen_range(rho_range.0..rho_range.1);
        let phi = rng.gen_range(phi_range.0..phi_range.1);
        (rho, phi)
    };
    CandidateSet::new((0..k).map(|_| {
        let (r1, p1) = draw();
        let (r2, p2) = draw();
        CoeffPair::polar(r1, p1, r2, p2)
    }))
}

/// [`random_candidate_set_in`] with `ρ ∈ [1/2, 2)` and `φ ∈ [0, 2π)`.
pub fn random_candidate_set<R: Rng + ?Sized>(k: usize, rng: &mut R) -> CandidateSet {
    random_candidate_set_in(k, DEFAULT_RHO_RANGE, DEFAULT_PHI_RANGE, rng)
}

fn run_trial(cfg: &CampaignConfig, trial: u64) -> Result<TrialOutcome> {
    let mut rng = trial_rng(cfg.seed, trial);
    let set = random_candidate_set_in(cfg.k, cfg.rho_range, cfg.phi_range, &mut rng);
    let hidden = rng.gen_range(1..=cfg.k);
    let r = identify(&set, hidden, cfg.m, cfg.mode, rng.gen())?;
    Ok(TrialOutcome {
        loops: r.loops,
        correct: r.identified_index == hidden,
        success_probability: r.success_probability,
    })
}

/// Aggregates per-trial results in trial order.
pub fn summarize(cfg: &CampaignConfig, results: &[Result<TrialOutcome>]) -> CampaignStats {
    let done: Vec<TrialOutcome> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = results.len() - done.len();
    let n = done.len();
    let (success_rate, mean_loops, std_loops) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let nf = n as f64;
        let success: f64 = done
            .iter()
            .map(|t| t.success_probability.unwrap_or(if t.correct { 1.0 } else { 0.0 }))
            .sum();
        let mean = done.iter().map(|t| t.loops as f64).sum::<f64>() / nf;
        let var = done.iter().map(|t| (t.loops as f64 - mean).powi(2)).sum::<f64>() / nf;
        (success / nf, mean, var.sqrt())
    };
    CampaignStats {
        success_rate,
        mean_loops,
        std_loops,
        trials: results.len(),
        completed: n,
        failures,
        per_trial: cfg.keep_per_trial.then_some(done),
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignStats> {
    cfg.validate()?;
    let results: Vec<Result<TrialOutcome>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect();
    Ok(summarize(cfg, &results))
}

/// One campaign per `M`, each seeded with `derive_seed(cfg.seed, M)`.
pub fn sweep_m(cfg: &CampaignConfig, m_values: &[usize]) -> Result<Vec<(usize, CampaignStats)>> {
    m_values
        .iter()
        .map(|&m| {
            let c = CampaignConfig { m, seed: derive_seed(cfg.seed, m as u64), ..cfg.clone() };
            run_campaign(&c).map(|s| (m, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_magnitudes_in_range() {
        let mut rng = trial_rng(1, 0);
        for _ in 0..200 {
            let set = random_candidate_set(6, &mut rng);
            for e in &set.entries {
                for r in [e.coeffs.abs1(), e.coeffs.abs2()] {
                    assert!((0.5 - 1e-12..2.0 + 1e-12).contains(&r), "{r}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_set() {
        let a = random_candidate_set(5, &mut trial_rng(42, 3));
        let b = random_candidate_set(5, &mut trial_rng(42, 3));
        assert_eq!(a, b);
        let c = random_candidate_set(5, &mut trial_rng(42, 4));
        assert_ne!(a, c);
    }

    #[test]
    fn mean_magnitude_is_midpoint() {
        let mut rng = trial_rng(9, 0);
        let n = 100_000;
        let mean = (0..n / 2)
            .map(|_| {
                let s = random_candidate_set(1, &mut rng);
                s.entries[0].coeffs.abs1() + s.entries[0].coeffs.abs2()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.25).abs() < 0.01, "{mean}");
    }

    #[test]
    fn two_state_campaign_takes_one_loop() {
        let s = run_campaign(&CampaignConfig::new(2, 0, 500, 5, DecisionMode::Ideal)).unwrap();
        assert_eq!(s.mean_loops, 1.0);
        assert_eq!(s.std_loops, 0.0);
        assert_eq!(s.success_rate, 1.0);
        assert_eq!(s.failures, 0);
    }

    #[test]
    fn campaigns_are_deterministic() {
        let mut cfg = CampaignConfig::new(4, 2, 300, 11, DecisionMode::Sampled);
        cfg.keep_per_trial = true;
        let a = run_campaign(&cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_campaign(&cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.per_trial.as_ref().unwrap().len(), 300);
    }

    #[test]
    fn expected_mode_reports_mean_probability() {
        let s = run_campaign(&CampaignConfig::new(3, 0, 400, 2, DecisionMode::Expected)).unwrap();
        // no iterations: each hidden state is found with probability 2^-depth
        assert!(s.success_rate > 0.25 && s.success_rate < 0.42, "{}", s.success_rate);
    }

    #[test]
    fn sweep_uses_distinct_seeds() {
        let cfg = CampaignConfig::new(3, 0, 50, 1, DecisionMode::Sampled);
        let out = sweep_m(&cfg, &[0, 1, 2]).unwrap();
        assert_eq!(out.iter().map(|(m, _)| *m).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn loop_counts_respect_split_tree_bounds() {
        let mut means = Vec::new();
        for k in 2..=6 {
            let s = run_campaign(&CampaignConfig::new(k, 0, 2000, 40 + k as u64, DecisionMode::Ideal)).unwrap();
            // mean leaf depth lies between the balanced tree and the caterpillar tree
            let kf = k as f64;
            let caterpillar = ((1..k).sum::<usize>() + k - 1) as f64 / kf;
            let lg = kf.log2().floor();
            let balanced = lg + 2.0 * (kf - 2f64.powf(lg)) / kf;
            let tol = 4.0 * s.std_loops / (s.completed as f64).sqrt() + 1e-12;
            assert!(s.mean_loops <= caterpillar + tol, "K={k}: {}", s.mean_loops);
            assert!(s.mean_loops >= balanced - tol, "K={k}: {}", s.mean_loops);
            means.push(s.mean_loops);
        }
        let steps: Vec<f64> = means.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(run_campaign(&CampaignConfig::new(1, 0, 10, 0, DecisionMode::Ideal)).is_err());
        assert!(run_campaign(&CampaignConfig::new(3, 0, 0, 0, DecisionMode::Ideal)).is_err());
        let mut cfg = CampaignConfig::new(3, 0, 10, 0, DecisionMode::Ideal);
        cfg.rho_range = (2.0, 1.0);
        assert!(run_campaign(&cfg).is_err());
    }
}
