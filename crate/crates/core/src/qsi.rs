//! Identification of an unknown state drawn from a known finite candidate set.
//!
//! Each loop splits the current candidates into `S+` (`|z1| > |z2|`) and `S−`
//! (`|z1| < |z2|`). When one side is empty a rotation `W(θ)` is chosen from
//! the candidates' equalizing angles so that both sides are populated; if two
//! of those angles coincide, every state is first put through the `u2` swap.
//! The unknown state then goes through `M` protocol iterations and a final
//! measurement decides which side survives. Every operation applied to the
//! candidates is applied identically to the unknown state.

use std::f64::consts::FRAC_PI_4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QsiError, Result};
use crate::protocol::{classify, conditional_p_plus, AttractorLabel};
use crate::state::{CoeffPair, Complex, EPS_ZERO};

/// Two equalizing angles closer than this are treated as coincident.
pub const EPS_THETA: f64 = 1e-9;

/// A candidate state tagged with its 1-based position in the original set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub coeffs: CoeffPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    WRotation { theta: f64 },
    U2Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub kind: OpKind,
    pub loop_number: usize,
}

/// The candidate set together with every operation applied to it so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
    pub applied_ops: Vec<AppliedOp>,
}

impl CandidateSet {
    /// Numbers the states `1..=K` in the given order.
    pub fn new(states: impl IntoIterator<Item = CoeffPair>) -> Self {
        let entries = states
            .into_iter()
            .enumerate()
            .map(|(i, coeffs)| Candidate { index: i + 1, coeffs })
            .collect();
        CandidateSet { entries, applied_ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Candidate> {
        self.entries.iter().find(|c| c.index == index)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.get(index).is_some()
    }

    fn apply(&mut self, kind: OpKind, loop_number: usize, f: impl Fn(CoeffPair) -> CoeffPair) {
        for e in &mut self.entries {
            e.coeffs = f(e.coeffs);
        }
        self.applied_ops.push(AppliedOp { kind, loop_number });
    }

    fn restricted_to(&self, side: &[Candidate]) -> CandidateSet {
        CandidateSet {
            entries: side.to_vec(),
            applied_ops: self.applied_ops.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub s_plus: Vec<Candidate>,
    pub s_minus: Vec<Candidate>,
    pub boundary: Vec<Candidate>,
}

impl Partition {
    /// Both sides populated and nobody left on the boundary.
    pub fn is_split(&self) -> bool {
        self.boundary.is_empty() && !self.s_plus.is_empty() && !self.s_minus.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// The branch containing the unknown state is always taken.
    Ideal,
    /// The branch is drawn from the final measurement statistics.
    Sampled,
    /// The full decision tree is evaluated; yields the success probability.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub theta_applied: Option<f64>,
    pub u2_applied: bool,
    pub m_used: usize,
    /// `(p_plus, p_minus)` for the unknown state after `m_used` iterations.
    pub branch_probs: (f64, f64),
    pub branch_taken: Branch,
    /// Candidate-set size before and after the loop.
    pub set_sizes: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub identified_index: usize,
    pub loops: usize,
    pub transcript: Vec<LoopRecord>,
    /// Coefficients of the surviving candidate after all applied operations.
    pub final_coeffs: CoeffPair,
    pub applied_ops: Vec<AppliedOp>,
    /// Product of the probabilities of the branches actually taken.
    pub path_probability: f64,
    /// Probability that the protocol ends on the true state (EXPECTED mode only).
    pub success_probability: Option<f64>,
}

pub fn partition(set: &CandidateSet) -> Partition {
    let mut p = Partition::default();
    for e in &set.entries {
        match classify(e.coeffs) {
            AttractorLabel::Plus => p.s_plus.push(*e),
            AttractorLabel::Minus => p.s_minus.push(*e),
            AttractorLabel::Boundary => p.boundary.push(*e),
        }
    }
    p
}

/// Coefficients after `W(θ)`: `(cosθ·z1 + sinθ·z2, −sinθ·z1 + cosθ·z2)`.
pub fn rotate_coeffs(theta: f64, c: CoeffPair) -> CoeffPair {
    let (s, co) = theta.sin_cos();
    CoeffPair::new(c.z1 * co + c.z2 * s, c.z2 * co - c.z1 * s)
}

/// Coefficients after the `|0⟩ ↔ |1⟩` swap: `(1/z1, z2/z1)`.
pub fn u2_coeffs(c: CoeffPair) -> Result<CoeffPair> {
    if c.abs1() <= EPS_ZERO {
        return Err(QsiError::ZeroCoefficient { step: 0, z1_abs: c.abs1(), z2_abs: c.abs2() });
    }
    Ok(CoeffPair::new(c.z1.inv(), c.z2 / c.z1))
}

/// Angle `θ ∈ (−π/4, π/4]` for which `W(θ)` equalizes `|z1|` and `|z2|`.
///
/// Solves `tan 2θ = (|z2|² − |z1|²) / (2·Re(z1* z2))`.
pub fn theta_equalize(c: CoeffPair) -> Result<f64> {
    let num = c.z2.norm_sqr() - c.z1.norm_sqr();
    let den = 2.0 * (c.z1.conj() * c.z2).re;
    let scale = (c.z1.norm_sqr() + c.z2.norm_sqr()).max(1.0);
    if num.abs() <= EPS_ZERO * scale && den.abs() <= EPS_ZERO * scale {
        return Err(QsiError::Indeterminate);
    }
    let mut theta = 0.5 * num.atan2(den);
    // shifting by π/2 flips the sign of |z1'|² − |z2'|², so zeros repeat
    if theta > FRAC_PI_4 {
        theta -= 2.0 * FRAC_PI_4;
    } else if theta <= -FRAC_PI_4 {
        theta += 2.0 * FRAC_PI_4;
    }
    Ok(theta)
}

/// Splitting angle from the equalizing angles of the candidates on the
/// populated side, following the optimized selection table.
///
/// With `θ1 < … < θD` sorted and `d = n⁺ − n⁻` (counts of positive and
/// negative angles), the rotation is placed between two consecutive angles so
/// that about half of the candidates change side.
pub fn choose_theta_from_angles(angles: &[f64]) -> Result<f64> {
    let d_len = angles.len();
    if d_len == 0 {
        return Err(QsiError::InvalidArgument("no angles to choose from".into()));
    }
    let mut order: Vec<usize> = (0..d_len).collect();
    order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
    for w in order.windows(2) {
        if angles[w[1]] - angles[w[0]] <= EPS_THETA {
            let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(QsiError::DegenerateThetas { first, second });
        }
    }
    let sorted: Vec<f64> = order.iter().map(|&i| angles[i]).collect();
    // 1-based access, matching the table's indexing
    let th = |k: usize| sorted[k - 1];
    let mid = |k: usize| 0.5 * (th(k) + th(k + 1));

    let n_plus = sorted.iter().filter(|&&t| t > 0.0).count() as i64;
    let n_minus = sorted.iter().filter(|&&t| t < 0.0).count() as i64;
    let d = n_plus - n_minus;
    let big_d = d_len as i64;

    let theta = if (-1..=1).contains(&d) {
        0.5 * (th(1) - FRAC_PI_4)
    } else if d == big_d || d == -big_d {
        mid(d_len / 2)
    } else if d <= -2 {
        mid((-d / 2) as usize)
    } else {
        // floor(D − d/2), taken over the whole expression
        mid(((2 * big_d - d) / 2) as usize)
    };
    Ok(theta)
}

/// [`choose_theta_from_angles`] applied to the equalizing angles of `side`.
pub fn choose_theta(side: &[CoeffPair]) -> Result<f64> {
    let angles = side.iter().map(|&c| theta_equalize(c)).collect::<Result<Vec<_>>>()?;
    choose_theta_from_angles(&angles)
}

/// Unordered position pairs `(l, m)`, `l < m`, whose coefficient pairs are
/// proportional: `z_m1·z_l2 − z_m2·z_l1 ≈ 0` relative to their magnitudes.
pub fn detect_proportional(set: &CandidateSet) -> Vec<(usize, usize)> {
    let norm = |c: &CoeffPair| (c.z1.norm_sqr() + c.z2.norm_sqr()).sqrt();
    let mut pairs = Vec::new();
    for (l, a) in set.entries.iter().enumerate() {
        for (m, b) in set.entries.iter().enumerate().skip(l + 1) {
            let cross: Complex = b.coeffs.z1 * a.coeffs.z2 - b.coeffs.z2 * a.coeffs.z1;
            let scale = norm(&a.coeffs) * norm(&b.coeffs);
            if cross.norm() <= EPS_ZERO * scale.max(f64::MIN_POSITIVE) {
                pairs.push((l, m));
            }
        }
    }
    pairs
}

/// Puts every candidate and the unknown state through `u2`.
pub fn apply_u2_remedy(
    set: &CandidateSet,
    hidden: CoeffPair,
    loop_number: usize,
) -> Result<(CandidateSet, CoeffPair)> {
    for e in &set.entries {
        u2_coeffs(e.coeffs)?;
    }
    let hidden = u2_coeffs(hidden)?;
    let mut out = set.clone();
    out.apply(OpKind::U2Swap, loop_number, |c| u2_coeffs(c).expect("checked above"));
    Ok((out, hidden))
}

fn apply_rotation(set: &mut CandidateSet, hidden: &mut CoeffPair, theta: f64, loop_number: usize) {
    set.apply(OpKind::WRotation { theta }, loop_number, |c| rotate_coeffs(theta, c));
    *hidden = rotate_coeffs(theta, *hidden);
}

/// Re-applies a recorded operation sequence to one state.
pub fn replay(ops: &[AppliedOp], c: CoeffPair) -> Result<CoeffPair> {
    ops.iter().try_fold(c, |c, op| match op.kind {
        OpKind::WRotation { theta } => Ok(rotate_coeffs(theta, c)),
        OpKind::U2Swap => u2_coeffs(c),
    })
}

fn split_after(set: &CandidateSet, theta: f64) -> Partition {
    let mut rotated = set.clone();
    rotated.apply(OpKind::WRotation { theta }, 0, |c| rotate_coeffs(theta, c));
    partition(&rotated)
}

/// Rotation angle that populates both sides of `set`.
///
/// The table rule is used first. Sets with boundary candidates fall outside
/// the table's assumptions, so if its angle does not produce a clean split the
/// midpoints between consecutive equalizing angles are searched for the most
/// balanced one.
fn select_rotation(set: &CandidateSet) -> Result<f64> {
    let coeffs: Vec<CoeffPair> = set.entries.iter().map(|e| e.coeffs).collect();
    let angles = coeffs.iter().map(|&c| theta_equalize(c)).collect::<Result<Vec<_>>>()?;
    let theta = choose_theta_from_angles(&angles)?;
    if split_after(set, theta).is_split() {
        return Ok(theta);
    }
    let mut sorted = angles;
    sorted.sort_by(f64::total_cmp);
    let mut candidates = vec![0.5 * (sorted[0] - FRAC_PI_4)];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(0.5 * (sorted[sorted.len() - 1] + FRAC_PI_4));
    candidates
        .into_iter()
        .filter_map(|t| {
            let p = split_after(set, t);
            p.is_split()
                .then(|| ((p.s_plus.len() as i64 - p.s_minus.len() as i64).abs(), t))
        })
        .min_by_key(|&(imbalance, _)| imbalance)
        .map(|(_, t)| t)
        .ok_or(QsiError::Indeterminate)
}

/// Outcome of preparing one loop: the rotations applied and the resulting split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStep {
    pub theta_applied: Option<f64>,
    pub u2_applied: bool,
    pub partition: Partition,
}

/// Steps 1–4 of one identification loop: partition, and if needed apply the
/// `u2` remedy and a splitting rotation to the set and the unknown state.
pub fn prepare_split(
    set: &mut CandidateSet,
    hidden: &mut CoeffPair,
    loop_number: usize,
) -> Result<SplitStep> {
    let max_retries = set.len();
    let mut u2_applied = false;
    let mut attempt = 0;
    loop {
        let part = partition(set);
        if part.is_split() {
            return Ok(SplitStep { theta_applied: None, u2_applied, partition: part });
        }
        match select_rotation(set) {
            Ok(theta) => {
                apply_rotation(set, hidden, theta, loop_number);
                let part = partition(set);
                assert!(part.is_split(), "rotation by {theta} failed to split the set");
                return Ok(SplitStep { theta_applied: Some(theta), u2_applied, partition: part });
            }
            Err(QsiError::DegenerateThetas { .. }) if attempt < max_retries => {
                let (next, h) = apply_u2_remedy(set, *hidden, loop_number)?;
                *set = next;
                *hidden = h;
                u2_applied = true;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// `(p_plus, p_minus)` for the final measurement after `m` iterations,
/// conditioned on a conclusive (`|1⟩` or `|2⟩`) outcome. Without iterations
/// the protocol is not run and the decision is an unbiased guess.
pub fn branch_probabilities(hidden: CoeffPair, m: usize) -> Result<(f64, f64)> {
    if m == 0 {
        return Ok((0.5, 0.5));
    }
    let p = conditional_p_plus(hidden, m)?;
    Ok((p, 1.0 - p))
}

fn validate_input(set: &CandidateSet, hidden_index: usize) -> Result<()> {
    if set.len() < 2 {
        return Err(QsiError::InvalidArgument(format!("need at least 2 candidates, got {}", set.len())));
    }
    if !set.contains(hidden_index) {
        return Err(QsiError::InvalidArgument(format!("hidden index {hidden_index} not in the set")));
    }
    for (i, a) in set.entries.iter().enumerate() {
        if !a.coeffs.is_finite() {
            return Err(QsiError::InvalidArgument(format!("candidate {} is not finite", a.index)));
        }
        for b in &set.entries[i + 1..] {
            if a.index == b.index {
                return Err(QsiError::InvalidArgument(format!("duplicate index {}", a.index)));
            }
            let diff = (a.coeffs.z1 - b.coeffs.z1).norm() + (a.coeffs.z2 - b.coeffs.z2).norm();
            if diff <= EPS_ZERO {
                return Err(QsiError::InvalidArgument(format!(
                    "candidates {} and {} coincide",
                    a.index, b.index
                )));
            }
        }
    }
    Ok(())
}

/// Probability mass of all decision paths from `set` that end on `hidden_index`.
fn tree_mass(
    set: &CandidateSet,
    hidden: CoeffPair,
    hidden_index: usize,
    m: usize,
    loop_number: usize,
) -> Result<f64> {
    if !set.contains(hidden_index) {
        return Ok(0.0);
    }
    if set.len() == 1 {
        return Ok(1.0);
    }
    let (mut set, mut hidden) = (set.clone(), hidden);
    let step = prepare_split(&mut set, &mut hidden, loop_number)?;
    let (p_plus, p_minus) = branch_probabilities(hidden, m)?;
    let plus = set.restricted_to(&step.partition.s_plus);
    let minus = set.restricted_to(&step.partition.s_minus);
    Ok(p_plus * tree_mass(&plus, hidden, hidden_index, m, loop_number + 1)?
        + p_minus * tree_mass(&minus, hidden, hidden_index, m, loop_number + 1)?)
}

/// Runs the identification loop until a single candidate remains.
///
/// The returned transcript follows the path actually taken: the true branch
/// in `Ideal` and `Expected` modes, a sampled one in `Sampled` mode.
pub fn identify(
    set: &CandidateSet,
    hidden_index: usize,
    m: usize,
    mode: DecisionMode,
    rng_seed: u64,
) -> Result<IdentificationResult> {
    validate_input(set, hidden_index)?;
    let k = set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut hidden = set.get(hidden_index).expect("validated").coeffs;
    let success_probability = match mode {
        DecisionMode::Expected => Some(tree_mass(set, hidden, hidden_index, m, 1)?),
        _ => None,
    };

    let mut set = set.clone();
    let mut transcript = Vec::new();
    let mut path_probability = 1.0;
    while set.len() > 1 {
        let loop_number = transcript.len() + 1;
        if loop_number > k {
            return Err(QsiError::NonConvergence { loops: loop_number - 1 });
        }
        let before = set.len();
        let step = prepare_split(&mut set, &mut hidden, loop_number)?;
        let (p_plus, p_minus) = branch_probabilities(hidden, m)?;
        let branch = match mode {
            DecisionMode::Ideal | DecisionMode::Expected => match classify(hidden) {
                AttractorLabel::Plus => Branch::Plus,
                AttractorLabel::Minus => Branch::Minus,
                AttractorLabel::Boundary => unreachable!("the unknown state is a split candidate"),
            },
            DecisionMode::Sampled => {
                if rng.gen::<f64>() < p_plus {
                    Branch::Plus
                } else {
                    Branch::Minus
                }
            }
        };
        let side = match branch {
            Branch::Plus => {
                path_probability *= p_plus;
                &step.partition.s_plus
            }
            Branch::Minus => {
                path_probability *= p_minus;
                &step.partition.s_minus
            }
        };
        set = set.restricted_to(side);
        debug_assert!(set.len() < before);
        transcript.push(LoopRecord {
            theta_applied: step.theta_applied,
            u2_applied: step.u2_applied,
            m_used: m,
            branch_probs: (p_plus, p_minus),
            branch_taken: branch,
            set_sizes: (before, set.len()),
        });
    }

    let last = set.entries[0];
    Ok(IdentificationResult {
        identified_index: last.index,
        loops: transcript.len(),
        transcript,
        final_coeffs: last.coeffs,
        applied_ops: set.applied_ops,
        path_probability,
        success_probability,
    })
}

/// Probability that the algorithm ends on `hidden_index`, summed over the
/// full tree of measurement outcomes.
pub fn success_probability(set: &CandidateSet, hidden_index: usize, m: usize) -> Result<f64> {
    let r = identify(set, hidden_index, m, DecisionMode::Expected, 0)?;
    Ok(r.success_probability.expect("expected mode always reports it"))
}
