//! The post-selected nonlinear transformation.
//!
//! One protocol step consumes four copies of `|0⟩ + z1|1⟩ + z2|2⟩` and, when all
//! three intermediate measurements return `|0⟩`, leaves one copy of
//! `|0⟩ + (z1²/z2)|1⟩ + (z2²/z1)|2⟩`. The step is available both as an exact
//! gate-level simulation ([`circuit_step`]) and in closed form ([`map_step`]).
//!
//! Under the map the log-magnitudes `a = ln|z1|`, `b = ln|z2|` evolve linearly:
//! `a + b` is conserved and `a − b` triples. Probabilities after many steps are
//! computed from this form so they stay finite long after the coefficients
//! themselves would overflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QsiError, Result};
use crate::state::{
    apply3, apply9, big_u, big_u1, big_u2, coeffs_of, make_state, project_first_zero,
    rotation_r, tensor, transform_coeffs, u1, u2, CoeffPair, QutritState, EPS_ZERO,
};

/// Magnitude gap below which a state is considered to sit on the boundary
/// `|z1| = |z2|` between the two basins.
pub const EPS_TIE: f64 = 1e-9;

/// Value written to grid cells where the requested quantity is undefined.
pub const SENTINEL: f64 = -1.0;

/// Result of one gate-level protocol step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Post-selected output qutrit.
    pub state: QutritState,
    /// Probability of each of the three post-selections, in circuit order.
    pub branch_probs: [f64; 3],
    /// Probability that all three post-selections succeed.
    pub survival: f64,
}

impl StepOutcome {
    /// Coefficients of the output state. Fails when the output has left the
    /// `(z1, z2)` chart, e.g. when the input already had a vanishing coefficient.
    pub fn post_state(&self) -> Result<CoeffPair> {
        coeffs_of(&self.state)
    }
}

/// Points of an iterated map together with the survival cost of every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTrajectory {
    /// `points[0]` is the input; `points[n]` is the result of `n` steps.
    pub points: Vec<CoeffPair>,
    /// Single-step survival probability evaluated at `points[n]`, for `n < M`.
    pub per_step_survival: Vec<f64>,
    pub cumulative_survival: f64,
}

impl MapTrajectory {
    pub fn iterations(&self) -> usize {
        self.per_step_survival.len()
    }

    pub fn last(&self) -> CoeffPair {
        *self.points.last().expect("trajectory always holds its input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttractorLabel {
    /// `|z1| > |z2|`: iterates approach `{∞, 0}`, i.e. the state `|1⟩`.
    Plus,
    /// `|z1| < |z2|`: iterates approach `{0, ∞}`, i.e. the state `|2⟩`.
    Minus,
    Boundary,
}

fn check_map_domain(c: CoeffPair, step: usize) -> Result<()> {
    let (a, b) = (c.abs1(), c.abs2());
    if a <= EPS_ZERO || b <= EPS_ZERO {
        return Err(QsiError::ZeroCoefficient { step, z1_abs: a, z2_abs: b });
    }
    Ok(())
}

fn map_step_at(c: CoeffPair, step: usize) -> Result<CoeffPair> {
    check_map_domain(c, step)?;
    let next = CoeffPair::new(c.z1 * c.z1 / c.z2, c.z2 * c.z2 / c.z1);
    if !next.is_finite() {
        return Err(QsiError::InvalidArgument(format!(
            "coefficients overflow at map step {step}"
        )));
    }
    Ok(next)
}

/// `(z1, z2) → (z1²/z2, z2²/z1)`.
pub fn map_step(c: CoeffPair) -> Result<CoeffPair> {
    map_step_at(c, 1)
}

/// Exact simulation of one protocol step on four copies of `make_state(c)`.
///
/// Pair `j` gets `u_j` on its first member, then the joint swap `U_j`, then
/// `|0⟩⟨0|` on the first member. The two surviving qutrits are joined by `U`
/// and the first is measured again.
pub fn circuit_step(c: CoeffPair) -> Result<StepOutcome> {
    let psi = make_state(c);
    let pair1 = apply9(&big_u1(), &tensor(&apply3(&u1(), &psi), &psi));
    let (p1, left) = project_first_zero(&pair1)?;
    let pair2 = apply9(&big_u2(), &tensor(&apply3(&u2(), &psi), &psi));
    let (p2, right) = project_first_zero(&pair2)?;
    let joint = apply9(&big_u(), &tensor(&left, &right));
    let (p3, state) = project_first_zero(&joint)?;
    Ok(StepOutcome {
        state,
        branch_probs: [p1, p2, p3],
        survival: p1 * p2 * p3,
    })
}

/// Probability that one step's three post-selections all succeed:
/// `(|z1|²|z2|² + |z1|⁶ + |z2|⁶) / (1 + |z1|² + |z2|²)⁴`.
pub fn survival_prob(c: CoeffPair) -> f64 {
    let (a, b) = (c.z1.norm_sqr(), c.z2.norm_sqr());
    let t = 1.0 + a + b;
    if !t.is_finite() {
        return 0.0;
    }
    // every ratio below is ≤ 1, so no intermediate overflows
    let (x, y) = (a / t, b / t);
    (x * y / t + x * x * x + y * y * y) / t
}

/// Applies [`map_step`] `m` times, recording the survival cost of each step.
pub fn iterate_map(c: CoeffPair, m: usize) -> Result<MapTrajectory> {
    let mut points = Vec::with_capacity(m + 1);
    let mut per_step_survival = Vec::with_capacity(m);
    points.push(c);
    let mut current = c;
    for step in 1..=m {
        per_step_survival.push(survival_prob(current));
        current = map_step_at(current, step)?;
        points.push(current);
    }
    let cumulative_survival = per_step_survival.iter().product();
    Ok(MapTrajectory { points, per_step_survival, cumulative_survival })
}

/// Log-magnitudes `(ln|f1|, ln|f2|)` after `m` map steps.
fn log_magnitudes_after(c: CoeffPair, m: usize) -> Result<(f64, f64)> {
    let (la, lb) = (c.abs1().ln(), c.abs2().ln());
    if m == 0 {
        return Ok((la, lb));
    }
    check_map_domain(c, 1)?;
    let sum = la + lb;
    let gap = (la - lb) * 3f64.powi(m as i32);
    Ok(((sum + gap) / 2.0, (sum - gap) / 2.0))
}

/// `ln(e^x + e^y + e^z)` without overflow.
fn log_sum_exp3(x: f64, y: f64, z: f64) -> f64 {
    let top = x.max(y).max(z);
    if top == f64::INFINITY {
        return top;
    }
    top + ((x - top).exp() + (y - top).exp() + (z - top).exp()).ln()
}

/// Probability of finding `|1⟩` after `m` iterations of the map:
/// `|f1|² / (1 + |f1|² + |f2|²)`.
pub fn p1_after(c: CoeffPair, m: usize) -> Result<f64> {
    let (la, lb) = log_magnitudes_after(c, m)?;
    let log_p1 = 2.0 * la - log_sum_exp3(0.0, 2.0 * la, 2.0 * lb);
    Ok(log_p1.exp())
}

/// Probability of outcome `|1⟩` conditioned on the outcome being `|1⟩` or
/// `|2⟩`, after `m` iterations: `|f1|² / (|f1|² + |f2|²)`.
pub fn conditional_p_plus(c: CoeffPair, m: usize) -> Result<f64> {
    if m == 0 {
        let (a, b) = (c.z1.norm_sqr(), c.z2.norm_sqr());
        if a + b <= EPS_ZERO * EPS_ZERO {
            return Err(QsiError::ZeroProbability { prob: a + b });
        }
        return Ok(a / (a + b));
    }
    let (la, lb) = log_magnitudes_after(c, m)?;
    // logistic in the log-ratio
    let x = 2.0 * (la - lb);
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}

pub fn classify(c: CoeffPair) -> AttractorLabel {
    let gap = c.magnitude_gap();
    if gap > EPS_TIE {
        AttractorLabel::Plus
    } else if gap < -EPS_TIE {
        AttractorLabel::Minus
    } else {
        AttractorLabel::Boundary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    /// Real positive `(z1, z2)` axes.
    Direct,
    /// `(ρ, φ)` axes for `|0⟩ + ρ|1⟩ + ρe^{iφ}|2⟩`, rotated by `R` before the map.
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanQuantity {
    /// Probability of `|1⟩` after `M` iterations.
    P1,
    /// Product of the single-step survival probabilities over `M` iterations.
    Survival,
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Region {
    pub fn default_for(mode: ScanMode) -> Self {
        match mode {
            ScanMode::Direct => Region { x: (0.0, 2.0), y: (0.0, 2.0) },
            ScanMode::Rotated => Region {
                x: (0.0, 2.0),
                y: (-std::f64::consts::PI, std::f64::consts::PI),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.x, self.y] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(QsiError::InvalidArgument(format!("invalid axis range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Sampled landscape; `values[row][col]` is taken at `(xs[col], ys[row])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

/// Coefficients fed to the map for grid point `(x, y)`.
pub fn scan_point(mode: ScanMode, x: f64, y: f64) -> CoeffPair {
    match mode {
        ScanMode::Direct => CoeffPair::real(x, y),
        ScanMode::Rotated => {
            let c = CoeffPair::polar(x, 0.0, x, y);
            // R leaves the |0⟩ amplitude untouched, so the chart is never left
            transform_coeffs(&rotation_r(), c).expect("R preserves the |0> amplitude")
        }
    }
}

/// Value of `quantity` at `c`, or [`SENTINEL`] where it is undefined.
///
/// For `P1`, a state with exactly one vanishing coefficient is already at an
/// attractor, so it takes the limiting value (1 if `z1 ≠ 0`, else 0). Both
/// coefficients vanishing leaves the map undefined.
pub fn scan_value(c: CoeffPair, m: usize, quantity: ScanQuantity) -> f64 {
    match quantity {
        ScanQuantity::P1 => {
            if m == 0 {
                return p1_after(c, 0).unwrap_or(SENTINEL);
            }
            let (a, b) = (c.abs1() > EPS_ZERO, c.abs2() > EPS_ZERO);
            match (a, b) {
                (true, true) => p1_after(c, m).unwrap_or(SENTINEL),
                (true, false) => 1.0,
                (false, true) => 0.0,
                (false, false) => SENTINEL,
            }
        }
        ScanQuantity::Survival => match m {
            0 => 1.0,
            _ => iterate_map(c, m - 1)
                .map(|t| t.cumulative_survival * survival_prob(t.last()))
                .unwrap_or(SENTINEL),
        },
    }
}

/// Evaluates `quantity` on a `resolution × resolution` grid over `region`.
pub fn grid_scan(
    region: Region,
    resolution: usize,
    m: usize,
    mode: ScanMode,
    quantity: ScanQuantity,
) -> Result<GridScan> {
    if resolution < 2 {
        return Err(QsiError::InvalidArgument(format!("resolution must be >= 2, got {resolution}")));
    }
    region.validate()?;
    let xs = linspace(region.x, resolution);
    let ys = linspace(region.y, resolution);
    let values = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| scan_value(scan_point(mode, x, y), m, quantity))
                .collect()
        })
        .collect();
    Ok(GridScan { xs, ys, values })
}
