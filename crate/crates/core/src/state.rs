//! Dense single- and two-qutrit pure states, the fixed gate set of the
//! protocol, and projective measurement with post-selection.
//!
//! Operators are stored as dense `3×3` / `9×9` complex matrices. A pair of
//! qutrits is indexed row-major, `k = 3·k1 + k2`, with `k1` the first member.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QsiError, Result};

pub type Complex = Complex64;

/// Threshold below which an amplitude or a probability is treated as zero.
pub const EPS_ZERO: f64 = 1e-12;

const ZERO: Complex = Complex::new(0.0, 0.0);
const ONE: Complex = Complex::new(1.0, 0.0);

/// The pair `(z1, z2)` parametrizing the unnormalized state `|0⟩ + z1|1⟩ + z2|2⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffPair {
    pub z1: Complex,
    pub z2: Complex,
}

impl CoeffPair {
    pub const fn new(z1: Complex, z2: Complex) -> Self {
        CoeffPair { z1, z2 }
    }

    pub fn real(z1: f64, z2: f64) -> Self {
        CoeffPair::new(Complex::new(z1, 0.0), Complex::new(z2, 0.0))
    }

    /// Builds `(ρ1·e^{iφ1}, ρ2·e^{iφ2})`.
    pub fn polar(rho1: f64, phi1: f64, rho2: f64, phi2: f64) -> Self {
        CoeffPair::new(Complex::from_polar(rho1, phi1), Complex::from_polar(rho2, phi2))
    }

    pub fn abs1(&self) -> f64 {
        self.z1.norm()
    }

    pub fn abs2(&self) -> f64 {
        self.z2.norm()
    }

    /// `|z1| − |z2|`, the quantity whose sign selects the attractor.
    pub fn magnitude_gap(&self) -> f64 {
        self.abs1() - self.abs2()
    }

    pub fn swapped(&self) -> Self {
        CoeffPair::new(self.z2, self.z1)
    }

    pub fn is_finite(&self) -> bool {
        self.z1.is_finite() && self.z2.is_finite()
    }
}

impl fmt::Display for CoeffPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.z1, self.z2)
    }
}

/// Normalized single-qutrit pure state in the basis `|0⟩, |1⟩, |2⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QutritState {
    amp: [Complex; 3],
}

impl QutritState {
    /// Normalizes `amp` and fixes the global phase so that `amp[0]` is real
    /// and non-negative whenever `|amp[0]| > EPS_ZERO`.
    pub fn from_amplitudes(amp: [Complex; 3]) -> Result<Self> {
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= EPS_ZERO {
            return Err(QsiError::InvalidArgument(format!(
                "amplitudes cannot be normalized (norm {norm:e})"
            )));
        }
        let phase = if amp[0].norm() > EPS_ZERO {
            amp[0].conj() / amp[0].norm()
        } else {
            ONE
        };
        Ok(QutritState {
            amp: amp.map(|a| a * phase / norm),
        })
    }

    pub fn basis(k: usize) -> Self {
        assert!(k < 3, "qutrit basis index out of range: {k}");
        let mut amp = [ZERO; 3];
        amp[k] = ONE;
        QutritState { amp }
    }

    pub fn amplitudes(&self) -> &[Complex; 3] {
        &self.amp
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &QutritState) -> Complex {
        self.amp
            .iter()
            .zip(other.amp.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Phase-insensitive similarity `|⟨self|other⟩|`.
    pub fn overlap(&self, other: &QutritState) -> f64 {
        self.inner(other).norm()
    }
}

/// Normalized state of a qutrit pair, `amp[3·k1 + k2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQutritState {
    amp: [Complex; 9],
}

impl TwoQutritState {
    pub fn basis(k1: usize, k2: usize) -> Self {
        assert!(k1 < 3 && k2 < 3, "qutrit basis index out of range: ({k1}, {k2})");
        let mut amp = [ZERO; 9];
        amp[3 * k1 + k2] = ONE;
        TwoQutritState { amp }
    }

    pub fn from_amplitudes(amp: [Complex; 9]) -> Result<Self> {
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= EPS_ZERO {
            return Err(QsiError::InvalidArgument(format!(
                "amplitudes cannot be normalized (norm {norm:e})"
            )));
        }
        Ok(TwoQutritState {
            amp: amp.map(|a| a / norm),
        })
    }

    pub fn amplitudes(&self) -> &[Complex; 9] {
        &self.amp
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Marginal outcome probabilities of measuring the first qutrit.
    pub fn first_qutrit_probs(&self) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (k, a) in self.amp.iter().enumerate() {
            p[k / 3] += a.norm_sqr();
        }
        p
    }
}

/// Dense `3×3` single-qutrit operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary3 {
    m: [[Complex; 3]; 3],
}

/// Dense `9×9` two-qutrit operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary9 {
    m: [[Complex; 9]; 9],
}

macro_rules! dense_operator {
    ($ty:ident, $n:expr) => {
        impl $ty {
            pub fn from_rows(m: [[Complex; $n]; $n]) -> Self {
                $ty { m }
            }

            pub fn identity() -> Self {
                let mut m = [[ZERO; $n]; $n];
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] = ONE;
                }
                $ty { m }
            }

            pub fn rows(&self) -> &[[Complex; $n]; $n] {
                &self.m
            }

            pub fn dagger(&self) -> Self {
                let mut m = [[ZERO; $n]; $n];
                for i in 0..$n {
                    for j in 0..$n {
                        m[i][j] = self.m[j][i].conj();
                    }
                }
                $ty { m }
            }

            /// Matrix product `self · rhs`.
            pub fn compose(&self, rhs: &Self) -> Self {
                let mut m = [[ZERO; $n]; $n];
                for i in 0..$n {
                    for j in 0..$n {
                        m[i][j] = (0..$n).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
                    }
                }
                $ty { m }
            }

            /// Largest entry-wise deviation of `m†m` from the identity.
            pub fn unitarity_error(&self) -> f64 {
                let p = self.dagger().compose(self);
                let mut worst = 0.0_f64;
                for i in 0..$n {
                    for j in 0..$n {
                        let target = if i == j { ONE } else { ZERO };
                        worst = worst.max((p.m[i][j] - target).norm());
                    }
                }
                worst
            }

            pub fn is_unitary(&self, tol: f64) -> bool {
                self.unitarity_error() <= tol
            }

            fn apply_raw(&self, v: &[Complex; $n]) -> [Complex; $n] {
                let mut out = [ZERO; $n];
                for (o, row) in out.iter_mut().zip(self.m.iter()) {
                    *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                }
                out
            }
        }
    };
}

dense_operator!(Unitary3, 3);
dense_operator!(Unitary9, 9);

/// Permutation operator exchanging basis states `a` and `b`.
fn swap3(a: usize, b: usize) -> Unitary3 {
    let mut u = Unitary3::identity();
    u.m[a][a] = ZERO;
    u.m[b][b] = ZERO;
    u.m[a][b] = ONE;
    u.m[b][a] = ONE;
    u
}

fn swap9(a: (usize, usize), b: (usize, usize)) -> Unitary9 {
    let (a, b) = (3 * a.0 + a.1, 3 * b.0 + b.1);
    let mut u = Unitary9::identity();
    u.m[a][a] = ZERO;
    u.m[b][b] = ZERO;
    u.m[a][b] = ONE;
    u.m[b][a] = ONE;
    u
}

/// `|0⟩⟨2| + |2⟩⟨0| + |1⟩⟨1|`
pub fn u1() -> Unitary3 {
    swap3(0, 2)
}

/// `|0⟩⟨1| + |1⟩⟨0| + |2⟩⟨2|`
pub fn u2() -> Unitary3 {
    swap3(0, 1)
}

/// Exchanges `|01⟩ ↔ |11⟩`, identity elsewhere.
pub fn big_u1() -> Unitary9 {
    swap9((0, 1), (1, 1))
}

/// Exchanges `|02⟩ ↔ |22⟩`, identity elsewhere.
pub fn big_u2() -> Unitary9 {
    swap9((0, 2), (2, 2))
}

/// Exchanges `|01⟩ ↔ |10⟩`, identity elsewhere.
pub fn big_u() -> Unitary9 {
    swap9((0, 1), (1, 0))
}

/// Fixed rotation that separates `|z1|` and `|z2|` for states of the form
/// `|0⟩ + ρ|1⟩ + ρe^{iφ}|2⟩`.
pub fn rotation_r() -> Unitary3 {
    let s = FRAC_1_SQRT_2;
    Unitary3::from_rows([
        [ONE, ZERO, ZERO],
        [ZERO, Complex::new(0.0, s), Complex::new(s, 0.0)],
        [ZERO, Complex::new(-s, 0.0), Complex::new(0.0, -s)],
    ])
}

/// Real rotation by `theta` in the `|1⟩, |2⟩` subspace.
pub fn rotation_w(theta: f64) -> Unitary3 {
    let (s, c) = theta.sin_cos();
    Unitary3::from_rows([
        [ONE, ZERO, ZERO],
        [ZERO, Complex::new(c, 0.0), Complex::new(s, 0.0)],
        [ZERO, Complex::new(-s, 0.0), Complex::new(c, 0.0)],
    ])
}

/// Normalized state proportional to `(1, z1, z2)`, with a real positive `|0⟩` amplitude.
pub fn make_state(c: CoeffPair) -> QutritState {
    let n = (1.0 + c.z1.norm_sqr() + c.z2.norm_sqr()).sqrt().recip();
    QutritState {
        amp: [Complex::new(n, 0.0), c.z1 * n, c.z2 * n],
    }
}

/// Inverse of [`make_state`], insensitive to the global phase.
pub fn coeffs_of(s: &QutritState) -> Result<CoeffPair> {
    let a0 = s.amp[0];
    if a0.norm() <= EPS_ZERO {
        return Err(QsiError::DegenerateState { amp0: a0.norm() });
    }
    Ok(CoeffPair::new(s.amp[1] / a0, s.amp[2] / a0))
}

pub fn apply3(u: &Unitary3, s: &QutritState) -> QutritState {
    QutritState {
        amp: u.apply_raw(&s.amp),
    }
}

pub fn apply9(u: &Unitary9, s: &TwoQutritState) -> TwoQutritState {
    TwoQutritState {
        amp: u.apply_raw(&s.amp),
    }
}

/// Applies `u` to the state parametrized by `c` and returns the new parametrization.
pub fn transform_coeffs(u: &Unitary3, c: CoeffPair) -> Result<CoeffPair> {
    coeffs_of(&apply3(u, &make_state(c)))
}

pub fn tensor(a: &QutritState, b: &QutritState) -> TwoQutritState {
    let mut amp = [ZERO; 9];
    for (k1, x) in a.amp.iter().enumerate() {
        for (k2, y) in b.amp.iter().enumerate() {
            amp[3 * k1 + k2] = x * y;
        }
    }
    TwoQutritState { amp }
}

/// Measures the first qutrit of a pair with `P = |0⟩⟨0|` and keeps the
/// "yes" branch. Returns the branch probability and the renormalized state of
/// the second qutrit.
pub fn project_first_zero(s: &TwoQutritState) -> Result<(f64, QutritState)> {
    let branch = [s.amp[0], s.amp[1], s.amp[2]];
    let prob: f64 = branch.iter().map(|a| a.norm_sqr()).sum();
    if prob <= EPS_ZERO {
        return Err(QsiError::ZeroProbability { prob });
    }
    Ok((prob, QutritState::from_amplitudes(branch)?))
}

/// Born-rule probabilities of the three basis outcomes.
pub fn measurement_probs(s: &QutritState) -> [f64; 3] {
    s.amp.map(|a| a.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn assert_amps(s: &QutritState, expect: [Complex; 3]) {
        for (a, b) in s.amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-14, "{s:?} != {expect:?}");
        }
    }

    #[test]
    fn make_state_examples() {
        assert_amps(&make_state(CoeffPair::real(0.0, 0.0)), [ONE, ZERO, ZERO]);
        let k = 1.0 / 3f64.sqrt();
        assert_amps(&make_state(CoeffPair::real(1.0, 1.0)), [c(k, 0.0); 3]);
        let k = 1.0 / 6f64.sqrt();
        assert_amps(
            &make_state(CoeffPair::new(c(2.0, 0.0), c(0.0, 1.0))),
            [c(k, 0.0), c(2.0 * k, 0.0), c(0.0, k)],
        );
    }

    #[test]
    fn coeffs_of_examples() {
        let z = coeffs_of(&QutritState::basis(0)).unwrap();
        assert_eq!(z, CoeffPair::real(0.0, 0.0));
        let z = coeffs_of(&make_state(CoeffPair::real(1.0, 1.0))).unwrap();
        assert!((z.z1 - ONE).norm() < 1e-14 && (z.z2 - ONE).norm() < 1e-14);
        assert!(matches!(
            coeffs_of(&QutritState::basis(1)),
            Err(QsiError::DegenerateState { .. })
        ));
    }

    #[test]
    fn coeffs_of_ignores_global_phase() {
        let s = make_state(CoeffPair::new(c(0.3, -1.2), c(2.0, 0.5)));
        let phase = Complex::from_polar(1.0, 1.1);
        let rotated = QutritState {
            amp: s.amplitudes().map(|a| a * phase),
        };
        let z = coeffs_of(&rotated).unwrap();
        assert!((z.z1 - c(0.3, -1.2)).norm() < 1e-12);
        assert!((z.z2 - c(2.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn from_amplitudes_fixes_phase() {
        let s = QutritState::from_amplitudes([c(0.0, 2.0), c(1.0, 0.0), ZERO]).unwrap();
        assert!(s.amplitudes()[0].im.abs() < 1e-15 && s.amplitudes()[0].re > 0.0);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        assert!(QutritState::from_amplitudes([ZERO; 3]).is_err());
    }

    #[test]
    fn gate_set_is_unitary() {
        for u in [u1(), u2(), rotation_r(), rotation_w(0.7), rotation_w(-2.1)] {
            assert!(u.is_unitary(1e-15), "{u:?}");
        }
        assert_eq!(u1().unitarity_error(), 0.0);
        assert_eq!(u2().unitarity_error(), 0.0);
        for u in [big_u1(), big_u2(), big_u()] {
            assert_eq!(u.unitarity_error(), 0.0);
        }
    }

    #[test]
    fn permutation_actions() {
        let s = QutritState { amp: [c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)] };
        assert_eq!(apply3(&u1(), &s).amplitudes(), &[c(3.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(apply3(&u2(), &s).amplitudes(), &[c(2.0, 0.0), c(1.0, 0.0), c(3.0, 0.0)]);
        assert_eq!(apply3(&u1(), &QutritState::basis(0)), QutritState::basis(2));

        assert_eq!(apply9(&big_u(), &TwoQutritState::basis(0, 1)), TwoQutritState::basis(1, 0));
        assert_eq!(apply9(&big_u(), &TwoQutritState::basis(1, 0)), TwoQutritState::basis(0, 1));
        assert_eq!(apply9(&big_u1(), &TwoQutritState::basis(2, 2)), TwoQutritState::basis(2, 2));
        assert_eq!(apply9(&big_u1(), &TwoQutritState::basis(0, 1)), TwoQutritState::basis(1, 1));
        assert_eq!(apply9(&big_u2(), &TwoQutritState::basis(2, 2)), TwoQutritState::basis(0, 2));
        for k1 in 0..3 {
            for k2 in 0..3 {
                if ![(0, 1), (1, 0)].contains(&(k1, k2)) {
                    let b = TwoQutritState::basis(k1, k2);
                    assert_eq!(apply9(&big_u(), &b), b);
                }
            }
        }
    }

    #[test]
    fn rotation_r_examples() {
        assert_eq!(apply3(&rotation_r(), &QutritState::basis(0)), QutritState::basis(0));

        let z = transform_coeffs(&rotation_r(), CoeffPair::polar(1.0, 0.0, 1.0, PI / 2.0)).unwrap();
        assert!((z.abs1() - 2f64.sqrt()).abs() < 1e-12);
        assert!(z.abs2() < 1e-12);

        let z = transform_coeffs(&rotation_r(), CoeffPair::polar(1.0, 0.0, 1.0, 0.0)).unwrap();
        assert!((z.abs1() - 1.0).abs() < 1e-12 && (z.abs2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_w_examples() {
        assert_eq!(rotation_w(0.0), Unitary3::identity());
        let s = QutritState { amp: [c(1.0, 0.0), c(2.0, 1.0), c(0.0, 3.0)] };
        let out = apply3(&rotation_w(PI / 2.0), &s);
        let expect = [c(1.0, 0.0), c(0.0, 3.0), c(-2.0, -1.0)];
        for (a, b) in out.amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
        let round = rotation_w(0.37).compose(&rotation_w(-0.37));
        for (i, row) in round.rows().iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((x - c(t, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn tensor_examples() {
        let t = tensor(&QutritState::basis(0), &QutritState::basis(0));
        assert_eq!(t, TwoQutritState::basis(0, 0));
        let t = tensor(&QutritState::basis(1), &QutritState::basis(2));
        assert_eq!(t.amplitudes()[5], ONE);
        assert_eq!(t, TwoQutritState::basis(1, 2));
        let a = make_state(CoeffPair::new(c(0.2, 0.9), c(-1.0, 0.1)));
        let b = make_state(CoeffPair::real(3.0, 0.5));
        assert!((tensor(&a, &b).norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn project_first_zero_examples() {
        let (p, s) = project_first_zero(&TwoQutritState::basis(0, 0)).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(s, QutritState::basis(0));

        assert!(matches!(
            project_first_zero(&TwoQutritState::basis(1, 2)),
            Err(QsiError::ZeroProbability { .. })
        ));

        let h = FRAC_1_SQRT_2;
        let mut amp = [ZERO; 9];
        amp[1] = c(h, 0.0);
        amp[5] = c(h, 0.0);
        let (p, s) = project_first_zero(&TwoQutritState::from_amplitudes(amp).unwrap()).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!((s.overlap(&QutritState::basis(1)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn measurement_probs_examples() {
        assert_eq!(measurement_probs(&QutritState::basis(1)), [0.0, 1.0, 0.0]);
        let p = measurement_probs(&make_state(CoeffPair::real(1.0, 1.0)));
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = measurement_probs(&make_state(CoeffPair::real(2.0, 1.0)));
        for (x, e) in p.iter().zip([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]) {
            assert!((x - e).abs() < 1e-15);
        }
    }
}
