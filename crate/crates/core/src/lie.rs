//! Lie group and Lie algebra arithmetic.
//!
//! Two backends are supported. The torus `T^d` is the structure group of the
//! solver; elements are stored as angle vectors so that the group law and the
//! order of rational-angle elements stay exact. The matrix backend represents
//! `U(n)` by unitary matrices and `u(n)` by skew-Hermitian matrices and is used
//! by the holonomy and gauge machinery.
//!
//! The logarithm is scaled so that `exp_g(2π · log_scaled(g)) = g`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const TWO_PI: f64 = 2.0 * PI;
/// Eigenangles within this distance of ±π are treated as lying on the cut.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum AlgebraElement {
    Torus(Vec<f64>),
    Matrix(CMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement {
    /// Angles, each reduced to `[0, 2π)`.
    Torus(Vec<f64>),
    Matrix(CMatrix),
}

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Principal representative of `x mod 1` in `(-1/2, 1/2]`.
pub fn principal_fraction(x: f64) -> f64 {
    let f = x.rem_euclid(1.0);
    if f > 0.5 {
        f - 1.0
    } else {
        f
    }
}

impl AlgebraElement {
    pub fn zeros_torus(d: usize) -> Self {
        AlgebraElement::Torus(vec![0.0; d])
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            AlgebraElement::Torus(v) => AlgebraElement::Torus(vec![0.0; v.len()]),
            AlgebraElement::Matrix(m) => AlgebraElement::Matrix(CMatrix::zeros(m.nrows(), m.ncols())),
        }
    }

    /// Skew-Hermitian part of an arbitrary complex matrix.
    pub fn skew_hermitian(m: CMatrix) -> Self {
        let s = (&m - m.adjoint()) * Complex64::new(0.5, 0.0);
        AlgebraElement::Matrix(s)
    }

    pub fn torus_coeffs(&self) -> Option<&[f64]> {
        match self {
            AlgebraElement::Torus(v) => Some(v),
            AlgebraElement::Matrix(_) => None,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            AlgebraElement::Torus(v) => AlgebraElement::Torus(v.iter().map(|x| x * s).collect()),
            AlgebraElement::Matrix(m) => AlgebraElement::Matrix(m * Complex64::new(s, 0.0)),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (AlgebraElement::Torus(a), AlgebraElement::Torus(b)) if a.len() == b.len() => {
                Ok(AlgebraElement::Torus(a.iter().zip(b).map(|(x, y)| x + y).collect()))
            }
            (AlgebraElement::Matrix(a), AlgebraElement::Matrix(b)) if a.shape() == b.shape() => {
                Ok(AlgebraElement::Matrix(a + b))
            }
            _ => Err(Error::BackendMismatch("algebra add")),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn norm(&self) -> f64 {
        inner(self, self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// Largest deviation from skew-Hermitian structure (zero for torus elements).
    pub fn skew_defect(&self) -> f64 {
        match self {
            AlgebraElement::Torus(_) => 0.0,
            AlgebraElement::Matrix(m) => (m + m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }
}

impl GroupElement {
    pub fn identity_torus(d: usize) -> Self {
        GroupElement::Torus(vec![0.0; d])
    }

    pub fn identity_matrix(n: usize) -> Self {
        GroupElement::Matrix(CMatrix::identity(n, n))
    }

    pub fn identity_like(&self) -> Self {
        match self {
            GroupElement::Torus(a) => GroupElement::identity_torus(a.len()),
            GroupElement::Matrix(m) => GroupElement::identity_matrix(m.nrows()),
        }
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        GroupElement::Torus(angles.iter().map(|&a| wrap_angle(a)).collect())
    }

    pub fn angles(&self) -> Option<&[f64]> {
        match self {
            GroupElement::Torus(a) => Some(a),
            GroupElement::Matrix(_) => None,
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (GroupElement::Torus(a), GroupElement::Torus(b)) if a.len() == b.len() => Ok(GroupElement::Torus(
                a.iter().zip(b).map(|(x, y)| wrap_angle(x + y)).collect(),
            )),
            (GroupElement::Matrix(a), GroupElement::Matrix(b)) if a.shape() == b.shape() => {
                Ok(GroupElement::Matrix(a * b))
            }
            _ => Err(Error::BackendMismatch("group multiply")),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            GroupElement::Torus(a) => GroupElement::Torus(a.iter().map(|x| wrap_angle(-x)).collect()),
            GroupElement::Matrix(m) => GroupElement::Matrix(m.adjoint()),
        }
    }

    /// `‖g*g − 1‖_max` for matrices; zero for torus elements.
    pub fn unitarity_defect(&self) -> f64 {
        match self {
            GroupElement::Torus(_) => 0.0,
            GroupElement::Matrix(m) => {
                let n = m.nrows();
                (m.adjoint() * m - CMatrix::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max)
            }
        }
    }
}

/// Group exponential.
pub fn exp_g(xi: &AlgebraElement) -> GroupElement {
    match xi {
        AlgebraElement::Torus(c) => GroupElement::from_angles(c),
        AlgebraElement::Matrix(m) => GroupElement::Matrix(expm_skew(m)),
    }
}

/// Exponential of a skew-Hermitian matrix through the Hermitian eigendecomposition
/// of `-iξ`; the result is unitary to rounding.
fn expm_skew(m: &CMatrix) -> CMatrix {
    let i = Complex64::new(0.0, 1.0);
    let herm = m * (-i);
    let herm = (&herm + herm.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let v = &eig.eigenvectors;
    let n = m.nrows();
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = Complex64::from_polar(1.0, eig.eigenvalues[k]);
    }
    v * d * v.adjoint()
}

/// Scaled principal logarithm: returns `a` with `exp_g(2π a) = g`.
///
/// Torus: componentwise in `(-1/2, 1/2]`, ties at `1/2` go to the positive
/// representative. Matrix: eigenangles in `(-π, π]`; when `det g = 1` the
/// representative with zero trace is preferred by moving tied angles to `-π`,
/// and `BranchCut` is returned if no such choice exists.
pub fn log_scaled(g: &GroupElement) -> Result<AlgebraElement> {
    match g {
        GroupElement::Torus(a) => Ok(AlgebraElement::Torus(
            a.iter().map(|x| principal_fraction(x / TWO_PI)).collect(),
        )),
        GroupElement::Matrix(m) => log_scaled_matrix(m).map(AlgebraElement::Matrix),
    }
}

fn log_scaled_matrix(m: &CMatrix) -> Result<CMatrix> {
    let n = m.nrows();
    let schur = Schur::try_new(m.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::BranchCut("Schur decomposition failed".into()))?;
    let (q, t) = schur.unpack();
    let mut angles: Vec<f64> = (0..n).map(|k| t[(k, k)].arg()).collect();
    let mut ties = Vec::new();
    for (k, a) in angles.iter_mut().enumerate() {
        if (PI - a.abs()) <= TIE_TOL {
            *a = PI;
            ties.push(k);
        }
    }
    let det_angle: f64 = (0..n).map(|k| t[(k, k)].arg()).sum();
    let special = principal_fraction(det_angle / TWO_PI).abs() < 1e-10;
    if special && !ties.is_empty() {
        let total: f64 = angles.iter().sum();
        let turns = (total / TWO_PI).round() as i64;
        if turns > 0 {
            if (turns as usize) > ties.len() {
                return Err(Error::BranchCut(format!(
                    "{} tied eigenangles cannot absorb {turns} turns",
                    ties.len()
                )));
            }
            for &k in ties.iter().rev().take(turns as usize) {
                angles[k] = -PI;
            }
        }
    }
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = Complex64::new(0.0, angles[k] / TWO_PI);
    }
    Ok(&q * d * q.adjoint())
}

/// `Ad_g ξ`.
pub fn adjoint(g: &GroupElement, xi: &AlgebraElement) -> Result<AlgebraElement> {
    match (g, xi) {
        (GroupElement::Torus(a), AlgebraElement::Torus(c)) if a.len() == c.len() => Ok(xi.clone()),
        (GroupElement::Matrix(u), AlgebraElement::Matrix(x)) if u.shape() == x.shape() => {
            Ok(AlgebraElement::Matrix(u * x * u.adjoint()))
        }
        _ => Err(Error::BackendMismatch("adjoint")),
    }
}

/// Lie bracket; the commutator for matrices, zero on the torus.
pub fn bracket(xi: &AlgebraElement, zeta: &AlgebraElement) -> Result<AlgebraElement> {
    match (xi, zeta) {
        (AlgebraElement::Torus(a), AlgebraElement::Torus(b)) if a.len() == b.len() => {
            Ok(AlgebraElement::Torus(vec![0.0; a.len()]))
        }
        (AlgebraElement::Matrix(a), AlgebraElement::Matrix(b)) if a.shape() == b.shape() => {
            Ok(AlgebraElement::Matrix(a * b - b * a))
        }
        _ => Err(Error::BackendMismatch("bracket")),
    }
}

/// Bi-invariant inner product: Euclidean on the torus, `-tr(ξζ)` on `u(n)`.
pub fn inner(xi: &AlgebraElement, zeta: &AlgebraElement) -> Result<f64> {
    match (xi, zeta) {
        (AlgebraElement::Torus(a), AlgebraElement::Torus(b)) if a.len() == b.len() => {
            Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
        }
        (AlgebraElement::Matrix(a), AlgebraElement::Matrix(b)) if a.shape() == b.shape() => {
            Ok(-(a * b).trace().re)
        }
        _ => Err(Error::BackendMismatch("inner")),
    }
}

/// `dist_G(g, h) = 2π |log_scaled(g⁻¹h)|`.
pub fn group_distance(g: &GroupElement, h: &GroupElement) -> Result<f64> {
    let rel = g.inverse().mul(h)?;
    Ok(TWO_PI * log_scaled(&rel)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_skew(n: usize, seed: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = c(seed[k % seed.len()], seed[(k + 3) % seed.len()]);
                k += 1;
            }
        }
        (&m - m.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_g(&AlgebraElement::zeros_torus(3)), GroupElement::identity_torus(3));
        let g = exp_g(&AlgebraElement::Matrix(CMatrix::zeros(2, 2)));
        if let GroupElement::Matrix(m) = g {
            assert!((m - CMatrix::identity(2, 2)).norm() < 1e-14);
        }
    }

    #[test]
    fn torus_exp_pi() {
        assert_eq!(exp_g(&AlgebraElement::Torus(vec![PI])), GroupElement::Torus(vec![PI]));
    }

    #[test]
    fn su2_diagonal_exponential() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(0.0, PI);
        m[(1, 1)] = c(0.0, -PI);
        let GroupElement::Matrix(g) = exp_g(&AlgebraElement::Matrix(m)) else { unreachable!() };
        assert!((g - CMatrix::identity(2, 2) * c(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn torus_log_examples() {
        let a = log_scaled(&GroupElement::identity_torus(2)).unwrap();
        assert_eq!(a, AlgebraElement::Torus(vec![0.0, 0.0]));
        let a = log_scaled(&GroupElement::Torus(vec![2.0 * PI / 3.0])).unwrap();
        assert!((a.torus_coeffs().unwrap()[0] - 1.0 / 3.0).abs() < 1e-15);
        let a = log_scaled(&GroupElement::Torus(vec![PI])).unwrap();
        assert_eq!(a.torus_coeffs().unwrap()[0], 0.5);
    }

    #[test]
    fn matrix_log_tie_on_special_element() {
        let g = GroupElement::Matrix(CMatrix::identity(2, 2) * c(-1.0, 0.0));
        let a = log_scaled(&g).unwrap();
        let AlgebraElement::Matrix(m) = &a else { unreachable!() };
        assert!(m.trace().norm() < 1e-12);
        let back = exp_g(&a.scale(TWO_PI));
        let GroupElement::Matrix(b) = back else { unreachable!() };
        assert!((b + CMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn bracket_self_vanishes() {
        let x = AlgebraElement::Matrix(random_skew(3, &[0.3, -1.2, 0.7, 0.1, 2.0]));
        let b = bracket(&x, &x).unwrap();
        assert!(b.norm() < 1e-14);
        let t = AlgebraElement::Torus(vec![0.4, 1.0]);
        assert_eq!(bracket(&t, &t).unwrap(), AlgebraElement::Torus(vec![0.0, 0.0]));
    }

    #[test]
    fn torus_adjoint_trivial() {
        let g = GroupElement::from_angles(&[1.0, 5.0]);
        let x = AlgebraElement::Torus(vec![0.2, -0.3]);
        assert_eq!(adjoint(&g, &x).unwrap(), x);
    }

    #[test]
    fn backend_mismatch_is_reported() {
        let t = AlgebraElement::Torus(vec![0.0]);
        let m = AlgebraElement::Matrix(CMatrix::zeros(1, 1));
        assert!(matches!(inner(&t, &m), Err(Error::BackendMismatch(_))));
    }

    proptest! {
        #[test]
        fn matrix_exp_log_roundtrip(v in proptest::collection::vec(-1.4f64..1.4, 9)) {
            let x = AlgebraElement::Matrix(random_skew(3, &v));
            prop_assert!(x.skew_defect() < 1e-12);
            let g = exp_g(&x);
            prop_assert!(g.unitarity_defect() < 1e-10);
            let a = log_scaled(&g).unwrap();
            let GroupElement::Matrix(back) = exp_g(&a.scale(TWO_PI)) else { unreachable!() };
            let GroupElement::Matrix(gm) = &g else { unreachable!() };
            prop_assert!((back - gm).norm() < 1e-10);
        }

        #[test]
        fn torus_exp_log_roundtrip(v in proptest::collection::vec(-20.0f64..20.0, 3)) {
            let g = GroupElement::from_angles(&v);
            let a = log_scaled(&g).unwrap();
            for (x, y) in a.torus_coeffs().unwrap().iter().zip(&v) {
                prop_assert!(*x > -0.5 && *x <= 0.5);
                let diff = principal_fraction(x - y / TWO_PI);
                prop_assert!(diff.abs() < 1e-10);
            }
        }

        #[test]
        fn one_parameter_subgroup(v in proptest::collection::vec(-1.0f64..1.0, 9), s in -1.0f64..1.0, t in -1.0f64..1.0) {
            let x = AlgebraElement::Matrix(random_skew(3, &v));
            let GroupElement::Matrix(lhs) = exp_g(&x.scale(s)).mul(&exp_g(&x.scale(t))).unwrap() else { unreachable!() };
            let GroupElement::Matrix(rhs) = exp_g(&x.scale(s + t)) else { unreachable!() };
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn inner_is_ad_invariant(v in proptest::collection::vec(-1.0f64..1.0, 9), w in proptest::collection::vec(-1.0f64..1.0, 9), u in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let x = AlgebraElement::Matrix(random_skew(3, &v));
            let z = AlgebraElement::Matrix(random_skew(3, &w));
            let g = exp_g(&AlgebraElement::Matrix(random_skew(3, &u)));
            let lhs = inner(&adjoint(&g, &x).unwrap(), &adjoint(&g, &z).unwrap()).unwrap();
            prop_assert!((lhs - inner(&x, &z).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn bracket_is_ad_skew(v in proptest::collection::vec(-1.0f64..1.0, 9), w in proptest::collection::vec(-1.0f64..1.0, 9), u in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let x = AlgebraElement::Matrix(random_skew(3, &v));
            let z = AlgebraElement::Matrix(random_skew(3, &w));
            let y = AlgebraElement::Matrix(random_skew(3, &u));
            let s = inner(&bracket(&x, &z).unwrap(), &y).unwrap() + inner(&z, &bracket(&x, &y).unwrap()).unwrap();
            prop_assert!(s.abs() < 1e-12);
        }

        #[test]
        fn distance_is_a_metric_on_small_balls(a in proptest::collection::vec(-0.5f64..0.5, 2), b in proptest::collection::vec(-0.5f64..0.5, 2), cc in proptest::collection::vec(-0.5f64..0.5, 2)) {
            let (g, h, k) = (GroupElement::from_angles(&a), GroupElement::from_angles(&b), GroupElement::from_angles(&cc));
            let gh = group_distance(&g, &h).unwrap();
            prop_assert!((gh - group_distance(&h, &g).unwrap()).abs() < 1e-12);
            prop_assert!(gh <= group_distance(&g, &k).unwrap() + group_distance(&k, &h).unwrap() + 1e-12);
        }
    }
}
