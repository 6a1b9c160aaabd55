//! The linear torus model: `T^d` acting on `ℂⁿ` through an integer weight
//! matrix, with the shifted moment map `μ_a = τ_a − ½ Σ_j W_aj |z_j|²`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{principal_fraction, AlgebraElement, GroupElement};
use crate::smith::smith_normal_form;

const TWO_PI: f64 = 2.0 * PI;
const MAX_ENUM: usize = 12;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 50;
/// Coordinates below this magnitude (relative to `1 + |z|`) are off the support.
pub const SUPPORT_TOL: f64 = 1e-8;
const FIT_TOL: f64 = 1e-10;

/// A group acting linearly on `ℂⁿ`.
pub trait LinearAction {
    fn dim(&self) -> usize;
    fn act(&self, g: &GroupElement, z: &[Complex64]) -> Result<Vec<Complex64>>;
    fn infinitesimal(&self, xi: &AlgebraElement, z: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Standard representation of `U(n)` on `ℂⁿ`.
#[derive(Clone, Copy, Debug)]
pub struct MatrixAction {
    pub n: usize,
}

impl LinearAction for MatrixAction {
    fn dim(&self) -> usize {
        self.n
    }

    fn act(&self, g: &GroupElement, z: &[Complex64]) -> Result<Vec<Complex64>> {
        match g {
            GroupElement::Matrix(m) if m.nrows() == z.len() => {
                Ok((m * nalgebra::DVector::from_column_slice(z)).iter().copied().collect())
            }
            _ => Err(Error::BackendMismatch("matrix action")),
        }
    }

    fn infinitesimal(&self, xi: &AlgebraElement, z: &[Complex64]) -> Result<Vec<Complex64>> {
        match xi {
            AlgebraElement::Matrix(m) if m.nrows() == z.len() => {
                Ok((m * nalgebra::DVector::from_column_slice(z)).iter().copied().collect())
            }
            _ => Err(Error::BackendMismatch("matrix infinitesimal action")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub d: usize,
    /// `d × n`, row `a` holds the weights of the `a`-th circle factor.
    pub weights: Vec<Vec<i64>>,
    pub tau: Vec<f64>,
    pub epsilon: f64,
}

/// Support of a basic solution of `½ W s = τ`, `s ≥ 0`.
#[derive(Clone, Debug)]
struct BasicSolution {
    support: Vec<usize>,
    s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityCertificate {
    /// Minimal realizable supports checked, each spanning `ℝ^d`.
    pub vertex_supports: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub z: Vec<Complex64>,
    pub xi: Vec<f64>,
    pub defect: f64,
    pub iterations: usize,
    /// `|F(ξ_k)|` before each Newton step, followed by the final value.
    pub history: Vec<f64>,
}

/// Finite stabilizer `{x ∈ ℝ^d/ℤ^d : W_Sᵀ x ∈ ℤ^S}` in units of full turns.
#[derive(Clone, Debug, PartialEq)]
pub struct Stabilizer {
    pub d: usize,
    pub support: Vec<usize>,
    /// Nontrivial invariant factors.
    pub invariants: Vec<i64>,
    /// One generator per invariant factor, as fractions of a turn in `[0, 1)`.
    pub generators: Vec<Vec<Ratio<i64>>>,
    pub order: u64,
}

fn reduce_turn(r: Ratio<i64>) -> Ratio<i64> {
    r - r.floor()
}

impl Stabilizer {
    /// All elements, each as fractions of a turn in `[0, 1)`.
    pub fn elements(&self) -> Vec<Vec<Ratio<i64>>> {
        let mut out = vec![vec![Ratio::from_integer(0); self.d]];
        for (g, &k) in self.generators.iter().zip(&self.invariants) {
            let mut next = Vec::with_capacity(out.len() * k as usize);
            for e in &out {
                for p in 0..k {
                    next.push(
                        e.iter()
                            .zip(g)
                            .map(|(a, b)| reduce_turn(*a + *b * Ratio::from_integer(p)))
                            .collect(),
                    );
                }
            }
            out = next;
        }
        out
    }

    pub fn to_group(element: &[Ratio<i64>]) -> GroupElement {
        GroupElement::from_angles(&element.iter().map(|r| TWO_PI * ratio_f64(*r)).collect::<Vec<_>>())
    }

    pub fn generator_elements(&self) -> Vec<GroupElement> {
        self.generators.iter().map(|g| Self::to_group(g)).collect()
    }

    /// Smallest `2π |x|` over nonidentity elements, `+∞` for the trivial group.
    pub fn gap(&self) -> f64 {
        self.elements()
            .iter()
            .filter(|e| e.iter().any(|r| *r.numer() != 0))
            .map(|e| TWO_PI * e.iter().map(|r| principal_fraction(ratio_f64(*r)).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Order of the element `x` (fractions of a turn) in `ℝ^d/ℤ^d`.
pub fn element_order(x: &[Ratio<i64>]) -> u64 {
    x.iter().fold(1u64, |acc, r| {
        let den = reduce_turn(*r).denom().unsigned_abs();
        acc / gcd(acc, den) * den
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn subsets_up_to(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if (mask.count_ones() as usize) <= k {
            out.push((0..n).filter(|j| mask & (1 << j) != 0).collect());
        }
    }
    out.sort_by_key(|s: &Vec<usize>| s.len());
    out
}

impl ModelSpec {
    /// Builds a model with dimension checks only; `validate` checks the geometry.
    /// When `epsilon` is `None` the default tube radius is computed.
    pub fn new(weights: Vec<Vec<i64>>, tau: Vec<f64>, epsilon: Option<f64>) -> Result<Self> {
        let d = weights.len();
        if d == 0 || tau.len() != d {
            return Err(Error::Config("weights must have d ≥ 1 rows matching tau".into()));
        }
        let n = weights[0].len();
        if n == 0 || weights.iter().any(|r| r.len() != n) {
            return Err(Error::Config("weight rows must have equal nonzero length".into()));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("tau must be finite".into()));
        }
        let mut spec = ModelSpec { n, d, weights, tau, epsilon: epsilon.unwrap_or(f64::NAN) };
        if epsilon.is_none() {
            spec.epsilon = spec.default_epsilon().unwrap_or(f64::NAN);
        }
        Ok(spec)
    }

    /// `n = d = 1`, weight `k`, shift `τ`.
    pub fn circle(k: i64, tau: f64) -> Self {
        ModelSpec::new(vec![vec![k]], vec![tau], None).expect("valid circle model")
    }

    /// Full check: positive shift, nonempty level set, locally free action.
    pub fn validate(&self) -> Result<RegularityCertificate> {
        for (a, t) in self.tau.iter().enumerate() {
            if *t <= 0.0 {
                return Err(Error::Config(format!("model.tau[{a}] must be positive, got {t}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("model.epsilon must be positive, got {}", self.epsilon)));
        }
        let cert = self.is_regular()?;
        if cert.vertex_supports.is_empty() {
            return Err(Error::Config("model level set μ⁻¹(0) is empty".into()));
        }
        Ok(cert)
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.n, |a, j| self.weights[a][j] as f64)
    }

    /// `(Wᵀξ)_j`.
    pub fn weight_pairing(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.n).map(|j| (0..self.d).map(|a| self.weights[a][j] as f64 * xi[a]).sum()).collect()
    }

    pub fn moment_map(&self, z: &[Complex64]) -> Vec<f64> {
        (0..self.d)
            .map(|a| {
                self.tau[a] - 0.5 * (0..self.n).map(|j| self.weights[a][j] as f64 * z[j].norm_sqr()).sum::<f64>()
            })
            .collect()
    }

    /// Moment map as an algebra element.
    pub fn moment_map_element(&self, z: &[Complex64]) -> AlgebraElement {
        AlgebraElement::Torus(self.moment_map(z))
    }

    /// `dμ(z)v`.
    pub fn d_moment(&self, z: &[Complex64], v: &[Complex64]) -> Vec<f64> {
        (0..self.d)
            .map(|a| -(0..self.n).map(|j| self.weights[a][j] as f64 * (z[j].conj() * v[j]).re).sum::<f64>())
            .collect()
    }

    /// `X_ξ(z)_j = i (Wᵀξ)_j z_j`, which is also `L_z ξ`.
    pub fn infinitesimal_action(&self, xi: &[f64], z: &[Complex64]) -> Vec<Complex64> {
        let c = self.weight_pairing(xi);
        z.iter().zip(&c).map(|(zj, cj)| Complex64::new(0.0, *cj) * zj).collect()
    }

    /// Action of the torus element with angles `phi`.
    pub fn act_angles(&self, phi: &[f64], z: &[Complex64]) -> Vec<Complex64> {
        let c = self.weight_pairing(phi);
        z.iter().zip(&c).map(|(zj, cj)| Complex64::from_polar(1.0, *cj) * zj).collect()
    }

    /// Real `2n × d` matrix of `L_z` in coordinates `(Re, Im)` per component.
    pub fn l_matrix(&self, z: &[Complex64]) -> DMatrix<f64> {
        DMatrix::from_fn(2 * self.n, self.d, |r, a| {
            let j = r / 2;
            let w = self.weights[a][j] as f64;
            // i w z_j
            if r % 2 == 0 {
                -w * z[j].im
            } else {
                w * z[j].re
            }
        })
    }

    /// Basic solutions of `½ W s = τ`, `s ≥ 0`, over linearly independent
    /// column subsets of size at most `d`, with their supports.
    fn basic_solutions(&self) -> Result<Vec<BasicSolution>> {
        if self.n > MAX_ENUM || self.d > MAX_ENUM {
            return Err(Error::SizeLimit { n: self.n, d: self.d });
        }
        let w = self.weight_matrix() * 0.5;
        let tau = DVector::from_column_slice(&self.tau);
        let tau_scale = 1.0 + tau.norm();
        let mut out = Vec::new();
        for sub in subsets_up_to(self.n, self.d) {
            if sub.is_empty() {
                if tau.norm() <= FIT_TOL * tau_scale {
                    out.push(BasicSolution { support: sub, s: Vec::new() });
                }
                continue;
            }
            let cols = DMatrix::from_fn(self.d, sub.len(), |a, k| w[(a, sub[k])]);
            let svd = cols.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin <= 1e-12 * smax.max(1.0) {
                continue;
            }
            let s = svd.solve(&tau, 1e-14).map_err(|e| Error::Precondition(e.to_string()))?;
            let fit = (&cols * &s - &tau).norm();
            if fit > FIT_TOL * tau_scale {
                continue;
            }
            if s.iter().all(|x| *x > FIT_TOL * tau_scale) {
                out.push(BasicSolution { support: sub, s: s.iter().copied().collect() });
            }
        }
        Ok(out)
    }

    /// Checks that every support pattern realized on `μ⁻¹(0)` spans `ℝ^d`.
    ///
    /// A rank-deficient realizable support contains, by Carathéodory, a
    /// realizable independent subset of size below `d`, so it is enough to
    /// scan independent subsets.
    pub fn is_regular(&self) -> Result<RegularityCertificate> {
        let basics = self.basic_solutions()?;
        if let Some(bad) = basics.iter().find(|b| b.support.len() < self.d) {
            return Err(Error::NotRegular { support: bad.support.clone() });
        }
        Ok(RegularityCertificate { vertex_supports: basics.into_iter().map(|b| b.support).collect() })
    }

    /// `min |z|` over `μ⁻¹(0)`.
    pub fn min_level_radius(&self) -> Result<f64> {
        let basics = self.basic_solutions()?;
        basics
            .iter()
            .map(|b| b.s.iter().sum::<f64>().sqrt())
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))))
            .ok_or_else(|| Error::Config("model level set μ⁻¹(0) is empty".into()))
    }

    /// A point of `μ⁻¹(0)` of minimal norm among vertex points, with real
    /// nonnegative coordinates.
    pub fn level_point(&self) -> Result<Vec<Complex64>> {
        let basics = self.basic_solutions()?;
        let best = basics
            .iter()
            .min_by(|a, b| a.s.iter().sum::<f64>().total_cmp(&b.s.iter().sum::<f64>()))
            .ok_or_else(|| Error::Config("model level set μ⁻¹(0) is empty".into()))?;
        let mut z = vec![Complex64::new(0.0, 0.0); self.n];
        for (j, s) in best.support.iter().zip(&best.s) {
            z[*j] = Complex64::new(s.sqrt(), 0.0);
        }
        Ok(z)
    }

    pub fn default_epsilon(&self) -> Result<f64> {
        Ok(0.5 * self.min_level_radius()?)
    }

    pub fn support_of(&self, z: &[Complex64]) -> Vec<usize> {
        let scale = 1.0 + z.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        (0..self.n).filter(|&j| z[j].norm() > SUPPORT_TOL * scale).collect()
    }

    pub fn stabilizer_of_support(&self, support: &[usize]) -> Result<Stabilizer> {
        let a: Vec<Vec<i64>> = support.iter().map(|&j| (0..self.d).map(|r| self.weights[r][j]).collect()).collect();
        let snf = smith_normal_form(&a, self.d);
        if snf.diagonal.len() < self.d {
            return Err(Error::NotLocallyFree { support: support.to_vec() });
        }
        let mut invariants = Vec::new();
        let mut generators = Vec::new();
        for (i, &di) in snf.diagonal.iter().enumerate() {
            if di > 1 {
                invariants.push(di);
                generators.push((0..self.d).map(|r| reduce_turn(Ratio::new(snf.v[r][i], di))).collect());
            }
        }
        let order = invariants.iter().map(|&x| x as u64).product();
        Ok(Stabilizer { d: self.d, support: support.to_vec(), invariants, generators, order })
    }

    /// Stabilizer of a point near the level set.
    pub fn stabilizer(&self, z: &[Complex64]) -> Result<Stabilizer> {
        self.stabilizer_of_support(&self.support_of(z))
    }

    /// Minimal distance between distinct stabilizer elements over the level set;
    /// `+∞` when every stabilizer is trivial.
    pub fn min_stabilizer_gap(&self) -> Result<f64> {
        let cert = self.is_regular()?;
        let mut gap = f64::INFINITY;
        for sup in &cert.vertex_supports {
            gap = gap.min(self.stabilizer_of_support(sup)?.gap());
        }
        Ok(gap)
    }

    /// Writes `x = z + J L_z ξ` with `z ∈ μ⁻¹(0)`.
    ///
    /// In the flat model `x_j = (1 − (Wᵀξ)_j) z_j`, so the level-set condition
    /// becomes `½ Σ_j W_aj |x_j|² / (1 − (Wᵀξ)_j)² = τ_a`, solved by Newton in ξ.
    pub fn project_to_level(&self, x: &[Complex64]) -> Result<Projection> {
        self.project_from(x, &vec![0.0; self.d])
    }

    pub fn project_from(&self, x: &[Complex64], xi0: &[f64]) -> Result<Projection> {
        let r2: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
        let mut xi = xi0.to_vec();
        let mut history = Vec::new();
        let residual = |xi: &[f64]| -> Option<(DVector<f64>, DMatrix<f64>)> {
            let c = self.weight_pairing(xi);
            if c.iter().zip(&r2).any(|(cj, rj)| *rj > 0.0 && 1.0 - cj <= 0.0) {
                return None;
            }
            let f = DVector::from_fn(self.d, |a, _| {
                0.5 * (0..self.n)
                    .map(|j| self.weights[a][j] as f64 * r2[j] / (1.0 - c[j]).powi(2))
                    .sum::<f64>()
                    - self.tau[a]
            });
            let jac = DMatrix::from_fn(self.d, self.d, |a, b| {
                (0..self.n)
                    .map(|j| self.weights[a][j] as f64 * self.weights[b][j] as f64 * r2[j] / (1.0 - c[j]).powi(3))
                    .sum::<f64>()
            });
            Some((f, jac))
        };
        let scale = 1.0 + self.tau.iter().map(|t| t.abs()).fold(0.0, f64::max);
        let mut iterations = 0;
        loop {
            let Some((f, jac)) = residual(&xi) else {
                return Err(Error::OutsideTube { distance: f64::NAN, epsilon: self.epsilon });
            };
            let fnorm = f.norm();
            history.push(fnorm);
            if fnorm <= NEWTON_TOL * scale {
                break;
            }
            if iterations >= NEWTON_MAX {
                return Err(Error::NewtonDiverged { iterations, defect: fnorm });
            }
            let step = jac
                .lu()
                .solve(&f)
                .ok_or(Error::OutsideTube { distance: f64::NAN, epsilon: self.epsilon })?;
            for a in 0..self.d {
                xi[a] -= step[a];
            }
            iterations += 1;
        }
        let c = self.weight_pairing(&xi);
        let z: Vec<Complex64> = x.iter().zip(&c).map(|(xj, cj)| xj / (1.0 - cj)).collect();
        let jl = self.infinitesimal_action(&xi, &z).iter().map(|v| Complex64::new(0.0, 1.0) * v).collect::<Vec<_>>();
        let defect = (0..self.n).map(|j| (x[j] - z[j] - jl[j]).norm_sqr()).sum::<f64>().sqrt();
        let distance = jl.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if distance > self.epsilon {
            return Err(Error::OutsideTube { distance, epsilon: self.epsilon });
        }
        Ok(Projection { z, xi, defect, iterations, history })
    }
}

impl LinearAction for ModelSpec {
    fn dim(&self) -> usize {
        self.n
    }

    fn act(&self, g: &GroupElement, z: &[Complex64]) -> Result<Vec<Complex64>> {
        match g {
            GroupElement::Torus(phi) if phi.len() == self.d => Ok(self.act_angles(phi, z)),
            _ => Err(Error::BackendMismatch("torus action")),
        }
    }

    fn infinitesimal(&self, xi: &AlgebraElement, z: &[Complex64]) -> Result<Vec<Complex64>> {
        match xi {
            AlgebraElement::Torus(c) if c.len() == self.d => Ok(self.infinitesimal_action(c, z)),
            _ => Err(Error::BackendMismatch("torus infinitesimal action")),
        }
    }
}

/// `ω(v, w) = Σ_j Im(conj(v_j) w_j)` for `ω = Σ dx∧dy`.
pub fn omega(v: &[Complex64], w: &[Complex64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (a.conj() * b).im).sum()
}

/// Flat real inner product on `ℂⁿ`.
pub fn real_inner(v: &[Complex64], w: &[Complex64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Primitive `λ = ½ Σ (x dy − y dx)` evaluated on `v` at `z`.
pub fn liouville(z: &[Complex64], v: &[Complex64]) -> f64 {
    0.5 * omega(z, v)
}

/// Smallest singular value of `L_z`.
pub fn l_min_singular(spec: &ModelSpec, z: &[Complex64]) -> f64 {
    spec.l_matrix(z).svd(false, false).singular_values.min()
}
