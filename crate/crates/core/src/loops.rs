//! Loops in `ℂⁿ × 𝔤` over the circle, critical loops, the slice Hessian and
//! the local action.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{canonical_based_gauge, LoopGauge};
use crate::lie::{principal_fraction, AlgebraElement, GroupElement};
use crate::model::{element_order, ratio_f64, ModelSpec, Stabilizer};
use crate::spectral::{kahan_sum, spectral_diff_matrix, Fourier};

const TWO_PI: f64 = 2.0 * PI;
/// Tolerance on `|μ(z₀)|` (relative to `1 + |τ|`) for a critical base point.
const LEVEL_TOL: f64 = 1e-10;
/// Fractions of a turn closer than this are the same stabilizer element.
const SNAP_TOL: f64 = 1e-9;
/// Stabilizer elements whose distances to the holonomy differ by less than
/// this are treated as tied.
const TIE_TOL: f64 = 1e-12;
const KERNEL_TOL: f64 = 1e-8;

/// `(x, η)` sampled at `N_θ` equispaced points of the circle.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugedLoop {
    pub x: Vec<Vec<Complex64>>,
    pub eta: Vec<AlgebraElement>,
}

impl GaugedLoop {
    pub fn new(x: Vec<Vec<Complex64>>, eta: Vec<AlgebraElement>) -> Result<Self> {
        if x.len() != eta.len() || x.is_empty() {
            return Err(Error::GridMismatch(format!("loop has {} points but {} connection samples", x.len(), eta.len())));
        }
        Ok(GaugedLoop { x, eta })
    }

    pub fn torus(x: Vec<Vec<Complex64>>, eta: Vec<Vec<f64>>) -> Self {
        GaugedLoop { x, eta: eta.into_iter().map(AlgebraElement::Torus).collect() }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Torus connection as `η[k][a]`.
    pub fn eta_torus(&self) -> Result<Vec<Vec<f64>>> {
        self.eta
            .iter()
            .map(|e| e.torus_coeffs().map(|c| c.to_vec()).ok_or(Error::BackendMismatch("torus loop expected")))
            .collect()
    }
}

fn turns_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| principal_fraction(x - y).powi(2)).sum::<f64>().sqrt()
}

/// `Υ̃(y) = (ẋ + X_η x, μ(x))` sampled on the loop grid.
#[derive(Clone, Debug)]
pub struct LoopResidual {
    pub upsilon: Vec<Vec<Complex64>>,
    pub mu: Vec<Vec<f64>>,
    pub sup: f64,
    pub l2: f64,
}

/// Spectral θ-derivative of the loop's `ℂⁿ` part.
pub fn loop_derivative(x: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let nth = x.len();
    let n = x[0].len();
    let fourier = Fourier::new(nth);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; nth];
    for j in 0..n {
        let col: Vec<Complex64> = x.iter().map(|p| p[j]).collect();
        for (k, v) in fourier.derivative(&col).into_iter().enumerate() {
            out[k][j] = v;
        }
    }
    out
}

pub fn loop_residual(y: &GaugedLoop, spec: &ModelSpec) -> Result<LoopResidual> {
    let eta = y.eta_torus()?;
    let nth = y.len();
    let h = TWO_PI / nth as f64;
    let dx = loop_derivative(&y.x);
    let mut upsilon = Vec::with_capacity(nth);
    let mut mu = Vec::with_capacity(nth);
    let (mut sup, mut sq) = (0.0f64, 0.0f64);
    for k in 0..nth {
        let xe = spec.infinitesimal_action(&eta[k], &y.x[k]);
        let u: Vec<Complex64> = dx[k].iter().zip(&xe).map(|(a, b)| a + b).collect();
        let m = spec.moment_map(&y.x[k]);
        let nu = u.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let nm = m.iter().map(|v| v * v).sum::<f64>();
        sup = sup.max(nu.sqrt()).max(nm.sqrt());
        sq += h * (nu + nm);
        upsilon.push(u);
        mu.push(m);
    }
    Ok(LoopResidual { upsilon, mu, sup, l2: sq.sqrt() })
}

/// `D_yΥ̃(v, ξ) = (v̇ + X_η v + X_ξ x, dμ_x v)` for a torus loop.
pub fn linearized_residual(
    y: &GaugedLoop,
    spec: &ModelSpec,
    v: &[Vec<Complex64>],
    xi: &[Vec<f64>],
) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<f64>>)> {
    let eta = y.eta_torus()?;
    if v.len() != y.len() || xi.len() != y.len() {
        return Err(Error::GridMismatch("tangent vector and loop differ in length".into()));
    }
    let dv = loop_derivative(v);
    let mut first = Vec::with_capacity(y.len());
    let mut second = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let a = spec.infinitesimal_action(&eta[k], &v[k]);
        let b = spec.infinitesimal_action(&xi[k], &y.x[k]);
        first.push((0..spec.n).map(|j| dv[k][j] + a[j] + b[j]).collect());
        second.push(spec.d_moment(&y.x[k], &v[k]));
    }
    Ok((first, second))
}

/// A critical loop `(exp(−θη₀)z₀, η₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalLoop {
    pub z0: Vec<Complex64>,
    pub eta0: Vec<f64>,
    /// `exp(−2πη₀)` as exact fractions of a turn in `[0, 1)`.
    pub holonomy: Vec<Ratio<i64>>,
    pub order: u64,
    pub stabilizer: Stabilizer,
}

impl CriticalLoop {
    /// Checks `μ(z₀) = 0` and snaps the holonomy onto the stabilizer of `z₀`.
    pub fn new(spec: &ModelSpec, z0: Vec<Complex64>, eta0: Vec<f64>) -> Result<Self> {
        if z0.len() != spec.n || eta0.len() != spec.d {
            return Err(Error::Precondition("critical loop data has wrong dimensions".into()));
        }
        let scale = 1.0 + spec.tau.iter().map(|t| t.abs()).fold(0.0, f64::max);
        let mu = spec.moment_map(&z0);
        let mu_norm = mu.iter().map(|m| m * m).sum::<f64>().sqrt();
        if mu_norm > LEVEL_TOL * scale {
            return Err(Error::Precondition(format!("base point is off the level set, |μ| = {mu_norm:.3e}")));
        }
        let stabilizer = spec.stabilizer(&z0)?;
        let hol: Vec<f64> = eta0.iter().map(|e| -e).collect();
        let holonomy = stabilizer
            .elements()
            .into_iter()
            .find(|e| turns_distance(&e.iter().map(|r| ratio_f64(*r)).collect::<Vec<_>>(), &hol) < SNAP_TOL)
            .ok_or_else(|| Error::Precondition("holonomy of η₀ is not in the stabilizer of z₀".into()))?;
        let order = element_order(&holonomy);
        Ok(CriticalLoop { z0, eta0, holonomy, order, stabilizer })
    }

    pub fn holonomy_element(&self) -> GroupElement {
        Stabilizer::to_group(&self.holonomy)
    }

    /// `z(θ) = exp(−θη₀)·z₀`.
    pub fn point(&self, spec: &ModelSpec, theta: f64) -> Vec<Complex64> {
        let phi: Vec<f64> = self.eta0.iter().map(|e| -theta * e).collect();
        spec.act_angles(&phi, &self.z0)
    }

    pub fn sample(&self, spec: &ModelSpec, ntheta: usize) -> GaugedLoop {
        let x = (0..ntheta).map(|k| self.point(spec, TWO_PI * k as f64 / ntheta as f64)).collect();
        GaugedLoop::torus(x, vec![self.eta0.clone(); ntheta])
    }
}

/// `|𝒢(y)|`, which for a torus is the order of the stabilizer of `z₀`.
pub fn isotropy_order(c: &CriticalLoop) -> u64 {
    c.stabilizer.order.max(1)
}

/// Distances reported by [`nearest_critical`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub sup_dx: f64,
    pub sup_mu: f64,
    pub eps_crit: f64,
    /// `dist(k, Hol_η)` in radians.
    pub holonomy_distance: f64,
    /// `|η̃ − η₀|` with `η̃ = −log_scaled(Hol_η)`.
    pub eta_offset: f64,
    /// `|x(0) − z₀|`.
    pub projection_distance: f64,
}

#[derive(Clone, Debug)]
pub struct NearestCritical {
    pub critical: CriticalLoop,
    /// `g(θ) = h_η(θ) exp(−θη₀)`; its drift is generally fractional.
    pub gauge: LoopGauge,
    pub report: DistanceReport,
}

/// Default threshold: a quarter of the minimal stabilizer gap, capped by the
/// tube radius so that the projection of `x(0)` is defined.
pub fn default_eps_crit(spec: &ModelSpec) -> Result<f64> {
    Ok((spec.min_stabilizer_gap()? / 4.0).min(spec.epsilon))
}

pub fn nearest_critical(y: &GaugedLoop, spec: &ModelSpec, eps_crit: Option<f64>) -> Result<NearestCritical> {
    let eps_crit = match eps_crit {
        Some(e) => e,
        None => default_eps_crit(spec)?,
    };
    let res = loop_residual(y, spec)?;
    let sup_dx = res.upsilon.iter().map(|u| u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let sup_mu = res.mu.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    if sup_dx > eps_crit || sup_mu > eps_crit {
        return Err(Error::NotNearCritical(format!(
            "sup|D_θx| = {sup_dx:.3e}, sup|μ| = {sup_mu:.3e}, threshold {eps_crit:.3e}"
        )));
    }
    let (h, eta_tilde) = canonical_based_gauge(&y.eta)?;
    let eta_tilde = eta_tilde.torus_coeffs().expect("torus").to_vec();
    let hol: Vec<f64> = eta_tilde.iter().map(|e| -e).collect();
    let proj = spec
        .project_to_level(&y.x[0])
        .map_err(|e| Error::NotNearCritical(format!("x(0) cannot be projected to the level set: {e}")))?;
    let z0 = proj.z;
    let stab = spec.stabilizer(&z0)?;
    let mut ranked: Vec<(f64, Vec<Ratio<i64>>)> = stab
        .elements()
        .into_iter()
        .map(|e| (turns_distance(&e.iter().map(|r| ratio_f64(*r)).collect::<Vec<_>>(), &hol), e))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    if ranked.len() > 1 && (ranked[1].0 - ranked[0].0).abs() <= TIE_TOL {
        return Err(Error::AmbiguousStabilizer);
    }
    let (dist, k) = ranked.swap_remove(0);
    // exp(−2πη₀) = k with η₀ the representative nearest to η̃
    let eta0: Vec<f64> = k
        .iter()
        .zip(&eta_tilde)
        .map(|(r, et)| {
            let base = -ratio_f64(*r);
            base + (et - base).round()
        })
        .collect();
    let eta_offset = eta0.iter().zip(&eta_tilde).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let projection_distance = y.x[0].iter().zip(&z0).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let critical = CriticalLoop::new(spec, z0, eta0.clone())?;
    let LoopGauge::Torus { periodic, drift } = h else {
        return Err(Error::BackendMismatch("torus gauge expected"));
    };
    let drift = drift.iter().zip(&eta0).map(|(w, e)| w - e).collect();
    Ok(NearestCritical {
        critical,
        gauge: LoopGauge::Torus { periodic, drift },
        report: DistanceReport {
            sup_dx,
            sup_mu,
            eps_crit,
            holonomy_distance: TWO_PI * dist,
            eta_offset,
            projection_distance,
        },
    })
}

/// `−∮x*λ + ∮⟨μ(x), η⟩` on the loop as given, without straightening.
pub fn naive_action(y: &GaugedLoop, spec: &ModelSpec) -> Result<f64> {
    let eta = y.eta_torus()?;
    let h = TWO_PI / y.len() as f64;
    let dx = loop_derivative(&y.x);
    let mut terms = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let lambda: f64 = 0.5 * y.x[k].iter().zip(&dx[k]).map(|(x, v)| (x.conj() * v).im).sum::<f64>();
        let mu = spec.moment_map(&y.x[k]);
        let pair: f64 = mu.iter().zip(&eta[k]).map(|(m, e)| m * e).sum();
        terms.push(h * (pair - lambda));
    }
    Ok(kahan_sum(terms))
}

/// Local action of a loop near a critical loop.
///
/// Straightening by the gauge `g` of [`nearest_critical`] turns the capped
/// action into `−½∮Im⟨x, D_θx⟩ + ⟨τ, ∮g·η⟩` with `∮g·η = 2π(η̃ − η₀)`. Both
/// terms are first order in the distance to the critical set, so the result
/// keeps relative accuracy where the naive form would cancel.
pub fn local_action(y: &GaugedLoop, spec: &ModelSpec, eps_crit: Option<f64>) -> Result<f64> {
    let nc = nearest_critical(y, spec, eps_crit)?;
    let LoopGauge::Torus { drift, .. } = &nc.gauge else {
        return Err(Error::BackendMismatch("torus gauge expected"));
    };
    let eta = y.eta_torus()?;
    let nth = y.len();
    let h = TWO_PI / nth as f64;
    let dx = loop_derivative(&y.x);
    let mut terms = Vec::with_capacity(nth + spec.d);
    for k in 0..nth {
        let c = spec.weight_pairing(&eta[k]);
        let im: f64 = (0..spec.n)
            .map(|j| (y.x[k][j].conj() * dx[k][j]).im + c[j] * y.x[k][j].norm_sqr())
            .sum();
        terms.push(-0.5 * h * im);
    }
    for a in 0..spec.d {
        // 2π(η̃ − η₀) = ∮η + 2π·drift(g)
        let mean = kahan_sum(eta.iter().map(|e| e[a])) / nth as f64;
        terms.push(TWO_PI * spec.tau[a] * (mean + drift[a]));
    }
    Ok(kahan_sum(terms))
}

/// Minimal `c₀` with `𝓛 ≤ c₀(‖d_ηu‖² + c₁‖μ‖²)` at one time.
pub fn isoperimetric_constant(action: f64, d_norm_sq: f64, mu_norm_sq: f64, c1: f64) -> f64 {
    let denom = d_norm_sq + c1 * mu_norm_sq;
    if action <= 0.0 {
        0.0
    } else if denom > 0.0 {
        action / denom
    } else {
        f64::INFINITY
    }
}

/// Slice-restricted Hessian at a critical loop.
#[derive(Clone, Debug)]
pub struct HessianPackage {
    pub ntheta: usize,
    /// Operator on grid coordinates `(Re v_j, Im v_j, ξ_a)`, each a block of `N_θ` values.
    pub h: DMatrix<f64>,
    /// Slice rows followed by one Nyquist row per component block.
    pub s: DMatrix<f64>,
    /// Orthonormal basis of `ker S` as columns.
    pub basis: DMatrix<f64>,
    pub h_slice: DMatrix<f64>,
    pub symmetry_defect: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `‖H_slice v − λv‖` for each eigenpair.
    pub residuals: Vec<f64>,
    /// Fraction of each eigenvector carried by coordinates off the support of `z₀`.
    pub off_support_weight: Vec<f64>,
    pub kernel_dim: usize,
    pub twisted_sector_dim: usize,
    pub holonomy_order: u64,
}

impl HessianPackage {
    /// Eigenvalues with `|λ| ≤ bound`.
    pub fn eigenvalues_within(&self, bound: f64) -> Vec<f64> {
        self.eigenvalues.iter().copied().filter(|l| l.abs() <= bound).collect()
    }

    /// Largest `dist(mλ, ℤ)` over eigenvalues with `|λ| ≤ bound`, optionally
    /// only over eigenvectors living off the support of `z₀`.
    pub fn grading_defect(&self, bound: f64, off_support_only: bool) -> f64 {
        let m = self.holonomy_order as f64;
        self.eigenvalues
            .iter()
            .zip(&self.off_support_weight)
            .filter(|(l, w)| l.abs() <= bound && (!off_support_only || **w > 0.99))
            .map(|(l, _)| (m * l - (m * l).round()).abs())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues grouped within `tol`, as `(value, multiplicity)`.
    pub fn multiplicities(&self, tol: f64) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &l in &self.eigenvalues {
            match out.last_mut() {
                Some((v, c)) if (l - *v).abs() <= tol => *c += 1,
                _ => out.push((l, 1)),
            }
        }
        out
    }
}

pub const SV_THRESHOLD: f64 = 1e-10;

pub fn hessian_assemble(c: &CriticalLoop, spec: &ModelSpec, ntheta: usize) -> Result<HessianPackage> {
    hessian_assemble_with(c, spec, ntheta, SV_THRESHOLD)
}

/// Assembles `Hess(v, ξ) = (J(v̇ + X_{η₀}v + X_ξ z), dμ_z v)` and the slice
/// condition `dμ_z(Jv) + ξ̇ = 0`, then diagonalizes on `ker S`.
pub fn hessian_assemble_with(c: &CriticalLoop, spec: &ModelSpec, ntheta: usize, sv_threshold: f64) -> Result<HessianPackage> {
    if ntheta < 64 || ntheta % 2 != 0 {
        return Err(Error::InvalidGrid(format!("Hessian needs an even N_θ ≥ 64, got {ntheta}")));
    }
    let (n, d, nth) = (spec.n, spec.d, ntheta);
    let blocks = 2 * n + d;
    let dim = blocks * nth;
    let re = |j: usize| j * nth;
    let im = |j: usize| (n + j) * nth;
    let xi = |a: usize| (2 * n + a) * nth;
    let dm = spectral_diff_matrix(nth);
    let cw = spec.weight_pairing(&c.eta0);
    let z: Vec<Vec<Complex64>> = (0..nth).map(|k| c.point(spec, TWO_PI * k as f64 / nth as f64)).collect();

    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..n {
        for k in 0..nth {
            h[(re(j) + k, re(j) + k)] = -cw[j];
            h[(im(j) + k, im(j) + k)] = -cw[j];
            for l in 0..nth {
                h[(re(j) + k, im(j) + l)] = -dm[(k, l)];
                h[(im(j) + k, re(j) + l)] = dm[(k, l)];
            }
            for a in 0..d {
                let w = spec.weights[a][j] as f64;
                let (zr, zi) = (z[k][j].re, z[k][j].im);
                h[(re(j) + k, xi(a) + k)] = -w * zr;
                h[(im(j) + k, xi(a) + k)] = -w * zi;
                h[(xi(a) + k, re(j) + k)] = -w * zr;
                h[(xi(a) + k, im(j) + k)] = -w * zi;
            }
        }
    }

    let mut s = DMatrix::<f64>::zeros(d * nth + blocks, dim);
    for a in 0..d {
        for k in 0..nth {
            let row = a * nth + k;
            for j in 0..n {
                let w = spec.weights[a][j] as f64;
                s[(row, re(j) + k)] = -w * z[k][j].im;
                s[(row, im(j) + k)] = w * z[k][j].re;
            }
            for l in 0..nth {
                s[(row, xi(a) + l)] = dm[(k, l)];
            }
        }
    }
    for b in 0..blocks {
        for k in 0..nth {
            s[(d * nth + b, b * nth + k)] = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
    }

    let basis = null_space(&s, sv_threshold);
    let h_slice = basis.transpose() * &h * &basis;
    let symmetry_defect = (&h_slice - h_slice.transpose()).amax();
    let sym = (&h_slice + h_slice.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
    let support = spec.support_of(&c.z0);
    let mut eigenvalues = Vec::with_capacity(order.len());
    let mut residuals = Vec::with_capacity(order.len());
    let mut off_support_weight = Vec::with_capacity(order.len());
    for &p in &order {
        let lam = eig.eigenvalues[p];
        let v = eig.eigenvectors.column(p);
        residuals.push((&h_slice * v - v * lam).norm());
        let full = &basis * v;
        let mut off = 0.0;
        for j in (0..n).filter(|j| !support.contains(j)) {
            for k in 0..nth {
                off += full[re(j) + k].powi(2) + full[im(j) + k].powi(2);
            }
        }
        off_support_weight.push(off / full.norm_squared());
        eigenvalues.push(lam);
    }
    let kernel_dim = eigenvalues.iter().filter(|l| l.abs() < KERNEL_TOL).count();
    let fixed = cw.iter().filter(|x| (*x - x.round()).abs() < SNAP_TOL).count();
    let twisted_sector_dim = (2 * fixed).saturating_sub(2 * d);
    Ok(HessianPackage {
        ntheta,
        h,
        s,
        basis,
        h_slice,
        symmetry_defect,
        eigenvalues,
        residuals,
        off_support_weight,
        kernel_dim,
        twisted_sector_dim,
        holonomy_order: c.order,
    })
}

/// Orthonormal basis of `ker S`: the complement of the row space, read off
/// the unit eigenvalues of `I − U Uᵀ` with `U` the significant left singular
/// vectors of `Sᵀ`.
pub(crate) fn null_space(s: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let cols = s.ncols();
    let svd = s.transpose().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] >= threshold * smax.max(1.0))
        .collect();
    let mut p = DMatrix::<f64>::identity(cols, cols);
    for &i in &keep {
        let col = u.column(i);
        p -= &col * col.transpose();
    }
    let eig = SymmetricEigen::new(p);
    let idx: Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let mut basis = DMatrix::<f64>::zeros(cols, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    basis
}
