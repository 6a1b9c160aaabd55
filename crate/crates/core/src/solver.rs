//! Gauss–Newton relaxation of the temporal vortex equations on the grid.
//!
//! Unknowns are `(u, η)` on rows `1..N_t`; row 0 is held fixed. At `t = T`
//! the last row is either replaced by its nearest critical loop before each
//! outer iteration (and then held fixed) or left free with a penalty on
//! `Υ̃(y(T))`. Each step solves the linearized least-squares problem by
//! preconditioned CGLS to a relative tolerance and is accepted only if it
//! lowers `½‖R‖²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{vortex_residual, CylinderField, MetricSpec};
use crate::loops::{loop_residual, nearest_critical};
use crate::model::ModelSpec;
use crate::spectral::{fd4_stencil, Fourier};

const I: Complex64 = Complex64::new(0.0, 1.0);
const MAX_HALVINGS: usize = 30;
/// An accepted step lowering `½‖R‖²` by less than this fraction ends the run.
const STALL_FRACTION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum BoundaryMode {
    ProjectToCritical,
    /// Weight on `‖Υ̃(y(T))‖²`; `None` means `e^{2bT}`.
    Penalty { weight: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub tol_residual: f64,
    pub max_iter: usize,
    pub boundary: BoundaryMode,
    /// Initial step length factor in `(0, 1]`.
    pub damping: f64,
    pub max_inner: usize,
    /// Relative tolerance of the inner least-squares solve.
    pub inner_tol: f64,
    pub eps_crit: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_residual: 1e-8,
            max_iter: 30,
            boundary: BoundaryMode::ProjectToCritical,
            damping: 1.0,
            max_inner: 2000,
            inner_tol: 1e-2,
            eps_crit: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::Config("solve.tol_residual must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("solve.damping must lie in (0, 1]".into()));
        }
        if let BoundaryMode::Penalty { weight: Some(w) } = self.boundary {
            if !(w > 0.0) {
                return Err(Error::Config("solve.boundary.weight must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub iterations: usize,
    /// Sup residual before each outer iteration and after the last one.
    pub residual_history: Vec<f64>,
    /// `½‖R‖²` after each accepted step, starting from the initial iterate.
    pub objective_history: Vec<f64>,
    pub final_residual_sup: f64,
    pub final_residual_l2: f64,
    pub boundary_mode: BoundaryMode,
    /// Sup residual over four equal t-bands.
    pub band_residuals: Vec<f64>,
    pub inner_iterations: Vec<usize>,
}

/// Jacobian of the raw residual `(r₁, r₂)` at a field.
///
/// Tangent vectors and residuals are flat real vectors: `u` as `(re, im)`
/// pairs in field order, followed by `η` in field order.
pub struct LinearizedOperator<'a> {
    field: &'a CylinderField,
    spec: &'a ModelSpec,
    fourier: Fourier,
    /// `(Wᵀη)_j` per node.
    c: Vec<f64>,
    weight: Vec<f64>,
}

fn split(field: &CylinderField, x: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    let nu = field.u.len();
    let u = (0..nu).map(|q| Complex64::new(x[2 * q], x[2 * q + 1])).collect();
    (u, x[2 * nu..].to_vec())
}

fn join(u: &[Complex64], eta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * u.len() + eta.len());
    for z in u {
        out.push(z.re);
        out.push(z.im);
    }
    out.extend_from_slice(eta);
    out
}

/// Flat real state of a field.
pub fn field_state(field: &CylinderField) -> Vec<f64> {
    join(&field.u, &field.eta)
}

fn set_state(field: &mut CylinderField, x: &[f64]) {
    let (u, eta) = split(field, x);
    field.u = u;
    field.eta = eta;
}

/// `t`-derivative (or its transpose) of every column of node data.
fn apply_dt<T>(field: &CylinderField, v: &[T], comps: usize, transpose: bool) -> Vec<T>
where
    T: Copy + Default + std::ops::Mul<f64, Output = T> + std::ops::AddAssign,
{
    let (nt, nth) = (field.grid.nt, field.grid.ntheta);
    let scale = 1.0 / (12.0 * field.grid.ht());
    let mut out = vec![T::default(); v.len()];
    for i in 0..nt {
        let (s, c) = fd4_stencil(i, nt);
        for (m, cm) in c.iter().enumerate() {
            if *cm == 0.0 {
                continue;
            }
            let w = cm * scale;
            let (src, dst) = if transpose { (i, s + m) } else { (s + m, i) };
            for k in 0..nth {
                for j in 0..comps {
                    let val = v[(src * nth + k) * comps + j] * w;
                    out[(dst * nth + k) * comps + j] += val;
                }
            }
        }
    }
    out
}

fn apply_dtheta(field: &CylinderField, fourier: &Fourier, v: &[Complex64], comps: usize) -> Vec<Complex64> {
    crate::fields::d_theta_complex(&field.grid, fourier, v, comps)
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(field: &'a CylinderField, spec: &'a ModelSpec, metric: &MetricSpec) -> Result<Self> {
        if !field.is_temporal() {
            return Err(Error::NotTemporal);
        }
        field.check_model(spec)?;
        let nodes = field.grid.nodes();
        let mut c = Vec::with_capacity(nodes * spec.n);
        for p in 0..nodes {
            c.extend(spec.weight_pairing(&field.eta[p * spec.d..(p + 1) * spec.d]));
        }
        let weight = (0..field.grid.nt).map(|i| metric.weight(field.grid.t(i))).collect();
        Ok(LinearizedOperator { field, spec, fourier: Fourier::new(field.grid.ntheta), c, weight })
    }

    pub fn dim(&self) -> usize {
        2 * self.field.u.len() + self.field.eta.len()
    }

    fn row_weight(&self, p: usize) -> f64 {
        self.weight[p / self.field.grid.ntheta]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let f = self.field;
        let (n, d) = (f.n, f.d);
        let (du, deta) = split(f, x);
        let mut r1 = apply_dt(f, &du, n, false);
        let dth = apply_dtheta(f, &self.fourier, &du, n);
        let mut r2 = apply_dt(f, &deta, d, false);
        for p in 0..f.grid.nodes() {
            let cx = self.spec.weight_pairing(&deta[p * d..(p + 1) * d]);
            let u = &f.u[p * n..(p + 1) * n];
            let dmu = self.spec.d_moment(u, &du[p * n..(p + 1) * n]);
            for j in 0..n {
                let q = p * n + j;
                r1[q] += I * dth[q] - self.c[q] * du[q] - cx[j] * u[j];
            }
            let w = self.row_weight(p);
            for a in 0..d {
                r2[p * d + a] += w * dmu[a];
            }
        }
        join(&r1, &r2)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let f = self.field;
        let (n, d) = (f.n, f.d);
        let (rho1, rho2) = split(f, y);
        let mut gu = apply_dt(f, &rho1, n, true);
        // i∂_θ is symmetric
        let dth = apply_dtheta(f, &self.fourier, &rho1, n);
        let mut geta = apply_dt(f, &rho2, d, true);
        for p in 0..f.grid.nodes() {
            let u = &f.u[p * n..(p + 1) * n];
            let w = self.row_weight(p);
            for j in 0..n {
                let q = p * n + j;
                let wr: f64 = (0..d).map(|a| self.spec.weights[a][j] as f64 * rho2[p * d + a]).sum();
                gu[q] += I * dth[q] - self.c[q] * rho1[q] - w * wr * u[j];
                let proj = (u[j].conj() * rho1[q]).re;
                for a in 0..d {
                    geta[p * d + a] -= self.spec.weights[a][j] as f64 * proj;
                }
            }
        }
        join(&gu, &geta)
    }
}

pub fn linearized_operator<'a>(field: &'a CylinderField, spec: &'a ModelSpec, metric: &MetricSpec) -> Result<LinearizedOperator<'a>> {
    LinearizedOperator::new(field, spec, metric)
}

/// Scaled least-squares system: main residual rows times `√(h_t h_θ)`,
/// plus penalty rows on the last loop.
struct System<'a> {
    op: LinearizedOperator<'a>,
    free: Vec<bool>,
    scale: f64,
    penalty: Option<f64>,
}

impl System<'_> {
    fn mask(&self, x: &mut [f64]) {
        let f = self.op.field;
        let (n, d, nth) = (f.n, f.d, f.grid.ntheta);
        let nu = f.u.len();
        for i in 0..f.grid.nt {
            if self.free[i] {
                continue;
            }
            for k in 0..nth {
                let p = i * nth + k;
                x[2 * p * n..2 * (p + 1) * n].iter_mut().for_each(|v| *v = 0.0);
                x[2 * nu + p * d..2 * nu + (p + 1) * d].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.op.apply(x).into_iter().map(|v| v * self.scale).collect();
        if let Some(w) = self.penalty {
            out.extend(penalty_linear(self.op.field, self.op.spec, &self.op.fourier, x).into_iter().map(|v| v * w));
        }
        out
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let m = self.op.dim();
        let main: Vec<f64> = y[..m].iter().map(|v| v * self.scale).collect();
        let mut g = self.op.apply_transpose(&main);
        if let Some(w) = self.penalty {
            let pen: Vec<f64> = y[m..].iter().map(|v| v * w).collect();
            for (a, b) in g.iter_mut().zip(penalty_transpose(self.op.field, self.op.spec, &self.op.fourier, &pen)) {
                *a += b;
            }
        }
        self.mask(&mut g);
        g
    }

    /// Approximate column norms squared of the scaled Jacobian.
    fn diagonal(&self) -> Vec<f64> {
        let f = self.op.field;
        let (n, d, nth) = (f.n, f.d, f.grid.ntheta);
        let nt = f.grid.nt;
        let h12 = 12.0 * f.grid.ht();
        let mut dt_col = vec![0.0; nt];
        for i in 0..nt {
            let (s, c) = fd4_stencil(i, nt);
            for (m, cm) in c.iter().enumerate() {
                dt_col[s + m] += (cm / h12).powi(2);
            }
        }
        // ‖column of the spectral derivative matrix‖² = mean of wavenumber²
        let dth_col = (1..nth / 2).map(|q| 2.0 * (q as f64).powi(2)).sum::<f64>() / nth as f64;
        let s2 = self.scale * self.scale;
        let nu = f.u.len();
        let mut diag = vec![0.0; self.op.dim()];
        for p in 0..f.grid.nodes() {
            let i = p / nth;
            let w = self.op.row_weight(p);
            let u = &f.u[p * n..(p + 1) * n];
            for j in 0..n {
                let q = p * n + j;
                let wj2: f64 = (0..d).map(|a| (self.spec_weight(a, j)).powi(2)).sum();
                let base = dt_col[i] + dth_col + self.op.c[q].powi(2);
                let mu_re = w * w * wj2 * u[j].re.powi(2);
                let mu_im = w * w * wj2 * u[j].im.powi(2);
                diag[2 * q] = s2 * (base + mu_re);
                diag[2 * q + 1] = s2 * (base + mu_im);
            }
            for a in 0..d {
                let cu: f64 = (0..n).map(|j| (self.spec_weight(a, j) * u[j].norm()).powi(2)).sum();
                diag[2 * nu + p * d + a] = s2 * (dt_col[i] + cu);
            }
        }
        if let Some(wp) = self.penalty {
            let last = nt - 1;
            for k in 0..nth {
                let p = last * nth + k;
                let u = &f.u[p * n..(p + 1) * n];
                for j in 0..n {
                    let q = p * n + j;
                    let wj2: f64 = (0..d).map(|a| self.spec_weight(a, j).powi(2)).sum();
                    let extra = wp * wp * (dth_col + self.op.c[q].powi(2) + wj2 * u[j].norm_sqr());
                    diag[2 * q] += extra;
                    diag[2 * q + 1] += extra;
                }
                for a in 0..d {
                    let cu: f64 = (0..n).map(|j| (self.spec_weight(a, j) * u[j].norm()).powi(2)).sum();
                    diag[2 * nu + p * d + a] += wp * wp * cu;
                }
            }
        }
        diag.iter().map(|v| if *v > 0.0 { *v } else { 1.0 }).collect()
    }

    fn spec_weight(&self, a: usize, j: usize) -> f64 {
        self.op.spec.weights[a][j] as f64
    }
}

/// Linearization of `Υ̃` on the last row: `(∂_θv + X_η v + X_ξ u, dμ_u v)`,
/// scaled by `√h_θ`.
fn penalty_linear(f: &CylinderField, spec: &ModelSpec, fourier: &Fourier, x: &[f64]) -> Vec<f64> {
    let (n, d, nth) = (f.n, f.d, f.grid.ntheta);
    let (du, deta) = split(f, x);
    let last = f.grid.nt - 1;
    let base = last * nth;
    let sh = f.grid.htheta().sqrt();
    let mut out = Vec::with_capacity(nth * (2 * n + d));
    let mut dth = vec![Complex64::new(0.0, 0.0); nth * n];
    for j in 0..n {
        let col: Vec<Complex64> = (0..nth).map(|k| du[(base + k) * n + j]).collect();
        for (k, v) in fourier.derivative(&col).into_iter().enumerate() {
            dth[k * n + j] = v;
        }
    }
    let mut mus = Vec::with_capacity(nth * d);
    for k in 0..nth {
        let p = base + k;
        let u = &f.u[p * n..(p + 1) * n];
        let c = spec.weight_pairing(&f.eta[p * d..(p + 1) * d]);
        let cx = spec.weight_pairing(&deta[p * d..(p + 1) * d]);
        for j in 0..n {
            let v = dth[k * n + j] + I * c[j] * du[p * n + j] + I * cx[j] * u[j];
            out.push(sh * v.re);
            out.push(sh * v.im);
        }
        mus.extend(spec.d_moment(u, &du[p * n..(p + 1) * n]).into_iter().map(|m| sh * m));
    }
    out.extend(mus);
    out
}

fn penalty_transpose(f: &CylinderField, spec: &ModelSpec, fourier: &Fourier, y: &[f64]) -> Vec<f64> {
    let (n, d, nth) = (f.n, f.d, f.grid.ntheta);
    let last = f.grid.nt - 1;
    let base = last * nth;
    let sh = f.grid.htheta().sqrt();
    let nu = f.u.len();
    let rho: Vec<Complex64> = (0..nth * n).map(|q| Complex64::new(y[2 * q], y[2 * q + 1]) * sh).collect();
    let rmu: Vec<f64> = y[2 * nth * n..].iter().map(|v| v * sh).collect();
    let mut g = vec![0.0; 2 * nu + f.eta.len()];
    let mut dth = vec![Complex64::new(0.0, 0.0); nth * n];
    for j in 0..n {
        let col: Vec<Complex64> = (0..nth).map(|k| rho[k * n + j]).collect();
        for (k, v) in fourier.derivative(&col).into_iter().enumerate() {
            dth[k * n + j] = v;
        }
    }
    for k in 0..nth {
        let p = base + k;
        let u = &f.u[p * n..(p + 1) * n];
        let c = spec.weight_pairing(&f.eta[p * d..(p + 1) * d]);
        for j in 0..n {
            let r = rho[k * n + j];
            let wr: f64 = (0..d).map(|a| spec.weights[a][j] as f64 * rmu[k * d + a]).sum();
            let gu = -dth[k * n + j] - I * c[j] * r - wr * u[j];
            g[2 * (p * n + j)] += gu.re;
            g[2 * (p * n + j) + 1] += gu.im;
            let proj = ((I * u[j]).conj() * r).re;
            for a in 0..d {
                g[2 * nu + p * d + a] += spec.weights[a][j] as f64 * proj;
            }
        }
    }
    g
}

fn penalty_values(f: &CylinderField, spec: &ModelSpec) -> Result<Vec<f64>> {
    let y = f.row_loop(f.grid.nt - 1);
    let res = loop_residual(&y, spec)?;
    let sh = f.grid.htheta().sqrt();
    let mut out = Vec::new();
    for u in &res.upsilon {
        for z in u {
            out.push(sh * z.re);
            out.push(sh * z.im);
        }
    }
    out.extend(res.mu.iter().flatten().map(|m| sh * m));
    Ok(out)
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Preconditioned CGLS for `min ‖A x + r‖` with `x` restricted to free rows.
fn cgls(sys: &System, r: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let diag = sys.diagonal();
    let m_inv: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = m_inv.len();
    let mut x = vec![0.0; n];
    let mut res: Vec<f64> = r.iter().map(|v| -v).collect();
    let mut s: Vec<f64> = sys.apply_transpose(&res).iter().zip(&m_inv).map(|(a, b)| a * b).collect();
    let mut p = s.clone();
    let mut gamma = norm_sq(&s);
    let gamma0 = gamma;
    let mut it = 0;
    while it < max_iter && gamma > tol * tol * gamma0 && gamma > 0.0 {
        let pp: Vec<f64> = p.iter().zip(&m_inv).map(|(a, b)| a * b).collect();
        let q = sys.apply(&pp);
        let qq = norm_sq(&q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, qi) in res.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        s = sys.apply_transpose(&res).iter().zip(&m_inv).map(|(a, b)| a * b).collect();
        let gnew = norm_sq(&s);
        let beta = gnew / gamma;
        gamma = gnew;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        it += 1;
    }
    (x.iter().zip(&m_inv).map(|(a, b)| a * b).collect(), it)
}

/// Replaces the last loop by its nearest critical loop, written in the
/// loop's own gauge: `x ↦ exp(φ)z₀`, `η ↦ η + (η₀ − η̃)`.
fn project_last_row(field: &mut CylinderField, spec: &ModelSpec, eps_crit: Option<f64>) -> Result<()> {
    let last = field.grid.nt - 1;
    let y = field.row_loop(last);
    let nc = nearest_critical(&y, spec, eps_crit)?;
    let (_, eta_tilde) = crate::gauge::canonical_based_gauge(&y.eta)?;
    let eta_tilde = eta_tilde.torus_coeffs().expect("torus").to_vec();
    let shift: Vec<f64> = nc.critical.eta0.iter().zip(&eta_tilde).map(|(a, b)| a - b).collect();
    let (n, d) = (field.n, field.d);
    for k in 0..field.grid.ntheta {
        let phi = nc.gauge.angles_at(k).expect("torus gauge");
        let x = spec.act_angles(&phi, &nc.critical.z0);
        let p = field.node(last, k);
        field.u[p * n..(p + 1) * n].copy_from_slice(&x);
        for a in 0..d {
            field.eta[p * d + a] += shift[a];
        }
    }
    Ok(())
}

struct Evaluation {
    sup: f64,
    l2: f64,
    scaled: Vec<f64>,
    objective: f64,
}

fn evaluate(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec, scale: f64, penalty: Option<f64>) -> Result<Evaluation> {
    let res = vortex_residual(field, spec, metric)?;
    let mut scaled: Vec<f64> = join(&res.r1, &res.r2).into_iter().map(|v| v * scale).collect();
    if let Some(w) = penalty {
        scaled.extend(penalty_values(field, spec)?.into_iter().map(|v| v * w));
    }
    let objective = 0.5 * norm_sq(&scaled);
    Ok(Evaluation { sup: res.sup, l2: res.l2, scaled, objective })
}

fn band_residuals(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Result<Vec<f64>> {
    let res = vortex_residual(field, spec, metric)?;
    let (nt, nth, n, d) = (field.grid.nt, field.grid.ntheta, field.n, field.d);
    let mut bands = vec![0.0f64; 4];
    for i in 0..nt {
        let b = (4 * i / nt).min(3);
        for k in 0..nth {
            let p = i * nth + k;
            let a = res.r1[p * n..(p + 1) * n].iter().map(|z| z.norm()).fold(0.0, f64::max);
            let c = res.r2[p * d..(p + 1) * d].iter().map(|x| x.abs()).fold(0.0, f64::max);
            bands[b] = bands[b].max(a).max(c);
        }
    }
    Ok(bands)
}

/// Relaxes `initial` to an on-shell field; row 0 is Dirichlet data.
pub fn relax(initial: &CylinderField, spec: &ModelSpec, metric: &MetricSpec, config: &SolveConfig) -> Result<(CylinderField, Certificate)> {
    config.validate()?;
    if !initial.is_temporal() {
        return Err(Error::NotTemporal);
    }
    initial.check_model(spec)?;
    let grid = initial.grid;
    let nt = grid.nt;
    let scale = (grid.ht() * grid.htheta()).sqrt();
    let penalty = match config.boundary {
        BoundaryMode::ProjectToCritical => None,
        BoundaryMode::Penalty { weight } => Some(weight.unwrap_or_else(|| metric.weight(grid.t1)).sqrt()),
    };
    let mut free = vec![true; nt];
    free[0] = false;
    if penalty.is_none() {
        free[nt - 1] = false;
    }

    let mut field = initial.clone();
    let mut eval = evaluate(&field, spec, metric, scale, penalty)?;
    let mut history = vec![eval.sup];
    let mut objectives = vec![eval.objective];
    let mut inner = Vec::new();
    let mut iterations = 0;
    let mut step_factor = config.damping;
    while eval.sup > config.tol_residual {
        if iterations >= config.max_iter {
            return Err(Error::NonConvergence { history, final_residual: eval.sup });
        }
        if penalty.is_none() {
            project_last_row(&mut field, spec, config.eps_crit)?;
            eval = evaluate(&field, spec, metric, scale, penalty)?;
        }
        let op = LinearizedOperator::new(&field, spec, metric)?;
        let sys = System { op, free: free.clone(), scale, penalty };
        let (dx, its) = cgls(&sys, &eval.scaled, config.inner_tol, config.max_inner);
        inner.push(its);
        let x0 = field_state(&field);
        let mut alpha = step_factor;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = field.clone();
            let x: Vec<f64> = x0.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            set_state(&mut trial, &x);
            let e = evaluate(&trial, spec, metric, scale, penalty)?;
            if e.objective < eval.objective {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((trial, e)) = accepted else {
            history.push(eval.sup);
            return Err(Error::NonConvergence { history, final_residual: eval.sup });
        };
        step_factor = (alpha * 2.0).min(1.0);
        let stalled = eval.objective - e.objective < STALL_FRACTION * eval.objective;
        field = trial;
        eval = e;
        history.push(eval.sup);
        objectives.push(eval.objective);
        if stalled && eval.sup > config.tol_residual {
            return Err(Error::NonConvergence { history, final_residual: eval.sup });
        }
        log::debug!("relax iteration {iterations}: sup residual {:.3e}, inner {its}", eval.sup);
    }
    let certificate = Certificate {
        iterations,
        residual_history: history,
        objective_history: objectives,
        final_residual_sup: eval.sup,
        final_residual_l2: eval.l2,
        boundary_mode: config.boundary,
        band_residuals: band_residuals(&field, spec, metric)?,
        inner_iterations: inner,
    };
    Ok((field, certificate))
}

/// Adds a smooth perturbation of sup size `amplitude` that vanishes at both
/// ends in t and uses θ-modes `|q| ≤ 3` only.
pub fn perturb(field: &CylinderField, amplitude: f64, seed: u64) -> CylinderField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = field.grid;
    let comps = 2 * field.n + field.d;
    // per component: coefficients of sin(p s) · {cos, sin}(q θ), s ∈ [0, π]
    let coeffs: Vec<Vec<(usize, usize, f64, f64)>> = (0..comps)
        .map(|_| {
            let mut cs = Vec::new();
            for p in 1..=3 {
                for q in 0..=3 {
                    cs.push((p, q, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                }
            }
            cs
        })
        .collect();
    let mut delta = vec![vec![0.0; grid.nodes()]; comps];
    for (c, cs) in coeffs.iter().enumerate() {
        for i in 0..grid.nt {
            let s = PI * (grid.t(i) - grid.t0) / (grid.t1 - grid.t0);
            let env = s.sin().powi(2);
            for k in 0..grid.ntheta {
                let th = grid.theta(k);
                delta[c][i * grid.ntheta + k] = env
                    * cs.iter()
                        .map(|(p, q, a, b)| ((*p as f64) * s).sin() * (a * (*q as f64 * th).cos() + b * (*q as f64 * th).sin()))
                        .sum::<f64>();
            }
        }
    }
    let (n, d) = (field.n, field.d);
    let mut peak = 0.0f64;
    for p in 0..grid.nodes() {
        for j in 0..n {
            peak = peak.max(delta[2 * j][p].hypot(delta[2 * j + 1][p]));
        }
        for a in 0..d {
            peak = peak.max(delta[2 * n + a][p].abs());
        }
    }
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let mut out = field.clone();
    for p in 0..grid.nodes() {
        for j in 0..n {
            out.u[p * n + j] += Complex64::new(delta[2 * j][p], delta[2 * j + 1][p]) * scale;
        }
        for a in 0..d {
            out.eta[p * d + a] += delta[2 * n + a][p] * scale;
        }
    }
    out
}
