//! Gauge transformations of loops and cylinder fields, horizontal paths,
//! holonomy, the canonical based gauge and temporal gauge fixing.
//!
//! Gauges act on the left-action convention `g·(x, η) = (g⁻¹x, Ad_{g⁻¹}η + g⁻¹∂_θg)`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{d_t, d_theta_real, CylinderField, Grid};
use crate::lie::{exp_g, log_scaled, AlgebraElement, CMatrix, GroupElement};
use crate::loops::GaugedLoop;
use crate::model::{LinearAction, ModelSpec};
use crate::spectral::{cumulative_integral_fd4, Fourier};

const TWO_PI: f64 = 2.0 * PI;

/// A map from the θ-grid to the group.
///
/// Torus gauges are stored as unwrapped angles `p(θ) + w·θ` with `p` periodic
/// and drift `w`; an integer drift gives a closed loop, a fractional one a
/// path on `[0, 2π]` that closes up to a stabilizer element.
#[derive(Clone, Debug, PartialEq)]
pub enum LoopGauge {
    Torus { periodic: Vec<Vec<f64>>, drift: Vec<f64> },
    Matrix(Vec<CMatrix>),
}

impl LoopGauge {
    pub fn identity_torus(ntheta: usize, d: usize) -> Self {
        LoopGauge::Torus { periodic: vec![vec![0.0; d]; ntheta], drift: vec![0.0; d] }
    }

    pub fn identity_matrix(ntheta: usize, n: usize) -> Self {
        LoopGauge::Matrix(vec![CMatrix::identity(n, n); ntheta])
    }

    pub fn constant(g: &GroupElement, ntheta: usize) -> Self {
        match g {
            GroupElement::Torus(a) => LoopGauge::Torus { periodic: vec![a.clone(); ntheta], drift: vec![0.0; a.len()] },
            GroupElement::Matrix(m) => LoopGauge::Matrix(vec![m.clone(); ntheta]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LoopGauge::Torus { periodic, .. } => periodic.len(),
            LoopGauge::Matrix(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unwrapped angles at node `k` (torus only).
    pub fn angles_at(&self, k: usize) -> Option<Vec<f64>> {
        match self {
            LoopGauge::Torus { periodic, drift } => {
                let th = TWO_PI * k as f64 / periodic.len() as f64;
                Some(periodic[k].iter().zip(drift).map(|(p, w)| p + w * th).collect())
            }
            LoopGauge::Matrix(_) => None,
        }
    }

    pub fn value(&self, k: usize) -> GroupElement {
        match self {
            LoopGauge::Torus { .. } => GroupElement::from_angles(&self.angles_at(k).unwrap_or_default()),
            LoopGauge::Matrix(v) => GroupElement::Matrix(v[k].clone()),
        }
    }

    pub fn is_based(&self) -> bool {
        match self {
            LoopGauge::Torus { periodic, .. } => periodic[0].iter().all(|a| principal_angle(*a).abs() < 1e-12),
            LoopGauge::Matrix(v) => {
                let n = v[0].nrows();
                (&v[0] - CMatrix::identity(n, n)).iter().all(|z| z.norm() < 1e-12)
            }
        }
    }

    /// Pointwise product `g(θ)h(θ)`.
    pub fn compose(&self, other: &LoopGauge) -> Result<LoopGauge> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch("gauges on different grids".into()));
        }
        match (self, other) {
            (LoopGauge::Torus { periodic: p1, drift: w1 }, LoopGauge::Torus { periodic: p2, drift: w2 }) => {
                Ok(LoopGauge::Torus {
                    periodic: p1.iter().zip(p2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect(),
                    drift: w1.iter().zip(w2).map(|(x, y)| x + y).collect(),
                })
            }
            (LoopGauge::Matrix(a), LoopGauge::Matrix(b)) => {
                Ok(LoopGauge::Matrix(a.iter().zip(b).map(|(x, y)| x * y).collect()))
            }
            _ => Err(Error::BackendMismatch("gauge compose")),
        }
    }

    /// `g⁻¹ ∂_θ g` at each node, with spectral θ-derivatives.
    pub fn maurer_cartan(&self) -> Vec<AlgebraElement> {
        let nth = self.len();
        let fourier = Fourier::new(nth);
        match self {
            LoopGauge::Torus { periodic, drift } => {
                let d = drift.len();
                let mut out = vec![vec![0.0; d]; nth];
                for a in 0..d {
                    let col: Vec<f64> = periodic.iter().map(|p| p[a]).collect();
                    let dc = fourier.derivative_real(&col);
                    for k in 0..nth {
                        out[k][a] = dc[k] + drift[a];
                    }
                }
                out.into_iter().map(AlgebraElement::Torus).collect()
            }
            LoopGauge::Matrix(v) => {
                let n = v[0].nrows();
                let mut dv = vec![CMatrix::zeros(n, n); nth];
                for r in 0..n {
                    for c in 0..n {
                        let col: Vec<Complex64> = v.iter().map(|m| m[(r, c)]).collect();
                        let dc = fourier.derivative(&col);
                        for k in 0..nth {
                            dv[k][(r, c)] = dc[k];
                        }
                    }
                }
                v.iter()
                    .zip(dv)
                    .map(|(g, dg)| AlgebraElement::skew_hermitian(g.adjoint() * dg))
                    .collect()
            }
        }
    }

    /// Largest Fourier coefficient in the top quarter of wavenumbers, relative
    /// to the largest one; small values mean spectral differentiation is reliable.
    pub fn resolution_defect(&self) -> f64 {
        let nth = self.len();
        let fourier = Fourier::new(nth);
        let mut worst: f64 = 0.0;
        match self {
            LoopGauge::Torus { periodic, drift } => {
                for a in 0..drift.len() {
                    let col: Vec<Complex64> = periodic.iter().map(|p| Complex64::new(p[a], 0.0)).collect();
                    worst = worst.max(fourier.tail_fraction(&col, 0.25));
                }
            }
            LoopGauge::Matrix(v) => {
                let n = v[0].nrows();
                for r in 0..n {
                    for c in 0..n {
                        let col: Vec<Complex64> = v.iter().map(|m| m[(r, c)]).collect();
                        worst = worst.max(fourier.tail_fraction(&col, 0.25));
                    }
                }
            }
        }
        worst
    }
}

fn principal_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

/// `g·y = (g⁻¹x, Ad_{g⁻¹}η + g⁻¹∂_θg)`.
pub fn act_on_loop<A: LinearAction>(action: &A, g: &LoopGauge, y: &GaugedLoop) -> Result<GaugedLoop> {
    if g.len() != y.len() {
        return Err(Error::GridMismatch(format!("gauge has {} points, loop has {}", g.len(), y.len())));
    }
    let mc = g.maurer_cartan();
    let mut x = Vec::with_capacity(y.len());
    let mut eta = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let gk = g.value(k);
        let ginv = gk.inverse();
        x.push(action.act(&ginv, &y.x[k])?);
        let ad = crate::lie::adjoint(&ginv, &y.eta[k])?;
        eta.push(ad.add(&mc[k])?);
    }
    GaugedLoop::new(x, eta)
}

/// How the connection is sampled between grid nodes by the matrix integrator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Trigonometric interpolation of the samples.
    Spectral,
    /// Sample `k` held constant on `[θ_k, θ_{k+1})`.
    Hold,
}

/// Solution of `Ψ' + ηΨ = 0`, `Ψ(0) = e`, at the nodes `θ_0, …, θ_{N-1}` and at `2π`.
///
/// Torus: `Ψ = exp(−∫_0^θ η)` with the integral evaluated exactly for
/// band-limited data. Matrix: fourth-order commutator-free exponential
/// integrator on each grid cell.
pub fn horizontal_path(eta: &[AlgebraElement], sampling: Sampling) -> Result<Vec<GroupElement>> {
    let nth = eta.len();
    if nth < 16 {
        return Err(Error::InvalidGrid(format!("horizontal path needs at least 16 samples, got {nth}")));
    }
    match &eta[0] {
        AlgebraElement::Torus(first) => {
            let d = first.len();
            let angles = torus_path_angles(eta, d)?;
            Ok(angles.iter().map(|a| GroupElement::from_angles(a)).collect())
        }
        AlgebraElement::Matrix(first) => {
            let n = first.nrows();
            let mats: Vec<&CMatrix> = eta
                .iter()
                .map(|e| match e {
                    AlgebraElement::Matrix(m) => Ok(m),
                    _ => Err(Error::BackendMismatch("mixed connection samples")),
                })
                .collect::<Result<_>>()?;
            let h = TWO_PI / nth as f64;
            let sample = matrix_sampler(&mats, sampling);
            let s3 = 3f64.sqrt();
            let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
            let (b1, b2) = (0.25 + s3 / 6.0, 0.25 - s3 / 6.0);
            let mut psi = CMatrix::identity(n, n);
            let mut out = Vec::with_capacity(nth + 1);
            out.push(GroupElement::Matrix(psi.clone()));
            for k in 0..nth {
                let th = k as f64 * h;
                // Ψ' = AΨ with A = −η
                let a1 = sample(k, th + c1 * h) * Complex64::new(-h, 0.0);
                let a2 = sample(k, th + c2 * h) * Complex64::new(-h, 0.0);
                let first = exp_matrix(&(&a1 * Complex64::new(b1, 0.0) + &a2 * Complex64::new(b2, 0.0)));
                let second = exp_matrix(&(&a1 * Complex64::new(b2, 0.0) + &a2 * Complex64::new(b1, 0.0)));
                psi = second * first * psi;
                out.push(GroupElement::Matrix(psi.clone()));
            }
            Ok(out)
        }
    }
}

fn exp_matrix(m: &CMatrix) -> CMatrix {
    match exp_g(&AlgebraElement::skew_hermitian(m.clone())) {
        GroupElement::Matrix(g) => g,
        GroupElement::Torus(_) => unreachable!(),
    }
}

fn matrix_sampler<'a>(mats: &'a [&'a CMatrix], sampling: Sampling) -> Box<dyn Fn(usize, f64) -> CMatrix + 'a> {
    match sampling {
        Sampling::Hold => Box::new(move |k, _| mats[k].clone()),
        Sampling::Spectral => {
            let nth = mats.len();
            let n = mats[0].nrows();
            let fourier = Fourier::new(nth);
            let coeffs: Vec<Vec<Complex64>> = (0..n * n)
                .map(|rc| {
                    let col: Vec<Complex64> = mats.iter().map(|m| m[(rc / n, rc % n)]).collect();
                    fourier.coefficients(&col)
                })
                .collect();
            Box::new(move |_, th| CMatrix::from_fn(n, n, |r, c| fourier.interpolate(&coeffs[r * n + c], th)))
        }
    }
}

/// Unwrapped angles of the torus horizontal path at the nodes and at `2π`.
fn torus_path_angles(eta: &[AlgebraElement], d: usize) -> Result<Vec<Vec<f64>>> {
    let nth = eta.len();
    let fourier = Fourier::new(nth);
    let mut out = vec![vec![0.0; d]; nth + 1];
    for a in 0..d {
        let col: Vec<f64> = eta
            .iter()
            .map(|e| e.torus_coeffs().map(|c| c[a]).ok_or(Error::BackendMismatch("mixed connection samples")))
            .collect::<Result<_>>()?;
        let cum = fourier.cumulative_integral_real(&col);
        let mean = col.iter().sum::<f64>() / nth as f64;
        for k in 0..nth {
            out[k][a] = -cum[k];
        }
        out[nth][a] = -TWO_PI * mean;
    }
    Ok(out)
}

pub fn holonomy(eta: &[AlgebraElement], sampling: Sampling) -> Result<GroupElement> {
    let mut path = horizontal_path(eta, sampling)?;
    Ok(path.pop().expect("path has N+1 points"))
}

/// `h_η(θ) = Ψ_η(θ) exp(−θ log_scaled(Hol_η))` and the constant connection
/// `−log_scaled(Hol_η)` it produces.
pub fn canonical_based_gauge(eta: &[AlgebraElement]) -> Result<(LoopGauge, AlgebraElement)> {
    let nth = eta.len();
    match &eta[0] {
        AlgebraElement::Torus(first) => {
            let d = first.len();
            let path = torus_path_angles(eta, d)?;
            let hol = GroupElement::from_angles(&path[nth]);
            let log = log_scaled(&hol)?;
            let a = log.torus_coeffs().expect("torus log").to_vec();
            let mut periodic = vec![vec![0.0; d]; nth];
            let mut drift = vec![0.0; d];
            for c in 0..d {
                let mean = -path[nth][c] / TWO_PI;
                for k in 0..nth {
                    let th = TWO_PI * k as f64 / nth as f64;
                    periodic[k][c] = path[k][c] + th * mean;
                }
                // −(η̄ + a) is an integer because exp(2πa) = exp(−2πη̄)
                drift[c] = (-(mean + a[c])).round();
            }
            Ok((LoopGauge::Torus { periodic, drift }, log.scale(-1.0)))
        }
        AlgebraElement::Matrix(_) => {
            let path = horizontal_path(eta, Sampling::Spectral)?;
            let log = log_scaled(&path[nth])?;
            let AlgebraElement::Matrix(l) = &log else { unreachable!() };
            let mut values = Vec::with_capacity(nth);
            for (k, p) in path.iter().take(nth).enumerate() {
                let th = TWO_PI * k as f64 / nth as f64;
                let GroupElement::Matrix(pm) = p else { unreachable!() };
                values.push(pm * exp_matrix(&(l * Complex64::new(-th, 0.0))));
            }
            Ok((LoopGauge::Matrix(values), log.scale(-1.0)))
        }
    }
}

/// Torus gauge on the cylinder grid, stored as unwrapped angles
/// `φ(t, θ) = p(t, θ) + w·θ` with `p` periodic in θ.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGauge {
    pub grid: Grid,
    pub d: usize,
    pub periodic: Vec<f64>,
    pub drift: Vec<f64>,
}

impl PathGauge {
    /// The t-independent extension of a loop gauge.
    pub fn from_loop(g: &LoopGauge, grid: Grid) -> Result<Self> {
        let LoopGauge::Torus { periodic, drift } = g else {
            return Err(Error::BackendMismatch("cylinder gauges are torus-valued"));
        };
        if periodic.len() != grid.ntheta {
            return Err(Error::GridMismatch("loop gauge and field have different θ-grids".into()));
        }
        let d = drift.len();
        let mut p = Vec::with_capacity(grid.nodes() * d);
        for _ in 0..grid.nt {
            for row in periodic {
                p.extend_from_slice(row);
            }
        }
        Ok(PathGauge { grid, d, periodic: p, drift: drift.clone() })
    }

    pub fn angles_at(&self, i: usize, k: usize) -> Vec<f64> {
        let p = (i * self.grid.ntheta + k) * self.d;
        let th = self.grid.theta(k);
        (0..self.d).map(|a| self.periodic[p + a] + self.drift[a] * th).collect()
    }

    pub fn value(&self, i: usize, k: usize) -> GroupElement {
        GroupElement::from_angles(&self.angles_at(i, k))
    }

    fn is_t_independent(&self) -> bool {
        let row = self.grid.ntheta * self.d;
        (1..self.grid.nt).all(|i| self.periodic[i * row..(i + 1) * row] == self.periodic[..row])
    }

    /// Columns `t,theta,phi_1,…,phi_d` in the field CSV style.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.d).map(|a| format!("phi_{a}")).collect();
        writeln!(w, "t,theta,{}", cols.join(","))?;
        for i in 0..self.grid.nt {
            for k in 0..self.grid.ntheta {
                let vals: Vec<String> = self.angles_at(i, k).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{}", self.grid.t(i), self.grid.theta(k), vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// `Φ·(u, A) = (Φ⁻¹u, A + dφ)` for a torus gauge `Φ = exp(φ)`.
pub fn act_on_field(spec: &ModelSpec, phi: &PathGauge, field: &CylinderField) -> Result<CylinderField> {
    field.check_model(spec)?;
    if phi.grid != field.grid || phi.d != field.d {
        return Err(Error::GridMismatch("gauge and field grids differ".into()));
    }
    let grid = field.grid;
    let fourier = Fourier::new(grid.ntheta);
    let mut out = field.clone();
    let dth = d_theta_real(&grid, &fourier, &phi.periodic, phi.d);
    for i in 0..grid.nt {
        for k in 0..grid.ntheta {
            let p = field.node(i, k);
            let ang: Vec<f64> = phi.angles_at(i, k).iter().map(|a| -a).collect();
            let moved = spec.act_angles(&ang, field.u_at(i, k));
            out.u[p * field.n..(p + 1) * field.n].copy_from_slice(&moved);
            for a in 0..field.d {
                out.eta[p * field.d + a] += dth[p * field.d + a] + phi.drift[a];
            }
        }
    }
    if !(field.is_temporal() && phi.is_t_independent()) {
        let dt = d_t(&grid, &phi.periodic, phi.d);
        let mut at = field.a_t.clone().unwrap_or_else(|| vec![0.0; grid.nodes() * field.d]);
        for (x, y) in at.iter_mut().zip(&dt) {
            *x += y;
        }
        out.a_t = Some(at);
    }
    Ok(out)
}

/// Temporal gauge fixing: `∂_tΦ = −A_tΦ`, `Φ(t₀) = e`, applied to the field.
///
/// Returns the gauge, the transformed temporal field, and the sup-norm of the
/// residual dt-component `A_t + ∂_tφ` measured with the t-stencil.
pub fn temporal_gauge(spec: &ModelSpec, field: &CylinderField) -> Result<(PathGauge, CylinderField, f64)> {
    field.check_model(spec)?;
    let grid = field.grid;
    let d = field.d;
    let Some(at) = &field.a_t else {
        return Ok((
            PathGauge { grid, d, periodic: vec![0.0; grid.nodes() * d], drift: vec![0.0; d] },
            field.clone(),
            0.0,
        ));
    };
    let mut periodic = vec![0.0; grid.nodes() * d];
    let mut col = vec![0.0; grid.nt];
    for k in 0..grid.ntheta {
        for a in 0..d {
            for i in 0..grid.nt {
                col[i] = at[(i * grid.ntheta + k) * d + a];
            }
            let cum = cumulative_integral_fd4(&col, grid.ht());
            for i in 0..grid.nt {
                periodic[(i * grid.ntheta + k) * d + a] = -cum[i];
            }
        }
    }
    let phi = PathGauge { grid, d, periodic, drift: vec![0.0; d] };
    let moved = act_on_field(spec, &phi, field)?;
    let defect = moved.a_t.as_ref().map_or(0.0, |v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let mut temporal = moved;
    temporal.a_t = None;
    Ok((phi, temporal, defect))
}
