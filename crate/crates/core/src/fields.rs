//! Fields on a truncated half-cylinder `[t₀, T] × S¹` and the quantities built
//! from them: covariant derivatives, curvature, vortex residuals, energies.
//!
//! Pointwise norms use the flat cylinder metric; the conformal factor of
//! `e^{2bt}(dt² + dθ²)` appears only through explicit `e^{±2bt}` weights.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loops::GaugedLoop;
use crate::model::{omega, ModelSpec};
use crate::spectral::{fd4_derivative, gregory_weights, kahan_sum, Fourier};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t0: f64,
    pub t1: f64,
    pub nt: usize,
    pub ntheta: usize,
}

impl Grid {
    pub fn new(t0: f64, t1: f64, nt: usize, ntheta: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::InvalidGrid(format!("need t0 < T, got [{t0}, {t1}]")));
        }
        if nt < 16 {
            return Err(Error::InvalidGrid(format!("N_t must be at least 16, got {nt}")));
        }
        if ntheta < 16 || ntheta % 2 != 0 {
            return Err(Error::InvalidGrid(format!("N_theta must be even and at least 16, got {ntheta}")));
        }
        Ok(Grid { t0, t1, nt, ntheta })
    }

    pub fn ht(&self) -> f64 {
        (self.t1 - self.t0) / (self.nt - 1) as f64
    }

    pub fn htheta(&self) -> f64 {
        2.0 * PI / self.ntheta as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i + 1 == self.nt {
            self.t1
        } else {
            self.t0 + i as f64 * self.ht()
        }
    }

    pub fn theta(&self, k: usize) -> f64 {
        k as f64 * self.htheta()
    }

    pub fn nodes(&self) -> usize {
        self.nt * self.ntheta
    }

    /// Row index of the node at time `t`; `t` must sit on the grid.
    pub fn row_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.ht();
        let i = x.round();
        if i < 0.0 || i as usize >= self.nt || (x - i).abs() > 1e-6 {
            return Err(Error::GridMismatch(format!("t = {t} is not a grid row")));
        }
        Ok(i as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub b: f64,
}

impl MetricSpec {
    pub fn new(b: f64) -> Result<Self> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::Config(format!("metric.b must be nonnegative, got {b}")));
        }
        Ok(MetricSpec { b })
    }

    pub fn weight(&self, t: f64) -> f64 {
        (2.0 * self.b * t).exp()
    }
}

/// Samples of `(u, A)`: `u` at node `(i, k)` occupies `u[(i·N_θ + k)·n ..][..n]`,
/// and likewise `η` and `A_t` with stride `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderField {
    pub grid: Grid,
    pub n: usize,
    pub d: usize,
    pub u: Vec<Complex64>,
    pub eta: Vec<f64>,
    pub a_t: Option<Vec<f64>>,
}

/// Residual of the vortex equations in temporal gauge.
#[derive(Clone, Debug)]
pub struct Residual {
    pub r1: Vec<Complex64>,
    pub r2: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
}

impl CylinderField {
    pub fn zeros(grid: Grid, n: usize, d: usize) -> Self {
        CylinderField {
            grid,
            n,
            d,
            u: vec![Complex64::new(0.0, 0.0); grid.nodes() * n],
            eta: vec![0.0; grid.nodes() * d],
            a_t: None,
        }
    }

    /// Field with `u(t, θ) = f(t, θ)` and `η(t, θ) = g(t, θ)`.
    pub fn from_fn(
        grid: Grid,
        n: usize,
        d: usize,
        mut f: impl FnMut(f64, f64) -> Vec<Complex64>,
        mut g: impl FnMut(f64, f64) -> Vec<f64>,
    ) -> Self {
        let mut field = CylinderField::zeros(grid, n, d);
        for i in 0..grid.nt {
            for k in 0..grid.ntheta {
                let (t, th) = (grid.t(i), grid.theta(k));
                let node = i * grid.ntheta + k;
                field.u[node * n..(node + 1) * n].copy_from_slice(&f(t, th));
                field.eta[node * d..(node + 1) * d].copy_from_slice(&g(t, th));
            }
        }
        field
    }

    pub fn is_temporal(&self) -> bool {
        self.a_t.is_none()
    }

    pub fn node(&self, i: usize, k: usize) -> usize {
        i * self.grid.ntheta + k
    }

    pub fn u_at(&self, i: usize, k: usize) -> &[Complex64] {
        let p = self.node(i, k) * self.n;
        &self.u[p..p + self.n]
    }

    pub fn eta_at(&self, i: usize, k: usize) -> &[f64] {
        let p = self.node(i, k) * self.d;
        &self.eta[p..p + self.d]
    }

    /// The loop `(u(t_i, ·), η(t_i, ·))`.
    pub fn row_loop(&self, i: usize) -> GaugedLoop {
        let nth = self.grid.ntheta;
        GaugedLoop::torus(
            (0..nth).map(|k| self.u_at(i, k).to_vec()).collect(),
            (0..nth).map(|k| self.eta_at(i, k).to_vec()).collect(),
        )
    }

    pub fn check_model(&self, spec: &ModelSpec) -> Result<()> {
        if spec.n != self.n || spec.d != self.d {
            return Err(Error::GridMismatch(format!(
                "field has (n, d) = ({}, {}) but model has ({}, {})",
                self.n, self.d, spec.n, spec.d
            )));
        }
        Ok(())
    }

    /// Sup-norm distance between fields on the same grid.
    pub fn sup_distance(&self, other: &CylinderField) -> f64 {
        let du = self.u.iter().zip(&other.u).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let de = self.eta.iter().zip(&other.eta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        du.max(de)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string(), "theta".to_string()];
        for j in 1..=self.n {
            header.push(format!("re_u_{j}"));
            header.push(format!("im_u_{j}"));
        }
        for a in 1..=self.d {
            header.push(format!("eta_{a}"));
        }
        if self.a_t.is_some() {
            for a in 1..=self.d {
                header.push(format!("At_{a}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.grid.nt {
            for k in 0..self.grid.ntheta {
                line.clear();
                line.push_str(&format!("{},{}", self.grid.t(i), self.grid.theta(k)));
                for z in self.u_at(i, k) {
                    line.push_str(&format!(",{},{}", z.re, z.im));
                }
                for e in self.eta_at(i, k) {
                    line.push_str(&format!(",{e}"));
                }
                if let Some(at) = &self.a_t {
                    let p = self.node(i, k) * self.d;
                    for e in &at[p..p + self.d] {
                        line.push_str(&format!(",{e}"));
                    }
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty field file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let n = cols.iter().filter(|c| c.starts_with("re_u_")).count();
        let d = cols.iter().filter(|c| c.starts_with("eta_")).count();
        let has_at = cols.iter().any(|c| c.starts_with("At_"));
        let width = 2 + 2 * n + d + if has_at { d } else { 0 };
        if cols.len() != width || cols[0] != "t" || cols[1] != "theta" || n == 0 || d == 0 {
            return Err(Error::Parse(format!("unexpected field header: {header}")));
        }
        let mut ts = Vec::new();
        let mut thetas = Vec::new();
        let mut u = Vec::new();
        let mut eta = Vec::new();
        let mut at = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != width {
                return Err(Error::Parse(format!("line {}: expected {width} values", ln + 2)));
            }
            if ts.last() != Some(&vals[0]) {
                ts.push(vals[0]);
            }
            if ts.len() == 1 {
                thetas.push(vals[1]);
            }
            for j in 0..n {
                u.push(Complex64::new(vals[2 + 2 * j], vals[3 + 2 * j]));
            }
            eta.extend_from_slice(&vals[2 + 2 * n..2 + 2 * n + d]);
            if has_at {
                at.extend_from_slice(&vals[2 + 2 * n + d..]);
            }
        }
        let grid = Grid::new(ts[0], *ts.last().unwrap_or(&ts[0]), ts.len(), thetas.len())?;
        if u.len() != grid.nodes() * n {
            return Err(Error::Parse("field rows do not form a full grid".into()));
        }
        Ok(CylinderField { grid, n, d, u, eta, a_t: has_at.then_some(at) })
    }
}

/// Spectral θ-derivative of complex data with `comps` components per node.
pub fn d_theta_complex(grid: &Grid, fourier: &Fourier, v: &[Complex64], comps: usize) -> Vec<Complex64> {
    let nth = grid.ntheta;
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); nth];
    for i in 0..grid.nt {
        for j in 0..comps {
            for k in 0..nth {
                buf[k] = v[(i * nth + k) * comps + j];
            }
            let dv = fourier.derivative(&buf);
            for k in 0..nth {
                out[(i * nth + k) * comps + j] = dv[k];
            }
        }
    }
    out
}

pub fn d_theta_real(grid: &Grid, fourier: &Fourier, v: &[f64], comps: usize) -> Vec<f64> {
    let z: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    d_theta_complex(grid, fourier, &z, comps).iter().map(|c| c.re).collect()
}

/// Fourth-order t-derivative, column by column.
pub fn d_t<T>(grid: &Grid, v: &[T], comps: usize) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let (nt, nth) = (grid.nt, grid.ntheta);
    let mut out = vec![T::default(); v.len()];
    let mut col = vec![T::default(); nt];
    for k in 0..nth {
        for j in 0..comps {
            for i in 0..nt {
                col[i] = v[(i * nth + k) * comps + j];
            }
            let dc = fd4_derivative(&col, grid.ht());
            for i in 0..nt {
                out[(i * nth + k) * comps + j] = dc[i];
            }
        }
    }
    out
}

/// Applies `f(node, j, (Wᵀξ)_j)` with `ξ` read from an algebra-valued array.
fn weight_pairings(spec: &ModelSpec, xi: &[f64]) -> Vec<f64> {
    let nodes = xi.len() / spec.d;
    let mut out = Vec::with_capacity(nodes * spec.n);
    for p in 0..nodes {
        out.extend(spec.weight_pairing(&xi[p * spec.d..(p + 1) * spec.d]));
    }
    out
}

/// `(D_t u, D_θ u)`.
pub fn covariant_d(field: &CylinderField, spec: &ModelSpec) -> (Vec<Complex64>, Vec<Complex64>) {
    let fourier = Fourier::new(field.grid.ntheta);
    covariant_d_with(field, spec, &fourier)
}

pub fn covariant_d_with(field: &CylinderField, spec: &ModelSpec, fourier: &Fourier) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut dt = d_t(&field.grid, &field.u, field.n);
    let mut dth = d_theta_complex(&field.grid, fourier, &field.u, field.n);
    let ceta = weight_pairings(spec, &field.eta);
    for (q, z) in field.u.iter().enumerate() {
        dth[q] += I * ceta[q] * z;
    }
    if let Some(at) = &field.a_t {
        let cat = weight_pairings(spec, at);
        for (q, z) in field.u.iter().enumerate() {
            dt[q] += I * cat[q] * z;
        }
    }
    (dt, dth)
}

/// `F = ∂_t η − ∂_θ A_t` (the bracket vanishes on the torus).
pub fn curvature(field: &CylinderField) -> Vec<f64> {
    let mut f = d_t(&field.grid, &field.eta, field.d);
    if let Some(at) = &field.a_t {
        let fourier = Fourier::new(field.grid.ntheta);
        let dat = d_theta_real(&field.grid, &fourier, at, field.d);
        for (x, y) in f.iter_mut().zip(&dat) {
            *x -= y;
        }
    }
    f
}

pub fn moment_grid(field: &CylinderField, spec: &ModelSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(field.grid.nodes() * spec.d);
    for node in 0..field.grid.nodes() {
        out.extend(spec.moment_map(&field.u[node * field.n..(node + 1) * field.n]));
    }
    out
}

fn row_weight(field: &CylinderField, metric: &MetricSpec) -> Vec<f64> {
    (0..field.grid.nt).map(|i| metric.weight(field.grid.t(i))).collect()
}

/// `r₁ = ∂_t u + J(∂_θ u + X_η u)`, `r₂ = ∂_t η + e^{2bt} μ(u)`.
pub fn vortex_residual(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Result<Residual> {
    if !field.is_temporal() {
        return Err(Error::NotTemporal);
    }
    field.check_model(spec)?;
    let fourier = Fourier::new(field.grid.ntheta);
    let (dt, dth) = covariant_d_with(field, spec, &fourier);
    let r1: Vec<Complex64> = dt.iter().zip(&dth).map(|(a, b)| a + I * b).collect();
    let mut r2 = curvature(field);
    let mu = moment_grid(field, spec);
    let w = row_weight(field, metric);
    let nth = field.grid.ntheta;
    for (q, r) in r2.iter_mut().enumerate() {
        *r += w[q / (nth * spec.d)] * mu[q];
    }
    let sup = r1.iter().map(|z| z.norm()).chain(r2.iter().map(|x| x.abs())).fold(0.0, f64::max);
    let dens: Vec<f64> = (0..field.grid.nodes())
        .map(|p| {
            let a: f64 = r1[p * field.n..(p + 1) * field.n].iter().map(|z| z.norm_sqr()).sum();
            let b: f64 = r2[p * field.d..(p + 1) * field.d].iter().map(|x| x * x).sum();
            (a + b) * w[p / nth]
        })
        .collect();
    let l2 = integrate_rows(&field.grid, &dens, 0, field.grid.nt - 1)?.max(0.0).sqrt();
    Ok(Residual { r1, r2, sup, l2 })
}

/// `∫∫ f dt dθ` over rows `i1..=i2` (Gregory in t, trapezoid in θ).
pub fn integrate_rows(grid: &Grid, f: &[f64], i1: usize, i2: usize) -> Result<f64> {
    let rows = row_integrals(grid, f);
    integrate_series(grid, &rows, i1, i2)
}

/// `∮ f(t_i, θ) dθ` for each row.
pub fn row_integrals(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let nth = grid.ntheta;
    (0..grid.nt).map(|i| grid.htheta() * kahan_sum(f[i * nth..(i + 1) * nth].iter().copied())).collect()
}

/// `∫ g dt` over rows `i1..=i2` of a per-row series.
pub fn integrate_series(grid: &Grid, g: &[f64], i1: usize, i2: usize) -> Result<f64> {
    if i2 < i1 + 7 {
        return Err(Error::GridMismatch(format!("band rows {i1}..={i2} too short for quadrature (need 8)")));
    }
    let w = gregory_weights(i2 - i1 + 1, grid.ht());
    Ok(kahan_sum((i1..=i2).map(|i| w[i - i1] * g[i])))
}

pub fn energy_density(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Vec<f64> {
    let (dt, dth) = covariant_d(field, spec);
    let f = curvature(field);
    let mu = moment_grid(field, spec);
    let (n, d, nth) = (field.n, field.d, field.grid.ntheta);
    (0..field.grid.nodes())
        .map(|p| {
            let w = metric.weight(field.grid.t(p / nth));
            let du: f64 = (p * n..(p + 1) * n).map(|q| dt[q].norm_sqr() + dth[q].norm_sqr()).sum();
            let ff: f64 = (p * d..(p + 1) * d).map(|q| f[q] * f[q]).sum();
            let mm: f64 = (p * d..(p + 1) * d).map(|q| mu[q] * mu[q]).sum();
            0.5 * (du + ff / w + w * mm)
        })
        .collect()
}

/// `|D_t u|² + e^{2bt}|μ(u)|²`, equal to `e_b` for vortices in temporal gauge.
pub fn energy_density_on_shell(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Vec<f64> {
    let (dt, _) = covariant_d(field, spec);
    let mu = moment_grid(field, spec);
    let (n, d, nth) = (field.n, field.d, field.grid.ntheta);
    (0..field.grid.nodes())
        .map(|p| {
            let w = metric.weight(field.grid.t(p / nth));
            let du: f64 = (p * n..(p + 1) * n).map(|q| dt[q].norm_sqr()).sum();
            let mm: f64 = (p * d..(p + 1) * d).map(|q| mu[q] * mu[q]).sum();
            du + w * mm
        })
        .collect()
}

/// Energy over `[t₁, t₂] × S¹`; both ends must be grid rows.
pub fn total_energy(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec, band: (f64, f64)) -> Result<f64> {
    let (i1, i2) = (field.grid.row_of(band.0)?, field.grid.row_of(band.1)?);
    integrate_rows(&field.grid, &energy_density(field, spec, metric), i1, i2)
}

/// Breakdown of the energy identity over a band.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyIdentity {
    pub energy: f64,
    /// `∫ (|∂̄_A u|² + ½|F_A + *μ|²) ν_h`.
    pub vortex_part: f64,
    /// `∫ (u*ω − d⟨μ(u), A⟩)`, with the exact term evaluated on the boundary circles.
    pub topological: f64,
    pub defect: f64,
}

pub fn energy_identity(
    field: &CylinderField,
    spec: &ModelSpec,
    metric: &MetricSpec,
    band: (f64, f64),
) -> Result<EnergyIdentity> {
    field.check_model(spec)?;
    let grid = &field.grid;
    let (i1, i2) = (grid.row_of(band.0)?, grid.row_of(band.1)?);
    let fourier = Fourier::new(grid.ntheta);
    let (dt, dth) = covariant_d_with(field, spec, &fourier);
    let f = curvature(field);
    let mu = moment_grid(field, spec);
    let ut = d_t(grid, &field.u, field.n);
    let uth = d_theta_complex(grid, &fourier, &field.u, field.n);
    let (n, d, nth) = (field.n, field.d, grid.ntheta);

    let mut vortex = Vec::with_capacity(grid.nodes());
    let mut area = Vec::with_capacity(grid.nodes());
    let mut pairing = Vec::with_capacity(grid.nodes());
    for p in 0..grid.nodes() {
        let w = metric.weight(grid.t(p / nth));
        let r1: f64 = (p * n..(p + 1) * n).map(|q| (dt[q] + I * dth[q]).norm_sqr()).sum();
        let r2: f64 = (p * d..(p + 1) * d).map(|q| (f[q] + w * mu[q]).powi(2)).sum();
        vortex.push(0.5 * r1 + 0.5 * r2 / w);
        area.push(omega(&ut[p * n..(p + 1) * n], &uth[p * n..(p + 1) * n]));
        pairing.push((p * d..(p + 1) * d).map(|q| mu[q] * field.eta[q]).sum::<f64>());
    }
    let energy = integrate_rows(grid, &energy_density(field, spec, metric), i1, i2)?;
    let vortex_part = integrate_rows(grid, &vortex, i1, i2)?;
    let ring = row_integrals(grid, &pairing);
    let topological = integrate_rows(grid, &area, i1, i2)? - (ring[i2] - ring[i1]);
    Ok(EnergyIdentity { energy, vortex_part, topological, defect: energy - vortex_part - topological })
}

pub fn energy_identity_defect(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec, band: (f64, f64)) -> Result<f64> {
    energy_identity(field, spec, metric, band).map(|e| e.defect)
}

/// Sup-norm defects of the two pointwise identities
/// `|d_A u|² = |∂_A u|² + |∂̄_A u|²` and
/// `u*ω − d⟨μ, A⟩ = (½(|∂_A u|² − |∂̄_A u|²) − ⟨F_A, *μ⟩) ν_h`,
/// evaluated in cylinder coordinates on rows away from the t-boundary.
pub fn pointwise_identities_defect(field: &CylinderField, spec: &ModelSpec, _metric: &MetricSpec) -> (f64, f64) {
    let grid = &field.grid;
    let fourier = Fourier::new(grid.ntheta);
    let (dt, dth) = covariant_d_with(field, spec, &fourier);
    let f = curvature(field);
    let mu = moment_grid(field, spec);
    let ut = d_t(grid, &field.u, field.n);
    let uth = d_theta_complex(grid, &fourier, &field.u, field.n);
    let (n, d, nth) = (field.n, field.d, grid.ntheta);
    let pair_eta: Vec<f64> =
        (0..grid.nodes()).map(|p| (p * d..(p + 1) * d).map(|q| mu[q] * field.eta[q]).sum()).collect();
    let dpair_t = d_t(grid, &pair_eta, 1);
    let dpair_th = match &field.a_t {
        Some(at) => {
            let pair_at: Vec<f64> =
                (0..grid.nodes()).map(|p| (p * d..(p + 1) * d).map(|q| mu[q] * at[q]).sum()).collect();
            d_theta_real(grid, &fourier, &pair_at, 1)
        }
        None => vec![0.0; grid.nodes()],
    };
    let (mut d1, mut d2) = (0.0f64, 0.0f64);
    for i in 2..grid.nt - 2 {
        for k in 0..nth {
            let p = i * nth + k;
            let mut du = 0.0;
            let mut hol = 0.0;
            let mut antihol = 0.0;
            for q in p * n..(p + 1) * n {
                du += dt[q].norm_sqr() + dth[q].norm_sqr();
                hol += 0.5 * (dt[q] - I * dth[q]).norm_sqr();
                antihol += 0.5 * (dt[q] + I * dth[q]).norm_sqr();
            }
            d1 = d1.max((du - hol - antihol).abs());
            let fmu: f64 = (p * d..(p + 1) * d).map(|q| f[q] * mu[q]).sum();
            let lhs = omega(&ut[p * n..(p + 1) * n], &uth[p * n..(p + 1) * n]) - (dpair_t[p] - dpair_th[p]);
            let rhs = 0.5 * (hol - antihol) - fmu;
            d2 = d2.max((lhs - rhs).abs());
        }
    }
    (d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn smooth_field(grid: Grid) -> CylinderField {
        CylinderField::from_fn(
            grid,
            1,
            1,
            |t, th| vec![c(1.0 + 0.2 * (0.5 * t).sin() * th.cos(), 0.3 * (2.0 * th).sin() * (-t).exp())],
            |t, th| vec![0.1 * t.cos() + 0.05 * (th + t).sin()],
        )
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0.0, 1.0, 15, 16).is_err());
        assert!(Grid::new(0.0, 1.0, 16, 17).is_err());
        assert!(Grid::new(1.0, 1.0, 16, 16).is_err());
        let g = Grid::new(0.0, 1.0, 16, 16).unwrap();
        assert_eq!(g.t(15), 1.0);
        assert_eq!(g.row_of(1.0).unwrap(), 15);
        assert!(g.row_of(0.5).is_err());
        assert!(MetricSpec::new(-1.0).is_err());
    }

    #[test]
    fn constant_critical_field_is_flat() {
        let spec = ModelSpec::circle(1, 0.5);
        let grid = Grid::new(0.0, 2.0, 16, 16).unwrap();
        let field = CylinderField::from_fn(grid, 1, 1, |_, _| vec![c(0.6, 0.8)], |_, _| vec![0.0]);
        let (dt, dth) = covariant_d(&field, &spec);
        assert!(dt.iter().chain(&dth).all(|z| z.norm() < 1e-14));
        let metric = MetricSpec::new(1.0).unwrap();
        let r = vortex_residual(&field, &spec, &metric).unwrap();
        assert!(r.sup < 1e-14);
        assert!(energy_density(&field, &spec, &metric).iter().all(|e| *e < 1e-28));
        let id = energy_identity(&field, &spec, &metric, (0.0, 2.0)).unwrap();
        assert!(id.defect.abs() < 1e-14);
        let (a, b) = pointwise_identities_defect(&field, &spec, &metric);
        assert!(a < 1e-14 && b < 1e-14);
    }

    #[test]
    fn critical_loop_extended_in_t() {
        // k = 3, η₀ = −1/3: z(θ) = e^{iθ} z₀ has D_θ z = 0
        let spec = ModelSpec::circle(3, 1.5);
        let grid = Grid::new(0.0, 1.0, 16, 32).unwrap();
        let field = CylinderField::from_fn(grid, 1, 1, |_, th| vec![Complex64::from_polar(1.0, th)], |_, _| vec![-1.0 / 3.0]);
        let (dt, dth) = covariant_d(&field, &spec);
        assert!(dt.iter().chain(&dth).all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn derivatives_match_analytic() {
        let spec = ModelSpec::circle(2, 1.0);
        let grid = Grid::new(0.0, 1.0, 257, 32).unwrap();
        let field = smooth_field(grid);
        let (dt, dth) = covariant_d(&field, &spec);
        let mut err: f64 = 0.0;
        for i in 0..grid.nt {
            for k in 0..grid.ntheta {
                let (t, th) = (grid.t(i), grid.theta(k));
                let u = field.u_at(i, k)[0];
                let eta = field.eta_at(i, k)[0];
                let ut = c(0.1 * (0.5 * t).cos() * th.cos(), -0.3 * (2.0 * th).sin() * (-t).exp());
                let uth = c(-0.2 * (0.5 * t).sin() * th.sin(), 0.6 * (2.0 * th).cos() * (-t).exp());
                let p = field.node(i, k);
                err = err.max((dt[p] - ut).norm()).max((dth[p] - uth - I * 2.0 * eta * u).norm());
            }
        }
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn curvature_examples() {
        let grid = Grid::new(0.0, 1.0, 64, 16).unwrap();
        let field = CylinderField::from_fn(grid, 1, 1, |_, _| vec![c(1.0, 0.0)], |t, _| vec![t * t]);
        let f = curvature(&field);
        for i in 0..grid.nt {
            assert!((f[field.node(i, 3)] - 2.0 * grid.t(i)).abs() < 1e-10);
        }
        let flat = CylinderField::from_fn(grid, 1, 1, |_, _| vec![c(1.0, 0.0)], |_, th| vec![th.sin()]);
        assert!(curvature(&flat).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn residual_of_field_violating_second_equation_only() {
        let spec = ModelSpec::circle(1, 0.5);
        let grid = Grid::new(0.0, 1.0, 16, 16).unwrap();
        let metric = MetricSpec::new(1.0).unwrap();
        let field = CylinderField::from_fn(grid, 1, 1, |_, _| vec![c(0.5, 0.0)], |_, _| vec![0.0]);
        let r = vortex_residual(&field, &spec, &metric).unwrap();
        assert!(r.r1.iter().all(|z| z.norm() < 1e-15));
        let mu = spec.moment_map(&[c(0.5, 0.0)])[0];
        for i in 0..grid.nt {
            assert!((r.r2[field.node(i, 0)] - metric.weight(grid.t(i)) * mu).abs() < 1e-13);
        }
        let mut nt = field.clone();
        nt.a_t = Some(vec![0.0; grid.nodes()]);
        assert!(matches!(vortex_residual(&nt, &spec, &metric), Err(Error::NotTemporal)));
    }

    #[test]
    fn off_shell_identity_is_self_consistent() {
        let spec = ModelSpec::circle(1, 0.5);
        let grid = Grid::new(0.0, 1.0, 65, 32).unwrap();
        let metric = MetricSpec::new(1.0).unwrap();
        let field = smooth_field(grid);
        let id = energy_identity(&field, &spec, &metric, (0.0, 1.0)).unwrap();
        assert!((id.defect - (id.energy - id.vortex_part - id.topological)).abs() < 1e-10);
    }

    #[test]
    fn pointwise_identities_converge_at_fourth_order() {
        let spec = ModelSpec::circle(2, 1.0);
        let metric = MetricSpec::new(1.0).unwrap();
        let with_at = |nt: usize| {
            let grid = Grid::new(0.0, 1.0, nt, 32).unwrap();
            let mut field = smooth_field(grid);
            let at: Vec<f64> = (0..grid.nodes())
                .map(|p| 0.1 * (grid.t(p / 32) * 2.0).sin() * grid.theta(p % 32).cos())
                .collect();
            field.a_t = Some(at);
            pointwise_identities_defect(&field, &spec, &metric)
        };
        let (a1, b1) = with_at(33);
        let (a2, b2) = with_at(65);
        assert!(a1 < 1e-13 && a2 < 1e-13);
        assert!(b1 / b2 > 12.0, "ratio {}", b1 / b2);
    }

    #[test]
    fn energy_is_additive_and_rotation_invariant() {
        let spec = ModelSpec::circle(1, 0.5);
        let metric = MetricSpec::new(0.0).unwrap();
        let grid = Grid::new(0.0, 2.0, 129, 32).unwrap();
        let field = smooth_field(grid);
        let e = total_energy(&field, &spec, &metric, (0.0, 2.0)).unwrap();
        let e1 = total_energy(&field, &spec, &metric, (0.0, 1.0)).unwrap();
        let e2 = total_energy(&field, &spec, &metric, (1.0, 2.0)).unwrap();
        assert!((e - e1 - e2).abs() < 1e-7 * e);
        let dens = energy_density(&field, &spec, &metric);
        assert!(dens.iter().all(|x| *x >= 0.0));
        // rotate by one grid cell
        let mut rot = field.clone();
        for i in 0..grid.nt {
            for k in 0..grid.ntheta {
                let src = field.node(i, (k + 1) % grid.ntheta);
                let dst = field.node(i, k);
                rot.u[dst] = field.u[src];
                rot.eta[dst] = field.eta[src];
            }
        }
        let dr = energy_density(&rot, &spec, &metric);
        for i in 0..grid.nt {
            for k in 0..grid.ntheta {
                let a = dens[field.node(i, (k + 1) % grid.ntheta)];
                let b = dr[field.node(i, k)];
                assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let grid = Grid::new(0.1, 1.7, 16, 16).unwrap();
        let mut field = smooth_field(grid);
        field.a_t = Some((0..grid.nodes()).map(|p| (p as f64).sqrt() / 7.0).collect());
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let back = CylinderField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, field);
    }
}
