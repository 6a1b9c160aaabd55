//! Reference solutions: the θ-separable reduction of the vortex equations and
//! the Fourier-block spectrum of the slice Hessian.
//!
//! With `u = ρ(t) e^{imθ}` and `η = η(t)` on the circle model of weight `k`,
//! the temporal-gauge equations become
//!
//! ```text
//! ρ′ = (m + kη) ρ,        η′ = e^{2bt} (kρ²/2 − τ),
//! ```
//!
//! with fixed point `ρ* = √(2τ/k)`, `η* = −m/k`. The decaying branch is found
//! by integrating backwards from a point on the stable manifold beyond the
//! end of the range and shooting on its distance to the fixed point.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{CylinderField, Grid};
use crate::loops::{null_space, CriticalLoop, SV_THRESHOLD};
use crate::model::ModelSpec;
use crate::ode::{Dopri5, OdeError};

const MAX_BISECTIONS: usize = 80;
/// Length of the stable-manifold run-in beyond `T`, in units of the local
/// decay length `1/(κ e^{bT})`.
const RUN_IN: f64 = 8.0;
/// Default `ρ(t₀)/ρ*`.
pub const DEFAULT_START_FRACTION: f64 = 0.5;

/// Decaying solution of the separable reduction on `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct SeparableSolution {
    pub k: i64,
    pub tau: f64,
    pub b: f64,
    pub m: i64,
    pub t0: f64,
    pub t1: f64,
    pub tol: f64,
    pub rho_star: f64,
    pub eta_star: f64,
    /// Accepted integration steps on `[t0, t1]`, ascending.
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    /// `|ρ(t₀) − ρ₀|`.
    pub shooting_residual: f64,
    /// `|(ρ, η)(t₁) − (ρ*, η*)|`.
    pub final_defect: f64,
    pub bisections: usize,
    start: Option<ManifoldStart>,
}

/// Deviation `(ρ − ρ*, η − η*)` at `t_far`.
#[derive(Clone, Copy, Debug)]
struct ManifoldStart {
    t_far: f64,
    r: f64,
    s: f64,
}

fn ode_error(e: OdeError) -> Error {
    match e {
        OdeError::StepUnderflow { t } | OdeError::TooManySteps { t } => Error::StiffnessAbort { t },
        OdeError::Blowup { t } => Error::ShootingFailed(format!("solution blew up at t = {t}")),
    }
}

fn check_params(k: i64, tau: f64, b: f64, m: i64, range: (f64, f64), tol: f64) -> Result<()> {
    if k < 1 {
        return Err(Error::Precondition(format!("weight k = {k} must be positive")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Precondition(format!("τ = {tau} must be positive")));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Precondition(format!("b = {b} must be nonnegative")));
    }
    if 2 * m.abs() >= k {
        return Err(Error::Precondition(format!("mode m = {m} needs |m| < k/2 for k = {k}")));
    }
    if !(range.1 > range.0) {
        return Err(Error::Precondition(format!("empty t-range [{}, {}]", range.0, range.1)));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    Ok(())
}

/// Eigenvalues of the linearization of the reduction at the fixed point for
/// `b = 0`, from the matrix `[[0, kρ*], [kρ*, 0]]` in deviation variables.
pub fn linearization_eigenvalues(k: i64, tau: f64) -> [f64; 2] {
    let kappa = k as f64 * (2.0 * tau / k as f64).sqrt();
    let a = DMatrix::from_row_slice(2, 2, &[0.0, kappa, kappa, 0.0]);
    let eig = SymmetricEigen::new(a);
    let mut out = [eig.eigenvalues[0], eig.eigenvalues[1]];
    out.sort_by(f64::total_cmp);
    out
}

impl SeparableSolution {
    /// The constant solution `(ρ*, η*)`.
    pub fn fixed_point(k: i64, tau: f64, b: f64, m: i64, range: (f64, f64)) -> Result<Self> {
        check_params(k, tau, b, m, range, 1.0)?;
        let rho_star = (2.0 * tau / k as f64).sqrt();
        let eta_star = -(m as f64) / k as f64;
        Ok(SeparableSolution {
            k,
            tau,
            b,
            m,
            t0: range.0,
            t1: range.1,
            tol: 0.0,
            rho_star,
            eta_star,
            t: vec![range.0, range.1],
            rho: vec![rho_star; 2],
            eta: vec![eta_star; 2],
            shooting_residual: 0.0,
            final_defect: 0.0,
            bisections: 0,
            start: None,
        })
    }

    fn kappa(&self) -> f64 {
        self.k as f64 * self.rho_star
    }

    fn rhs(&self) -> impl Fn(f64, &[f64]) -> Vec<f64> + '_ {
        let k = self.k as f64;
        let rs = self.rho_star;
        let b = self.b;
        move |t, y| vec![k * y[1] * (rs + y[0]), (2.0 * b * t).exp() * (k * rs * y[0] + 0.5 * k * y[0] * y[0])]
    }

    fn integrator(&self) -> Dopri5 {
        let mut ode = Dopri5::new(self.tol);
        ode.atol = 1e-3 * self.tol * self.rho_star;
        ode
    }

    /// Deviation at `t_far` along the stable direction `s/r = −e^{bt} − b/(2κ)`
    /// with `r = −e^x`.
    fn start_from(&self, t_far: f64, x: f64) -> ManifoldStart {
        let sigma = -(self.b * t_far).exp() - self.b / (2.0 * self.kappa());
        let r = -x.exp();
        ManifoldStart { t_far, r, s: sigma * r }
    }

    fn deviation_at(&self, start: ManifoldStart, t: f64) -> Result<Vec<f64>> {
        let (out, _) = self.integrator().solve(self.rhs(), start.t_far, &[start.r, start.s], &[t]).map_err(ode_error)?;
        Ok(out.into_iter().next().expect("one output"))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    /// `(ρ, η)` at the requested times, which must lie in the range.
    pub fn evaluate(&self, times: &[f64]) -> Result<Vec<(f64, f64)>> {
        let slack = 1e-12 * (1.0 + self.t1.abs());
        if let Some(t) = times.iter().find(|t| **t < self.t0 - slack || **t > self.t1 + slack) {
            return Err(Error::RangeMismatch(format!("t = {t} outside [{}, {}]", self.t0, self.t1)));
        }
        let Some(start) = self.start else {
            return Ok(vec![(self.rho_star, self.eta_star); times.len()]);
        };
        // one backward sweep from t_far through the times in decreasing order
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let (out, _) = self.integrator().solve(self.rhs(), start.t_far, &[start.r, start.s], &sorted).map_err(ode_error)?;
        let mut values = vec![(0.0, 0.0); times.len()];
        for (slot, y) in order.into_iter().zip(out) {
            values[slot] = (self.rho_star + y[0], self.eta_star + y[1]);
        }
        Ok(values)
    }
}

/// Decaying separable solution with `ρ(t₀) = ρ*/2`.
pub fn separable_vortex(k: i64, tau: f64, b: f64, m: i64, range: (f64, f64), tol: f64) -> Result<SeparableSolution> {
    separable_vortex_from(k, tau, b, m, range, tol, DEFAULT_START_FRACTION)
}

/// Decaying separable solution with `ρ(t₀) = start_fraction·ρ*`, found by
/// bisection on `ln(ρ* − ρ(t_far))`.
pub fn separable_vortex_from(
    k: i64,
    tau: f64,
    b: f64,
    m: i64,
    range: (f64, f64),
    tol: f64,
    start_fraction: f64,
) -> Result<SeparableSolution> {
    check_params(k, tau, b, m, range, tol)?;
    if !(start_fraction > 0.0 && start_fraction < 1.0) {
        return Err(Error::Precondition(format!("start fraction {start_fraction} must lie in (0, 1)")));
    }
    let mut sol = SeparableSolution::fixed_point(k, tau, b, m, range)?;
    sol.tol = tol;
    let (t0, t1) = range;
    let kappa = sol.kappa();
    let t_far = t1 + RUN_IN / (kappa * (b * t1).exp());
    let target = (start_fraction - 1.0) * sol.rho_star;
    let miss = |x: f64| -> Result<f64> { Ok(sol.deviation_at(sol.start_from(t_far, x), t0)?[0] - target) };

    let (mut lo, mut hi) = (-700.0, (0.999 * sol.rho_star).ln());
    let (f_lo, f_hi) = (miss(lo)?, miss(hi)?);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::ShootingFailed(format!("no bracket: miss = {f_lo:.3e} at ln ε = {lo}, {f_hi:.3e} at {hi:.3}")));
    }
    let mut bisections = 0;
    while bisections < MAX_BISECTIONS && hi - lo > 1e-15 * lo.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        let f = miss(mid)?;
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        bisections += 1;
    }
    let x = 0.5 * (lo + hi);
    let start = sol.start_from(t_far, x);
    sol.start = Some(start);
    sol.bisections = bisections;

    let (end, _) = sol.integrator().solve(sol.rhs(), t_far, &[start.r, start.s], &[t1]).map_err(ode_error)?;
    let (at_start, traj) = sol.integrator().solve(sol.rhs(), t1, &end[0], &[t0]).map_err(ode_error)?;
    sol.final_defect = end[0][0].hypot(end[0][1]);
    sol.shooting_residual = (at_start[0][0] - target).abs();
    let mut pts: Vec<(f64, f64, f64)> =
        traj.t.iter().zip(&traj.y).map(|(t, y)| (*t, sol.rho_star + y[0], sol.eta_star + y[1])).collect();
    pts.reverse();
    sol.t = pts.iter().map(|p| p.0).collect();
    sol.rho = pts.iter().map(|p| p.1).collect();
    sol.eta = pts.iter().map(|p| p.2).collect();
    if sol.rho.iter().any(|r| *r <= 0.0) {
        return Err(Error::ShootingFailed("ρ left the positive half-line".into()));
    }
    Ok(sol)
}

/// Samples `u = ρ(t) e^{imθ}`, `η = η(t)` on the grid (circle model, temporal gauge).
pub fn to_field(sol: &SeparableSolution, grid: Grid) -> Result<CylinderField> {
    let times: Vec<f64> = (0..grid.nt).map(|i| grid.t(i)).collect();
    let values = sol.evaluate(&times)?;
    let mut field = CylinderField::zeros(grid, 1, 1);
    for (i, (rho, eta)) in values.into_iter().enumerate() {
        for k in 0..grid.ntheta {
            let node = field.node(i, k);
            field.u[node] = Complex64::from_polar(rho, sol.m as f64 * grid.theta(k));
            field.eta[node] = eta;
        }
    }
    Ok(field)
}

/// Realification `[[Re M, −Im M], [Im M, Re M]]`.
fn realify(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn restricted_eigenvalues(h: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let basis = null_space(s, SV_THRESHOLD);
    if basis.ncols() == 0 {
        return Vec::new();
    }
    let hs = basis.transpose() * h * &basis;
    let hs = (&hs + hs.transpose()) * 0.5;
    SymmetricEigen::new(hs).eigenvalues.iter().copied().collect()
}

/// Slice-Hessian spectrum from the constant-coefficient form obtained by
/// straightening `v_j = e^{−i c_j θ} w_j`, `c = Wᵀη₀`.
///
/// Coordinates off the support of `z₀` decouple and contribute `−(l + c_j)`
/// twice for every grid mode `l`; the support coordinates and `ξ` split into
/// one real block at `q = 0` and one Hermitian block per pair `±q`. Returned
/// eigenvalues are those with `|λ| ≤ bound`, which is complete as long as
/// `bound` stays well below `N_θ/2 − max|c|`.
pub fn fourier_hessian_blocks(c: &CriticalLoop, spec: &ModelSpec, ntheta: usize, bound: f64) -> Result<Vec<f64>> {
    let (n, d) = (spec.n, spec.d);
    let cw = spec.weight_pairing(&c.eta0);
    let support = spec.support_of(&c.z0);
    let half = (ntheta / 2) as i64 - 1;
    let cmax = cw.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if bound + cmax >= half as f64 {
        return Err(Error::Precondition(format!("bound {bound} too large for N_θ = {ntheta}")));
    }
    let mut out = Vec::new();
    for j in (0..n).filter(|j| !support.contains(j)) {
        for l in -half..=half {
            let lam = -(l as f64 + cw[j]);
            if lam.abs() <= bound {
                out.push(lam);
                out.push(lam);
            }
        }
    }
    let ns = support.len();
    let z0: Vec<Complex64> = support.iter().map(|&j| c.z0[j]).collect();
    let w = |a: usize, p: usize| spec.weights[a][support[p]] as f64;

    // q = 0: real coordinates (Re w, Im w, ξ)
    let dim0 = 2 * ns + d;
    let mut h0 = DMatrix::<f64>::zeros(dim0, dim0);
    let mut s0 = DMatrix::<f64>::zeros(d, dim0);
    for p in 0..ns {
        for a in 0..d {
            let x = 2 * ns + a;
            h0[(p, x)] = -w(a, p) * z0[p].re;
            h0[(x, p)] = h0[(p, x)];
            h0[(ns + p, x)] = -w(a, p) * z0[p].im;
            h0[(x, ns + p)] = h0[(ns + p, x)];
            s0[(a, p)] = -w(a, p) * z0[p].im;
            s0[(a, ns + p)] = w(a, p) * z0[p].re;
        }
    }
    out.extend(restricted_eigenvalues(&h0, &s0).into_iter().filter(|l| l.abs() <= bound));

    // q > 0: w = A e^{iqθ} + B e^{−iqθ}, ξ = X e^{iqθ} + c.c., in the
    // variables (A, conj B, √2 X)
    let qmax = half - cmax.ceil() as i64;
    let zero = Complex64::new(0.0, 0.0);
    for q in 1..=qmax {
        let qf = q as f64;
        let dimq = 2 * ns + d;
        let mut hq = DMatrix::from_element(dimq, dimq, zero);
        let mut sq = DMatrix::from_element(d, dimq, zero);
        for p in 0..ns {
            hq[(p, p)] = Complex64::new(-qf, 0.0);
            hq[(ns + p, ns + p)] = Complex64::new(qf, 0.0);
            for a in 0..d {
                let x = 2 * ns + a;
                hq[(p, x)] = -z0[p] * w(a, p) * FRAC_1_SQRT_2;
                hq[(x, p)] = hq[(p, x)].conj();
                hq[(ns + p, x)] = -z0[p].conj() * w(a, p) * FRAC_1_SQRT_2;
                hq[(x, ns + p)] = hq[(ns + p, x)].conj();
                sq[(a, p)] = z0[p].conj() * w(a, p);
                sq[(a, ns + p)] = -z0[p] * w(a, p);
            }
        }
        for a in 0..d {
            sq[(a, 2 * ns + a)] = Complex64::new(-2f64.sqrt() * qf, 0.0);
        }
        out.extend(restricted_eigenvalues(&realify(&hq), &realify(&sq)).into_iter().filter(|l| l.abs() <= bound));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{vortex_residual, MetricSpec};
    use crate::loops::hessian_assemble;

    fn residual_sup(sol: &SeparableSolution, nt: usize, nth: usize) -> f64 {
        let grid = Grid::new(sol.t0, sol.t1, nt, nth).unwrap();
        let field = to_field(sol, grid).unwrap();
        let spec = ModelSpec::circle(sol.k, sol.tau);
        vortex_residual(&field, &spec, &MetricSpec::new(sol.b).unwrap()).unwrap().sup
    }

    #[test]
    fn fixed_point_is_on_shell() {
        let sol = SeparableSolution::fixed_point(3, 1.5, 0.0, 1, (0.0, 2.0)).unwrap();
        assert!(residual_sup(&sol, 32, 16) <= 1e-12);
    }

    #[test]
    fn linearization_rate_is_sqrt_2k_tau() {
        let [lo, hi] = linearization_eigenvalues(1, 0.5);
        assert!((lo + 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        let [lo, _] = linearization_eigenvalues(3, 1.5);
        assert!((lo + 3.0).abs() < 1e-13);
    }

    #[test]
    fn decaying_branch_k1() {
        let sol = separable_vortex(1, 0.5, 0.0, 0, (0.0, 14.0), 1e-12).unwrap();
        assert!(sol.shooting_residual < 1e-8, "{}", sol.shooting_residual);
        assert!(sol.final_defect < 1e-5, "{}", sol.final_defect);
        assert!(sol.rho.iter().all(|r| *r > 0.0));
        assert!((sol.rho[0] - 0.5).abs() < 1e-8);
        assert!(residual_sup(&sol, 512, 64) <= 1e-7);
    }

    #[test]
    fn residual_is_fourth_order_in_t() {
        for (k, tau, b, m, t1) in [(1, 0.5, 0.0, 0, 6.0), (1, 0.5, 1.0, 0, 2.0), (3, 1.5, 0.0, 1, 3.0)] {
            let sol = separable_vortex(k, tau, b, m, (0.0, t1), 1e-13).unwrap();
            let r1 = residual_sup(&sol, 129, 16);
            let r2 = residual_sup(&sol, 257, 16);
            let ratio = r1 / r2;
            assert!((11.0..=21.0).contains(&ratio), "(k, b, m) = ({k}, {b}, {m}): ratio {ratio}");
        }
    }

    #[test]
    fn k3_mode_one_limit() {
        let sol = separable_vortex(3, 1.5, 0.0, 1, (0.0, 6.0), 1e-12).unwrap();
        assert!((sol.eta.last().unwrap() + 1.0 / 3.0).abs() < 1e-6);
        let spec = ModelSpec::circle(3, 1.5);
        let c = CriticalLoop::new(&spec, vec![Complex64::new(sol.rho_star, 0.0)], vec![sol.eta_star]).unwrap();
        assert_eq!(c.order, 3);
    }

    #[test]
    fn b1_branch_decays() {
        let sol = separable_vortex(1, 0.5, 1.0, 0, (0.0, 3.0), 1e-12).unwrap();
        assert!(sol.final_defect < 1e-6, "{}", sol.final_defect);
        assert!(residual_sup(&sol, 512, 16) < 1e-5);
    }

    #[test]
    fn errors() {
        let sol = separable_vortex(1, 0.5, 0.0, 0, (0.0, 4.0), 1e-10).unwrap();
        let grid = Grid::new(0.0, 5.0, 32, 16).unwrap();
        assert!(matches!(to_field(&sol, grid), Err(Error::RangeMismatch(_))));
        assert!(matches!(separable_vortex(3, 1.5, 0.0, 2, (0.0, 4.0), 1e-10), Err(Error::Precondition(_))));
        assert!(matches!(separable_vortex(1, -1.0, 0.0, 0, (0.0, 4.0), 1e-10), Err(Error::Precondition(_))));
    }

    fn compare_with_grid(spec: &ModelSpec, c: &CriticalLoop, nth: usize, bound: f64) {
        let pkg = hessian_assemble(c, spec, nth).unwrap();
        let grid: Vec<f64> = pkg.eigenvalues_within(bound);
        let oracle = fourier_hessian_blocks(c, spec, nth, bound).unwrap();
        assert_eq!(grid.len(), oracle.len(), "grid {grid:?}\noracle {oracle:?}");
        let worst = grid.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-8, "worst {worst}");
        assert!(pkg.symmetry_defect <= 1e-10);
    }

    #[test]
    fn fourier_blocks_match_grid_circle() {
        let spec = ModelSpec::circle(1, 0.5);
        let c = CriticalLoop::new(&spec, vec![Complex64::new(1.0, 0.0)], vec![0.0]).unwrap();
        compare_with_grid(&spec, &c, 64, 10.3);
        let spec = ModelSpec::circle(3, 1.5);
        let c = CriticalLoop::new(&spec, vec![Complex64::new(1.0, 0.0)], vec![-1.0 / 3.0]).unwrap();
        compare_with_grid(&spec, &c, 64, 10.3);
    }

    #[test]
    fn fourier_blocks_match_grid_two_coordinates() {
        let spec = ModelSpec::new(vec![vec![2, 3]], vec![1.0], None).unwrap();
        let c = CriticalLoop::new(&spec, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], vec![-0.5]).unwrap();
        assert_eq!(c.order, 2);
        compare_with_grid(&spec, &c, 64, 10.3);
        let spec = ModelSpec::new(vec![vec![1, 1]], vec![1.0], None).unwrap();
        let z = Complex64::new(1.0, 0.0);
        let c = CriticalLoop::new(&spec, vec![z, z * Complex64::new(0.6, 0.8)], vec![0.0]).unwrap();
        compare_with_grid(&spec, &c, 64, 10.3);
    }
}
