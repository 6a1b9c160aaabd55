//! Observables along on-shell fields, log-linear rate fits, limit extraction
//! and the decay-rate relation checks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{covariant_d, curvature, energy_density, moment_grid, row_integrals, vortex_residual, CylinderField, MetricSpec};
use crate::gauge::{act_on_loop, LoopGauge};
use crate::loops::{isoperimetric_constant, isotropy_order, local_action, loop_residual, nearest_critical, CriticalLoop, DistanceReport, GaugedLoop};
use crate::model::ModelSpec;
use crate::spectral::{cumulative_integral_fd4, kahan_sum};

pub const D_ETA_U: &str = "d_eta_u";
pub const MOMENT: &str = "mu";
pub const CURVATURE: &str = "curvature";
pub const TAIL_ENERGY: &str = "tail_energy";
pub const ACTION: &str = "action";
pub const ETA_DISTANCE: &str = "eta_distance";
pub const U_DISTANCE: &str = "u_distance";

/// A sampled observable; `t` is increasing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub t: Vec<f64>,
    pub value: Vec<f64>,
}

impl Series {
    fn new(name: &str) -> Self {
        Series { name: name.to_string(), t: Vec::new(), value: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitPolicy {
    pub min_r2: f64,
    pub min_samples: usize,
    /// Trailing fraction of the time range left out of every window.
    pub exclude_tail: f64,
}

impl Default for FitPolicy {
    fn default() -> Self {
        FitPolicy { min_r2: 0.99, min_samples: 20, exclude_tail: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares line through `(t, ln v)` on the index range `lo..=hi`.
fn line_fit(t: &[f64], v: &[f64], lo: usize, hi: usize) -> Fit {
    let m = (hi - lo + 1) as f64;
    let tm = t[lo..=hi].iter().sum::<f64>() / m;
    let ym = v[lo..=hi].iter().map(|x| x.ln()).sum::<f64>() / m;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for i in lo..=hi {
        let (dt, dy) = (t[i] - tm, v[i].ln() - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let ss_res: f64 = (lo..=hi).map(|i| (v[i].ln() - ym - slope * (t[i] - tm)).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Fit { slope, intercept: ym - slope * tm, r2, window: (t[lo], t[hi]), samples: hi - lo + 1 }
}

/// Last index inside the admissible part of the time range.
fn admissible_end(t: &[f64], exclude_tail: f64) -> Option<usize> {
    let (first, last) = (*t.first()?, *t.last()?);
    let cut = last - exclude_tail * (last - first);
    t.iter().rposition(|&x| x <= cut + 1e-12 * (last - first).abs())
}

/// Rate fit on the largest trailing window that is positive, has at least
/// `min_samples` points, reaches `R² ≥ min_r2` and has negative slope.
pub fn fit_rate(series: &Series, policy: &FitPolicy) -> Result<Fit> {
    let (t, v) = (&series.t, &series.value);
    let no_window = |why: &str| Error::NoWindow(format!("{}: {why}", series.name));
    let end = admissible_end(t, policy.exclude_tail).ok_or_else(|| no_window("empty series"))?;
    let mut start = end + 1;
    while start > 0 && v[start - 1].is_finite() && v[start - 1] > 0.0 {
        start -= 1;
    }
    if end + 1 < start + policy.min_samples.max(2) {
        return Err(no_window("too few positive samples before the cutoff"));
    }
    for lo in start..=end + 1 - policy.min_samples.max(2) {
        let fit = line_fit(t, v, lo, end);
        if fit.r2 >= policy.min_r2 && fit.slope < 0.0 {
            return Ok(fit);
        }
    }
    Err(no_window("no trailing window with the required R² and a decaying slope"))
}

/// Fit restricted to the samples with `t` inside `window`.
pub fn fit_on_window(series: &Series, window: (f64, f64)) -> Result<Fit> {
    let eps = 1e-9 * (window.1 - window.0).abs().max(1.0);
    let idx: Vec<usize> = (0..series.t.len()).filter(|&i| series.t[i] >= window.0 - eps && series.t[i] <= window.1 + eps).collect();
    let (lo, hi) = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => return Err(Error::NoWindow(format!("{}: no samples in [{}, {}]", series.name, window.0, window.1))),
    };
    if (lo..=hi).any(|i| !(series.value[i].is_finite() && series.value[i] > 0.0)) {
        return Err(Error::NoWindow(format!("{}: nonpositive sample in the common window", series.name)));
    }
    Ok(line_fit(&series.t, &series.value, lo, hi))
}

/// The limit of a field as `t → ∞`, read off at the last row.
#[derive(Clone, Debug)]
pub struct ExtractedLimit {
    /// Limit loop in the gauge of the input field.
    pub limit: GaugedLoop,
    pub critical: CriticalLoop,
    /// Closed gauge `Φ` with `Φ·η(T, ·)` constant.
    pub gauge: LoopGauge,
    /// `‖Φ·η(T, ·) − η₀‖_∞`.
    pub constancy: f64,
    /// `‖Υ̃‖_sup` of the limit loop.
    pub upsilon_sup: f64,
    /// `𝓛(T)`, the energy left beyond the grid.
    pub tail_energy: f64,
    pub distances: DistanceReport,
}

pub const DEFAULT_MAX_TAIL: f64 = 1e-4;

pub fn extract_limit(field: &CylinderField, spec: &ModelSpec, max_tail: f64) -> Result<ExtractedLimit> {
    field.check_model(spec)?;
    let y = field.row_loop(field.grid.nt - 1);
    let tail = local_action(&y, spec, None)?;
    if !(tail <= max_tail) {
        return Err(Error::Precondition(format!(
            "tail energy at T = {} is {tail:.3e} > {max_tail:.3e}; the run is too short",
            field.grid.t1
        )));
    }
    let nc = nearest_critical(&y, spec, None)?;
    let LoopGauge::Torus { periodic, drift } = &nc.gauge else {
        return Err(Error::BackendMismatch("torus gauge expected"));
    };
    let eta0 = &nc.critical.eta0;
    // h_η = g·exp(θη₀) closes up
    let phi = LoopGauge::Torus { periodic: periodic.clone(), drift: drift.iter().zip(eta0).map(|(w, e)| w + e).collect() };
    let straight = act_on_loop(spec, &phi, &y)?;
    let constancy = straight
        .eta_torus()?
        .iter()
        .flat_map(|e| e.iter().zip(eta0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let sample = nc.critical.sample(spec, field.grid.ntheta);
    let LoopGauge::Torus { periodic, drift } = &phi else { unreachable!() };
    let inverse = LoopGauge::Torus {
        periodic: periodic.iter().map(|p| p.iter().map(|x| -x).collect()).collect(),
        drift: drift.iter().map(|x| -x).collect(),
    };
    let limit = act_on_loop(spec, &inverse, &sample)?;
    let res = loop_residual(&limit, spec)?;
    let upsilon_sup = res
        .upsilon
        .iter()
        .map(|u| u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .chain(res.mu.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .fold(0.0, f64::max);
    Ok(ExtractedLimit {
        limit,
        critical: nc.critical,
        gauge: phi,
        constancy,
        upsilon_sup,
        tail_energy: tail,
        distances: nc.report,
    })
}

/// Time series of an on-shell field plus the per-row loop norms used by the
/// isoperimetric check.
#[derive(Clone, Debug)]
pub struct Observables {
    pub series: Vec<Series>,
    /// `∮|D_θu|² dθ` per row.
    pub d_theta_l2sq: Vec<f64>,
    /// `∮|μ(u)|² dθ` per row.
    pub mu_l2sq: Vec<f64>,
    pub limit: Option<ExtractedLimit>,
    /// Why the limit could not be extracted, if it could not.
    pub limit_error: Option<String>,
}

impl Observables {
    pub fn get(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// `t,obs_name,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,obs_name,value")?;
        for s in &self.series {
            for (t, v) in s.t.iter().zip(&s.value) {
                writeln!(w, "{t},{},{v}", s.name)?;
            }
        }
        Ok(())
    }
}

pub fn observables(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Result<Observables> {
    observables_with(field, spec, metric, DEFAULT_MAX_TAIL)
}

pub fn observables_with(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec, max_tail: f64) -> Result<Observables> {
    field.check_model(spec)?;
    let grid = field.grid;
    let (n, d, nth) = (field.n, field.d, grid.ntheta);
    let (dt, dth) = covariant_d(field, spec);
    let f = curvature(field);
    let mu = moment_grid(field, spec);
    let norm_c = |v: &[num_complex::Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let norm_r = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut du = Series::new(D_ETA_U);
    let mut sm = Series::new(MOMENT);
    let mut sf = Series::new(CURVATURE);
    let mut d_theta_l2sq = Vec::with_capacity(grid.nt);
    let mut mu_l2sq = Vec::with_capacity(grid.nt);
    for i in 0..grid.nt {
        let t = grid.t(i);
        let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
        let (mut s1, mut s2) = (Vec::with_capacity(nth), Vec::with_capacity(nth));
        for k in 0..nth {
            let p = i * nth + k;
            let dthn = norm_c(&dth[p * n..(p + 1) * n]);
            a = a.max(norm_c(&dt[p * n..(p + 1) * n]) + dthn);
            let m = norm_r(&mu[p * d..(p + 1) * d]);
            b = b.max(m);
            c = c.max(norm_r(&f[p * d..(p + 1) * d]));
            s1.push(dthn * dthn);
            s2.push(m * m);
        }
        for (s, v) in [(&mut du, a), (&mut sm, b), (&mut sf, c)] {
            s.t.push(t);
            s.value.push(v);
        }
        d_theta_l2sq.push(grid.htheta() * kahan_sum(s1));
        mu_l2sq.push(grid.htheta() * kahan_sum(s2));
    }

    let mut action = Series::new(ACTION);
    for i in 0..grid.nt {
        if let Ok(l) = local_action(&field.row_loop(i), spec, None) {
            action.t.push(grid.t(i));
            action.value.push(l);
        }
    }

    // E[t_i, T] accumulated from the far end so small tails keep their digits
    let mut rows = row_integrals(&grid, &energy_density(field, spec, metric));
    rows.reverse();
    let mut cum = cumulative_integral_fd4(&rows, grid.ht());
    cum.reverse();
    let (limit, limit_error) = match extract_limit(field, spec, max_tail) {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let end_action = match (&limit, action.t.last()) {
        (Some(l), _) => Some(l.tail_energy),
        (None, Some(&t)) if t == grid.t1 => action.value.last().copied(),
        _ => None,
    };
    let mut tail = Series::new(TAIL_ENERGY);
    if let Some(l_end) = end_action {
        for (i, e) in cum.iter().enumerate() {
            tail.t.push(grid.t(i));
            tail.value.push(e + l_end);
        }
    }

    let mut series = vec![du, sm, sf, tail, action];
    if let Some(lim) = &limit {
        let eta_inf = lim.limit.eta_torus()?;
        let mut de = Series::new(ETA_DISTANCE);
        let mut dx = Series::new(U_DISTANCE);
        for i in 0..grid.nt {
            let (mut se, mut sx) = (Vec::with_capacity(nth), Vec::with_capacity(nth));
            for k in 0..nth {
                se.push(field.eta_at(i, k).iter().zip(&eta_inf[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
                sx.push(field.u_at(i, k).iter().zip(&lim.limit.x[k]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>());
            }
            de.t.push(grid.t(i));
            de.value.push((grid.htheta() * kahan_sum(se)).sqrt());
            dx.t.push(grid.t(i));
            dx.value.push((grid.htheta() * kahan_sum(sx)).sqrt());
        }
        series.push(de);
        series.push(dx);
    }
    Ok(Observables { series, d_theta_l2sq, mu_l2sq, limit, limit_error })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayPolicy {
    pub fit: FitPolicy,
    pub tol_rel: f64,
    /// Tolerance on `slope(|F|) − slope(|μ|) − 2b`.
    pub tol_curvature_moment: f64,
    pub delta_min: f64,
    pub action_threshold: f64,
    /// Sup vortex residual below which a field counts as on-shell.
    pub on_shell_tol: f64,
    pub max_tail: f64,
    pub c0: f64,
    pub c1: f64,
}

impl Default for DecayPolicy {
    fn default() -> Self {
        DecayPolicy {
            fit: FitPolicy::default(),
            tol_rel: 0.1,
            tol_curvature_moment: 0.05,
            delta_min: 0.05,
            action_threshold: 1e-6,
            on_shell_tol: 1e-6,
            max_tail: DEFAULT_MAX_TAIL,
            c0: 10.0,
            c1: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitRecord {
    pub name: String,
    pub slope: f64,
    /// `log C`.
    pub intercept: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

impl FitRecord {
    fn new(name: &str, f: Fit) -> Self {
        FitRecord { name: name.into(), slope: f.slope, intercept: f.intercept, r2: f.r2, window: f.window, samples: f.samples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub label: char,
    pub name: String,
    /// `None` for informational entries and for checks that could not be evaluated.
    pub passed: Option<bool>,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Isoperimetric {
    pub c1: f64,
    /// Largest `𝓛/(‖d_ηu‖² + c₁‖μ‖²)` over the rows where `𝓛` is defined.
    pub min_feasible_c0: f64,
    /// Whether `c₀ = policy.c0` works at every such row.
    pub holds: bool,
    pub rows: usize,
    /// `1/(2·c₀·max(1, c₁))` for the minimal feasible `c₀`.
    pub implied_rate_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub b: f64,
    pub residual_sup: f64,
    /// Each observable fitted on its own window.
    pub records: Vec<FitRecord>,
    /// The `|d_ηu|` window, on which the relation slopes are fitted.
    pub common_window: Option<(f64, f64)>,
    pub relation_slopes: Vec<FitRecord>,
    pub checks: Vec<Check>,
    pub delta: Option<f64>,
    pub holonomy_order: Option<u64>,
    /// `1/m`.
    pub floor: Option<f64>,
    pub tail_energy: Option<f64>,
    pub limit_constancy: Option<f64>,
    pub limit_upsilon: Option<f64>,
    pub isoperimetric: Option<Isoperimetric>,
}

impl DecayReport {
    fn not_applicable(b: f64, residual_sup: f64, reason: String) -> Self {
        DecayReport {
            applicable: false,
            reason: Some(reason),
            b,
            residual_sup,
            records: Vec::new(),
            common_window: None,
            relation_slopes: Vec::new(),
            checks: Vec::new(),
            delta: None,
            holonomy_order: None,
            floor: None,
            tail_energy: None,
            limit_constancy: None,
            limit_upsilon: None,
            isoperimetric: None,
        }
    }

    pub fn check(&self, label: char) -> Option<&Check> {
        self.checks.iter().find(|c| c.label == label)
    }

    /// Every evaluated, non-informational check passed.
    pub fn all_passed(&self) -> bool {
        self.applicable && self.checks.iter().filter(|c| c.label != 'g').all(|c| c.passed == Some(true))
    }

    pub fn slope(&self, name: &str) -> Option<f64> {
        self.relation_slopes.iter().find(|r| r.name == name).map(|r| r.slope)
    }
}

fn check(label: char, name: &str, value: Option<f64>, target: f64, tolerance: f64, ok: impl Fn(f64) -> bool, note: &str) -> Check {
    match value {
        Some(v) if v.is_finite() => Check {
            label,
            name: name.into(),
            passed: Some(ok(v)),
            value: v,
            target,
            tolerance,
            note: note.into(),
        },
        _ => Check {
            label,
            name: name.into(),
            passed: Some(false),
            value: f64::NAN,
            target,
            tolerance,
            note: format!("{note}; not evaluable"),
        },
    }
}

pub fn verify_theorem(field: &CylinderField, spec: &ModelSpec, metric: &MetricSpec) -> Result<DecayReport> {
    verify_theorem_with(field, spec, metric, &DecayPolicy::default())
}

pub fn verify_theorem_with(
    field: &CylinderField,
    spec: &ModelSpec,
    metric: &MetricSpec,
    policy: &DecayPolicy,
) -> Result<DecayReport> {
    field.check_model(spec)?;
    let b = metric.b;
    let residual_sup = match vortex_residual(field, spec, metric) {
        Ok(r) => r.sup,
        Err(e) => return Ok(DecayReport::not_applicable(b, f64::NAN, e.to_string())),
    };
    if !(residual_sup <= policy.on_shell_tol) {
        return Ok(DecayReport::not_applicable(
            b,
            residual_sup,
            format!("off-shell: vortex residual {residual_sup:.3e} > {:.3e}", policy.on_shell_tol),
        ));
    }
    let obs = observables_with(field, spec, metric, policy.max_tail)?;
    let Some(limit) = &obs.limit else {
        let why = obs.limit_error.clone().unwrap_or_default();
        return Ok(DecayReport::not_applicable(b, residual_sup, format!("limit extraction failed: {why}")));
    };

    let records: Vec<FitRecord> = obs
        .series
        .iter()
        .filter(|s| s.name != ACTION)
        .filter_map(|s| fit_rate(s, &policy.fit).ok().map(|f| FitRecord::new(&s.name, f)))
        .collect();
    let common = records.iter().find(|r| r.name == D_ETA_U).map(|r| r.window);
    let relation_slopes: Vec<FitRecord> = match common {
        Some(w) => obs
            .series
            .iter()
            .filter(|s| s.name != ACTION)
            .filter_map(|s| fit_on_window(s, w).ok().map(|f| FitRecord::new(&s.name, f)))
            .collect(),
        None => Vec::new(),
    };
    let slope = |name: &str| relation_slopes.iter().find(|r| r.name == name).map(|r| r.slope);
    let s_du = slope(D_ETA_U);
    let delta = s_du.map(|s| -s);
    let diff = |a: &str, b: &str| Some(slope(a)? - slope(b)?);
    let tol = policy.tol_rel;
    let m = isotropy_order(&limit.critical);

    let mut checks = vec![
        check('a', "derivative_decays", s_du, -policy.delta_min, 0.0, |v| v <= -policy.delta_min, "slope(|d_ηu|) ≤ −δ_min"),
        check('b', "moment_vs_derivative", diff(MOMENT, D_ETA_U), -b, tol, |v| (v + b).abs() <= tol, "slope(|μ|) − slope(|d_ηu|) = −b"),
        check('c', "curvature_vs_derivative", diff(CURVATURE, D_ETA_U), b, tol, |v| (v - b).abs() <= tol, "slope(|F|) − slope(|d_ηu|) = +b"),
        check(
            'c',
            "curvature_vs_moment",
            diff(CURVATURE, MOMENT),
            2.0 * b,
            policy.tol_curvature_moment,
            |v| (v - 2.0 * b).abs() <= policy.tol_curvature_moment,
            "slope(|F|) − slope(|μ|) = 2b",
        ),
    ];
    let tail_rel = match (slope(TAIL_ENERGY), s_du) {
        (Some(e), Some(s)) if s != 0.0 => Some((e - 2.0 * s) / (2.0 * s).abs()),
        _ => None,
    };
    checks.push(check('d', "tail_energy_vs_derivative", tail_rel, 0.0, tol, |v| v.abs() <= tol, "(slope(E) − 2·slope(|d_ηu|)) / |2·slope(|d_ηu|)|"));
    // p = 2, so δ + b(2/p − 1) = δ
    let bound = delta.map(|d| -(1.0 - tol) * d).unwrap_or(f64::NAN);
    for name in [U_DISTANCE, ETA_DISTANCE] {
        checks.push(check('e', &format!("{name}_decays"), slope(name), bound, tol, |v| v <= bound, "slope ≤ −(1 − tol_rel)·δ"));
    }
    checks.push(check(
        'f',
        "action_at_end",
        Some(limit.tail_energy),
        policy.action_threshold,
        0.0,
        |v| v <= policy.action_threshold,
        "𝓛(T) ≤ threshold",
    ));
    checks.push(Check {
        label: 'g',
        name: "rate_vs_holonomy_ceiling".into(),
        passed: None,
        value: delta.unwrap_or(f64::NAN),
        target: 1.0 / m as f64,
        tolerance: 0.0,
        note: "informational: fitted δ against 1/m".into(),
    });

    let action = obs.get(ACTION).expect("action series");
    let mut worst: f64 = 0.0;
    let mut holds = true;
    for (t, l) in action.t.iter().zip(&action.value) {
        let i = field.grid.row_of(*t)?;
        let c = isoperimetric_constant(*l, obs.d_theta_l2sq[i], obs.mu_l2sq[i], policy.c1);
        worst = worst.max(c);
        holds &= *l <= policy.c0 * (obs.d_theta_l2sq[i] + policy.c1 * obs.mu_l2sq[i]);
    }
    let isoperimetric = Isoperimetric {
        c1: policy.c1,
        min_feasible_c0: worst,
        holds,
        rows: action.t.len(),
        implied_rate_floor: 1.0 / (2.0 * worst * policy.c1.max(1.0)),
    };

    Ok(DecayReport {
        applicable: true,
        reason: None,
        b,
        residual_sup,
        records,
        common_window: common,
        relation_slopes,
        checks,
        delta,
        holonomy_order: Some(m),
        floor: Some(1.0 / m as f64),
        tail_energy: Some(limit.tail_energy),
        limit_constancy: Some(limit.constancy),
        limit_upsilon: Some(limit.upsilon_sup),
        isoperimetric: Some(isoperimetric),
    })
}
