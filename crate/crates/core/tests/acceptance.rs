//! Acceptance suite. Prints one line per criterion, then fails if any is red.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vortexlab::cli::{run, RunConfig, Scenario};
use vortexlab::decay::{verify_theorem_with, DecayPolicy, DecayReport};
use vortexlab::fields::{energy_identity, total_energy, vortex_residual, CylinderField, Grid, MetricSpec};
use vortexlab::gauge::{act_on_field, holonomy, PathGauge, Sampling};
use vortexlab::lie::{exp_g, AlgebraElement, CMatrix, GroupElement};
use vortexlab::loops::{hessian_assemble, local_action, CriticalLoop};
use vortexlab::model::{omega, ModelSpec};
use vortexlab::oracles::{fourier_hessian_blocks, linearization_eigenvalues, separable_vortex, to_field};
use vortexlab::solver::{relax, SolveConfig};

const TAU: f64 = 0.5;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

/// A certified on-shell run of the separable oracle.
struct Certified {
    label: String,
    field: CylinderField,
    spec: ModelSpec,
    metric: MetricSpec,
    report: DecayReport,
}

/// `(k, b, m, T, N_t)`; `N_θ = 32` throughout.
const SCENARIOS: [(i64, f64, i64, f64, usize); 3] = [(1, 0.0, 0, 14.0, 449), (1, 1.0, 0, 3.0, 257), (3, 0.0, 1, 5.0, 257)];

fn certify(k: i64, b: f64, m: i64, t1: f64, nt: usize, ntheta: usize) -> Certified {
    let spec = ModelSpec::circle(k, TAU);
    let metric = MetricSpec::new(b).unwrap();
    let sol = separable_vortex(k, TAU, b, m, (0.0, t1), 1e-12).unwrap();
    let seed = to_field(&sol, Grid::new(0.0, t1, nt, ntheta).unwrap()).unwrap();
    let solver = SolveConfig { tol_residual: 1e-6, ..SolveConfig::default() };
    let (field, cert) = relax(&seed, &spec, &metric, &solver).unwrap();
    assert!(cert.final_residual_sup <= 1e-6);
    let report = verify_theorem_with(&field, &spec, &metric, &DecayPolicy::default()).unwrap();
    Certified { label: format!("(k={k}, b={b}, m={m})"), field, spec, metric, report }
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn skew(a: f64, b: f64, c: f64) -> CMatrix {
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 0)] = Complex64::new(0.0, a);
    m[(1, 1)] = Complex64::new(0.0, -a);
    m[(0, 1)] = Complex64::new(c, b);
    m[(1, 0)] = Complex64::new(-c, b);
    m
}

fn c1_holonomy(rng: &mut ChaCha8Rng) -> Line {
    let n = 256;
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        for _ in 0..10 {
            let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let hol = holonomy(&vec![AlgebraElement::Torus(xi.clone()); n], Sampling::Spectral).unwrap();
            let expect: Vec<f64> = xi.iter().map(|x| -2.0 * PI * x).collect();
            for (a, e) in hol.angles().unwrap().iter().zip(&expect) {
                worst = worst.max(angle_dist(*a, *e));
            }
        }
    }
    // piecewise-constant matrix connection against the ordered product of cell exponentials
    let cells: Vec<CMatrix> = (0..64)
        .map(|_| skew(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let eta: Vec<AlgebraElement> = cells.iter().map(|m| AlgebraElement::Matrix(m.clone())).collect();
    let GroupElement::Matrix(hol) = holonomy(&eta, Sampling::Hold).unwrap() else { unreachable!() };
    let h = 2.0 * PI / cells.len() as f64;
    let mut product = CMatrix::identity(2, 2);
    for m in &cells {
        let GroupElement::Matrix(step) = exp_g(&AlgebraElement::skew_hermitian(m * Complex64::new(-h, 0.0))) else {
            unreachable!()
        };
        product = step * product;
    }
    let matrix = (hol - product).norm();
    Line {
        id: 1,
        name: "holonomy exactness",
        passed: worst <= 1e-10 && matrix <= 1e-8,
        detail: format!("torus angle error {worst:.2e} (≤ 1e-10), matrix product error {matrix:.2e} (≤ 1e-8)"),
    }
}

fn c2_hamiltonian(rng: &mut ChaCha8Rng) -> Line {
    let models = [
        ModelSpec::circle(1, TAU),
        ModelSpec::circle(3, TAU),
        ModelSpec::new(vec![vec![2, 3]], vec![1.0], None).unwrap(),
        ModelSpec::new(vec![vec![1, 0], vec![0, 1]], vec![1.0, 1.0], None).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for spec in &models {
        for _ in 0..100 {
            let mut c = || Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let z: Vec<Complex64> = (0..spec.n).map(|_| c()).collect();
            let w: Vec<Complex64> = (0..spec.n).map(|_| c()).collect();
            let xi: Vec<f64> = (0..spec.d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lhs = omega(&spec.infinitesimal_action(&xi, &z), &w);
            let rhs: f64 = spec.d_moment(&z, &w).iter().zip(&xi).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Line {
        id: 2,
        name: "hamiltonian identity",
        passed: worst <= 1e-10,
        detail: format!("max |ω(X_ξz, w) − ⟨dμ(z)w, ξ⟩| = {worst:.2e} over 4 models × 100 samples"),
    }
}

fn c3_oracle_order() -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for (k, b, m, t1) in [(1, 0.0, 0, 6.0), (1, 1.0, 0, 2.0), (3, 0.0, 1, 3.0)] {
        let sol = separable_vortex(k, TAU, b, m, (0.0, t1), 1e-13).unwrap();
        let spec = ModelSpec::circle(k, TAU);
        let metric = MetricSpec::new(b).unwrap();
        let res = |nt: usize| {
            let field = to_field(&sol, Grid::new(0.0, t1, nt, 16).unwrap()).unwrap();
            vortex_residual(&field, &spec, &metric).unwrap().sup
        };
        let r: Vec<f64> = [65, 129, 257].into_iter().map(res).collect();
        let ratios = [r[0] / r[1], r[1] / r[2]];
        passed &= ratios.iter().all(|q| (11.0..=21.0).contains(q));
        parts.push(format!("({k},{b},{m}) ratios {:.2}, {:.2}", ratios[0], ratios[1]));
    }
    Line { id: 3, name: "oracle on-shell order", passed, detail: format!("{} (each in [11, 21])", parts.join("; ")) }
}

fn c4_energy(runs: &[Certified]) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for r in runs {
        let g = r.field.grid;
        let id = energy_identity(&r.field, &r.spec, &r.metric, (g.t0, g.t1)).unwrap();
        let rel = (id.energy - id.topological).abs() / id.energy.max(1e-8);
        passed &= rel <= 1e-4;
        parts.push(format!("{} E = {:.6}, rel {rel:.2e}", r.label, id.energy));
    }
    Line { id: 4, name: "energy identity", passed, detail: format!("{} (≤ 1e-4)", parts.join("; ")) }
}

fn c5_action(runs: &[Certified]) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for r in runs {
        let g = r.field.grid;
        let q = (g.nt - 1) / 4;
        let mut worst: f64 = 0.0;
        for (i1, i2) in [(q, 2 * q), (2 * q, 3 * q), (3 * q, g.nt - 1)] {
            let e = total_energy(&r.field, &r.spec, &r.metric, (g.t(i1), g.t(i2))).unwrap();
            let l1 = local_action(&r.field.row_loop(i1), &r.spec, None).unwrap();
            let l2 = local_action(&r.field.row_loop(i2), &r.spec, None).unwrap();
            worst = worst.max((e - (l1 - l2)).abs() / e.max(1e-8));
        }
        passed &= worst <= 1e-4;
        parts.push(format!("{} worst band {worst:.2e}", r.label));
    }
    let mut crit_worst: f64 = 0.0;
    for (k, eta0) in [(1, 0.0), (3, -1.0 / 3.0), (3, 1.0 / 3.0)] {
        let spec = ModelSpec::circle(k, TAU);
        let c = CriticalLoop::new(&spec, spec.level_point().unwrap(), vec![eta0]).unwrap();
        crit_worst = crit_worst.max(local_action(&c.sample(&spec, 64), &spec, None).unwrap().abs());
    }
    passed &= crit_worst <= 1e-10;
    Line {
        id: 5,
        name: "action identity",
        passed,
        detail: format!("{} (≤ 1e-4); |𝓛(critical)| = {crit_worst:.2e} (≤ 1e-10)", parts.join("; ")),
    }
}

fn c6_relations(runs: &[Certified]) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for r in runs {
        let ok = r.report.applicable
            && r.report.checks.iter().filter(|c| "abcd".contains(c.label)).all(|c| c.passed == Some(true));
        passed &= ok;
        let v = |name: &str| r.report.checks.iter().find(|c| c.name == name).map_or(f64::NAN, |c| c.value);
        parts.push(format!(
            "{} μ−du {:+.3}, F−μ {:+.3}, tail {:+.3}",
            r.label,
            v("moment_vs_derivative"),
            v("curvature_vs_moment"),
            v("tail_energy_vs_derivative")
        ));
    }
    Line { id: 6, name: "decay-rate relations", passed, detail: parts.join("; ") }
}

fn c7_rate(runs: &[Certified]) -> Line {
    let [_, expected] = linearization_eigenvalues(1, TAU);
    let delta = runs[0].report.delta.unwrap_or(f64::NAN);
    Line {
        id: 7,
        name: "rate benchmark",
        passed: (0.95..=1.05).contains(&delta) && (expected - 1.0).abs() < 1e-12,
        detail: format!("δ = {delta:.4} against √(2kτ) = {expected} (window [0.95, 1.05])"),
    }
}

fn c8_hessian() -> Line {
    let spec = ModelSpec::circle(3, TAU);
    let c = CriticalLoop::new(&spec, spec.level_point().unwrap(), vec![-1.0 / 3.0]).unwrap();
    let pkg = hessian_assemble(&c, &spec, 256).unwrap();
    let bound = 10.0;
    let grading = pkg.grading_defect(bound, false);
    let grading_off = pkg.grading_defect(bound, true);
    // compare away from the bound, where membership is not decided by rounding
    let inner = |v: Vec<f64>| v.into_iter().filter(|l| l.abs() <= bound - 0.25).collect::<Vec<_>>();
    let grid = inner(pkg.eigenvalues_within(bound));
    let four = inner(fourier_hessian_blocks(&c, &spec, 256, bound).unwrap());
    let fourier = if grid.len() == four.len() {
        grid.iter().zip(&four).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Line {
        id: 8,
        name: "hessian spectrum",
        passed: grading <= 1e-6 && fourier <= 1e-8 && pkg.symmetry_defect <= 1e-10,
        detail: format!(
            "max dist(3λ, ℤ) = {grading:.3} (≤ 1e-6; {grading_off:.1e} on directions off the support of z₀), \
             Fourier-block agreement {fourier:.1e} (≤ 1e-8), symmetry {:.1e} (≤ 1e-10), order {}",
            pkg.symmetry_defect, pkg.holonomy_order
        ),
    }
}

fn c9_limit(runs: &[Certified]) -> Line {
    let mut passed = true;
    let mut conditioned = 0;
    let mut parts = Vec::new();
    for r in runs {
        let ups = r.report.limit_upsilon.unwrap_or(f64::NAN);
        let cst = r.report.limit_constancy.unwrap_or(f64::NAN);
        let tail = r.report.tail_energy.unwrap_or(f64::NAN);
        passed &= ups <= 1e-6;
        if tail <= 1e-8 {
            conditioned += 1;
            passed &= cst <= 1e-6;
        }
        parts.push(format!("{} ‖Υ̃‖ {ups:.1e}, constancy {cst:.1e}, tail {tail:.1e}", r.label));
    }
    passed &= conditioned > 0;
    Line {
        id: 9,
        name: "limit criticality",
        passed,
        detail: format!("{}; constancy enforced on {conditioned} runs with tail ≤ 1e-8", parts.join("; ")),
    }
}

/// Smooth random based gauge: `φ(θ) = Σ a_q sin qθ + b_q(cos qθ − 1) + wθ`.
fn random_gauge(grid: Grid, rng: &mut ChaCha8Rng) -> PathGauge {
    let coeffs: Vec<(f64, f64)> = (1..=3).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
    let mut periodic = Vec::with_capacity(grid.nodes());
    for _ in 0..grid.nt {
        for k in 0..grid.ntheta {
            let th = grid.theta(k);
            periodic.push(
                coeffs.iter().enumerate().map(|(q, (a, b))| {
                    let q = (q + 1) as f64;
                    a * (q * th).sin() + b * ((q * th).cos() - 1.0)
                })
                .sum(),
            );
        }
    }
    PathGauge { grid, d: 1, periodic, drift: vec![1.0] }
}

fn c10_gauge(rng: &mut ChaCha8Rng) -> Line {
    let spec = ModelSpec::circle(1, TAU);
    let metric = MetricSpec::new(0.0).unwrap();
    let sol = separable_vortex(1, TAU, 0.0, 0, (0.0, 6.0), 1e-12).unwrap();
    let seed = rng.random::<u64>();
    let mut defects = Vec::new();
    for nth in [16, 32, 64] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let field = to_field(&sol, Grid::new(0.0, 6.0, 193, nth).unwrap()).unwrap();
        let phi = random_gauge(field.grid, &mut r);
        let moved = act_on_field(&spec, &phi, &field).unwrap();
        let band = (0.0, 6.0);
        let e0 = total_energy(&field, &spec, &metric, band).unwrap();
        let e1 = total_energy(&moved, &spec, &metric, band).unwrap();
        let r0 = vortex_residual(&field, &spec, &metric).unwrap();
        let r1 = vortex_residual(&moved, &spec, &metric).unwrap();
        defects.push(((e0 - e1).abs() / e0).max((r0.sup - r1.sup).abs()).max((r0.l2 - r1.l2).abs()));
    }
    let h = |nth: f64| 2.0 * PI / nth;
    let small = defects.iter().zip([16.0, 32.0, 64.0]).all(|(d, n)| *d <= h(n) * h(n));
    let ratios: Vec<f64> = defects.windows(2).map(|w| w[0] / w[1].max(f64::MIN_POSITIVE)).collect();
    let ratio_ok = ratios.iter().all(|q| (3.0..=5.0).contains(q));
    Line {
        id: 10,
        name: "gauge invariance",
        passed: small && ratio_ok,
        detail: format!(
            "defects at N_θ = 16, 32, 64: {:.1e}, {:.1e}, {:.1e} (≤ h² {}); halving ratios {:.2}, {:.2} (in [3, 5] {})",
            defects[0], defects[1], defects[2], small, ratios[0], ratios[1], ratio_ok
        ),
    }
}

fn c11_isoperimetric(runs: &[Certified]) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for (r, &(k, b, m, t1, nt)) in runs.iter().zip(&SCENARIOS) {
        let coarse = r.report.isoperimetric.as_ref().unwrap();
        let fine = certify(k, b, m, t1, 2 * nt - 1, 2 * r.field.grid.ntheta);
        let fine = fine.report.isoperimetric.unwrap();
        let drift = fine.min_feasible_c0 / coarse.min_feasible_c0 - 1.0;
        passed &= coarse.holds && fine.holds && drift.abs() <= 0.2;
        parts.push(format!(
            "{} min c₀ {:.4} → {:.4} ({:+.1}%)",
            r.label,
            coarse.min_feasible_c0,
            fine.min_feasible_c0,
            100.0 * drift
        ));
    }
    Line { id: 11, name: "isoperimetric inequality", passed, detail: format!("{} (c₀ = c₁ = 10)", parts.join("; ")) }
}

fn c12_determinism() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { seed: 7, ..RunConfig::default() };
    let a = run(&config, Scenario::Sweep, &dir.path().join("a"), 1);
    let b = run(&config, Scenario::Sweep, &dir.path().join("b"), 4);
    let read = |p: &str| std::fs::read(dir.path().join(p).join("sweep.csv")).unwrap_or_default();
    let (ca, cb) = (read("a"), read("b"));
    let rows = String::from_utf8_lossy(&ca).lines().count().saturating_sub(1);
    Line {
        id: 12,
        name: "sweep determinism",
        passed: a.exit_code == 0 && b.exit_code == 0 && !ca.is_empty() && ca == cb,
        detail: format!("{rows} cells, 1 vs 4 workers, byte-identical: {}", ca == cb),
    }
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let runs: Vec<Certified> = SCENARIOS.iter().map(|&(k, b, m, t1, nt)| certify(k, b, m, t1, nt, 32)).collect();
    let lines = vec![
        c1_holonomy(&mut rng),
        c2_hamiltonian(&mut rng),
        c3_oracle_order(),
        c4_energy(&runs),
        c5_action(&runs),
        c6_relations(&runs),
        c7_rate(&runs),
        c8_hessian(),
        c9_limit(&runs),
        c10_gauge(&mut rng),
        c11_isoperimetric(&runs),
        c12_determinism(),
    ];
    for l in &lines {
        println!("[{}] {:>2} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.id, l.name, l.detail);
    }
    println!("acceptance: {}/{} passed in {:.1}s", lines.iter().filter(|l| l.passed).count(), lines.len(), start.elapsed().as_secs_f64());
    let red: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    assert!(red.is_empty(), "red criteria: {red:?}");
}
