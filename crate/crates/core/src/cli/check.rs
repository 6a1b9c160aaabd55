//! The invariant suite behind the `check` scenario.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Resolved, RunConfig};
use super::write_json;
use crate::decay::{fit_rate, FitPolicy, Series};
use crate::error::Result;
use crate::fields::{energy_identity, vortex_residual, CylinderField, Grid, MetricSpec};
use crate::gauge::{holonomy, Sampling};
use crate::lie::{exp_g, group_distance, AlgebraElement};
use crate::loops::{hessian_assemble, local_action, loop_residual, CriticalLoop};
use crate::model::{omega, ModelSpec};
use crate::oracles::{fourier_hessian_blocks, separable_vortex, to_field};

#[derive(Clone, Debug, Serialize)]
struct Invariant {
    name: &'static str,
    passed: bool,
    value: f64,
    threshold: f64,
}

fn below(name: &'static str, value: f64, threshold: f64) -> Invariant {
    Invariant { name, passed: value <= threshold, value, threshold }
}

fn hamiltonian(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut c = || Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let z: Vec<Complex64> = (0..spec.n).map(|_| c()).collect();
        let w: Vec<Complex64> = (0..spec.n).map(|_| c()).collect();
        let xi: Vec<f64> = (0..spec.d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lhs = omega(&spec.infinitesimal_action(&xi, &z), &w);
        let rhs: f64 = spec.d_moment(&z, &w).iter().zip(&xi).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

fn holonomy_exactness(d: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let eta = vec![AlgebraElement::Torus(xi.clone()); 256];
    let hol = holonomy(&eta, Sampling::Spectral)?;
    let expected = exp_g(&AlgebraElement::Torus(xi.iter().map(|x| -2.0 * std::f64::consts::PI * x).collect()));
    group_distance(&hol, &expected)
}

fn field_round_trip(field: &CylinderField) -> Result<bool> {
    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    let back = CylinderField::read_csv(buf.as_slice())?;
    Ok(back.u.iter().zip(&field.u).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits())
        && back.eta.iter().zip(&field.eta).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.grid == field.grid)
}

pub(super) fn run_check(dir: &Path, config: &RunConfig, r: &Resolved) -> Result<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = vec![
        below("hamiltonian_identity", hamiltonian(&r.spec, &mut rng), 1e-10),
        below("holonomy_exactness", holonomy_exactness(r.spec.d, &mut rng)?, 1e-10),
    ];

    let k3 = ModelSpec::circle(3, 0.5);
    let z0 = k3.level_point()?;
    let crit = CriticalLoop::new(&k3, z0, vec![-1.0 / 3.0])?;
    let y = crit.sample(&k3, 64);
    let res = loop_residual(&y, &k3)?;
    out.push(below("critical_loop_residual", res.sup, 1e-10));
    out.push(below("critical_loop_action", local_action(&y, &k3, None)?.abs(), 1e-10));

    let pkg = hessian_assemble(&crit, &k3, 64)?;
    out.push(below("hessian_symmetry", pkg.symmetry_defect, 1e-10));
    let fourier = fourier_hessian_blocks(&crit, &k3, 64, 10.0)?;
    let grid_eigs: Vec<f64> = pkg.eigenvalues_within(9.75);
    let four: Vec<f64> = fourier.into_iter().filter(|l| l.abs() <= 9.75).collect();
    let defect = if grid_eigs.len() == four.len() {
        grid_eigs.iter().zip(&four).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    out.push(below("hessian_fourier_agreement", defect, 1e-8));

    let k1 = ModelSpec::circle(1, 0.5);
    let metric = MetricSpec::new(0.0)?;
    let sol = separable_vortex(1, 0.5, 0.0, 0, (0.0, 8.0), 1e-12)?;
    let field = to_field(&sol, Grid::new(0.0, 8.0, 257, 32)?)?;
    out.push(below("oracle_on_shell", vortex_residual(&field, &k1, &metric)?.sup, 1e-6));
    let id = energy_identity(&field, &k1, &metric, (2.0, 6.0))?;
    out.push(below("energy_identity", id.defect.abs() / id.energy.max(1e-8), 1e-4));
    let rt = field_round_trip(&field)?;
    out.push(Invariant { name: "field_csv_round_trip", passed: rt, value: if rt { 0.0 } else { 1.0 }, threshold: 0.0 });

    let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
    let series = Series { name: "synthetic".into(), value: t.iter().map(|x| (-0.7 * x).exp()).collect(), t };
    let slope = fit_rate(&series, &FitPolicy::default())?.slope;
    out.push(below("fit_exact_exponential", (slope + 0.7).abs(), 1e-10));

    let mut moved = config.clone();
    moved.output = PathBuf::from("/elsewhere");
    let mut shifted = config.clone();
    shifted.model.tau = config.model.tau.iter().map(|t| t * 1.5).collect();
    let hash_ok = moved.hash() == config.hash() && shifted.hash() != config.hash();
    out.push(Invariant { name: "config_hash", passed: hash_ok, value: if hash_ok { 0.0 } else { 1.0 }, threshold: 0.0 });

    let all = out.iter().all(|i| i.passed);
    let summary = json!({ "invariants": out, "all_passed": all, "exit_code": if all { 0 } else { 1 } });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::super::{config::Scenario, run};
    use super::*;

    #[test]
    fn invariant_suite_passes() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&RunConfig::default(), Scenario::Check, dir.path(), 1);
        assert_eq!(out.exit_code, 0, "{}", out.summary);
        assert_eq!(out.summary["all_passed"], true);
        assert!(dir.path().join("report.json").exists());
    }
}
