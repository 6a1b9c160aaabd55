//! The `vortexlab` command-line runner: configuration, scenarios, artifacts
//! and parameter sweeps.

pub mod config;
mod check;
mod sweep;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::decay::{observables_with, verify_theorem_with, DecayReport};
use crate::error::{Error, Result};
use crate::fields::{vortex_residual, CylinderField};
use crate::loops::{hessian_assemble, isotropy_order, CriticalLoop};
use crate::oracles::{fourier_hessian_blocks, separable_vortex_from, to_field, SeparableSolution};
use crate::solver::{perturb, relax, Certificate, SolveConfig};

pub use config::{Resolved, RunConfig, Scenario};
pub use sweep::{sweep_cells, sweep_csv, SweepRow};

/// Result of one scenario run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub error: Option<String>,
    pub summary: Value,
    pub decay: Option<DecayReport>,
}

/// What a scenario hands back to [`run`].
pub(crate) struct Produced {
    summary: Value,
    decay: Option<DecayReport>,
}

impl From<Value> for Produced {
    fn from(summary: Value) -> Self {
        Produced { summary, decay: None }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn write_field(dir: &Path, field: &CylinderField) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join("field.csv"))?);
    field.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<CylinderField> {
    CylinderField::read_csv(BufReader::new(File::open(path)?))
}

/// Oracle solution for the configured circle model.
fn oracle_solution(config: &RunConfig, r: &Resolved) -> Result<SeparableSolution> {
    if r.spec.n != 1 || r.spec.d != 1 {
        return Err(Error::Config("model: oracle runs need a single-weight circle model".into()));
    }
    let k = r.spec.weights[0][0];
    let o = &config.oracle;
    separable_vortex_from(k, r.spec.tau[0], r.metric.b, o.m, (r.grid.t0, r.grid.t1), o.tol, o.start_fraction)
}

/// Decay analysis plus the artifacts it feeds.
fn analyse_into(dir: &Path, field: &CylinderField, config: &RunConfig, r: &Resolved) -> Result<DecayReport> {
    let obs = observables_with(field, &r.spec, &r.metric, config.decay.max_tail)?;
    let mut f = BufWriter::new(File::create(dir.join("series.csv"))?);
    obs.write_csv(&mut f)?;
    f.flush()?;
    verify_theorem_with(field, &r.spec, &r.metric, &config.decay)
}

fn certified(field: &CylinderField, r: &Resolved, solver: &SolveConfig) -> Result<(CylinderField, Certificate)> {
    let (out, cert) = relax(field, &r.spec, &r.metric, solver)?;
    info!("certified: {} iterations, sup residual {:.3e}", cert.iterations, cert.final_residual_sup);
    Ok((out, cert))
}

fn run_oracle(dir: &Path, config: &RunConfig, r: &Resolved) -> Result<Produced> {
    let sol = oracle_solution(config, r)?;
    info!("oracle: ρ* = {}, η* = {}, {} bisections", sol.rho_star, sol.eta_star, sol.bisections);
    let field = to_field(&sol, r.grid)?;
    let (field, cert) = certified(&field, r, &config.certify)?;
    write_field(dir, &field)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    let report = analyse_into(dir, &field, config, r)?;
    let summary = json!({
        "oracle": {
            "k": sol.k, "tau": sol.tau, "b": sol.b, "m": sol.m,
            "rho_star": sol.rho_star, "eta_star": sol.eta_star,
            "shooting_residual": sol.shooting_residual, "final_defect": sol.final_defect,
            "bisections": sol.bisections,
        },
        "holonomy_order": report.holonomy_order,
        "decay": &report,
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(Produced { summary, decay: Some(report) })
}

fn run_solve(dir: &Path, config: &RunConfig, r: &Resolved) -> Result<Produced> {
    let (seed_field, reference) = match &config.solve.initial {
        Some(path) => (read_field(path)?, None),
        None => {
            let exact = to_field(&oracle_solution(config, r)?, r.grid)?;
            (perturb(&exact, config.solve.perturbation, config.seed), Some(exact))
        }
    };
    seed_field.check_model(&r.spec)?;
    if seed_field.grid != r.grid {
        warn!("initial field grid differs from the configured grid; using the field's grid");
    }
    let (field, cert) = certified(&seed_field, r, &config.solve.solver)?;
    write_field(dir, &field)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    let report = analyse_into(dir, &field, config, r)?;
    let summary = json!({
        "iterations": cert.iterations,
        "final_residual_sup": cert.final_residual_sup,
        "distance_to_oracle": reference.map(|e| field.sup_distance(&e)),
        "holonomy_order": report.holonomy_order,
        "decay": &report,
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(Produced { summary, decay: Some(report) })
}

fn run_analyze(dir: &Path, config: &RunConfig, r: &Resolved) -> Result<Produced> {
    let path = config
        .analyze
        .field
        .as_ref()
        .ok_or_else(|| Error::Config("analyze.field: a field CSV path is required".into()))?;
    let field = read_field(path)?;
    let residual = vortex_residual(&field, &r.spec, &r.metric).map(|res| res.sup).ok();
    let report = analyse_into(dir, &field, config, r)?;
    let summary = json!({
        "field": path,
        "residual_sup": residual,
        "holonomy_order": report.holonomy_order,
        "decay": &report,
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(Produced { summary, decay: Some(report) })
}

fn run_hessian(dir: &Path, config: &RunConfig, r: &Resolved) -> Result<Value> {
    let h = &config.hessian;
    let spec = &r.spec;
    let z0 = match &h.z0 {
        Some(z) => z.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
        None => spec.level_point()?,
    };
    let eta0 = h.eta0.clone().unwrap_or_else(|| vec![0.0; spec.d]);
    let critical = CriticalLoop::new(spec, z0, eta0)?;
    let pkg = hessian_assemble(&critical, spec, h.ntheta)?;
    let within = pkg.eigenvalues_within(h.bound);
    let fourier = fourier_hessian_blocks(&critical, spec, h.ntheta, h.bound)?;
    // compare away from the bound, where membership is not decided by rounding
    let inner = |v: &[f64]| v.iter().copied().filter(|l| l.abs() <= h.bound - 0.25).collect::<Vec<_>>();
    let (gi, fi) = (inner(&within), inner(&fourier));
    let fourier_defect = if gi.len() == fi.len() {
        gi.iter().zip(&fi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let m = pkg.holonomy_order as f64;
    let mut f = BufWriter::new(File::create(dir.join("spectrum.csv"))?);
    writeln!(f, "index,eigenvalue,scaled,residual,off_support_weight")?;
    for (i, l) in pkg.eigenvalues.iter().enumerate() {
        if l.abs() <= h.bound {
            writeln!(f, "{i},{l},{},{},{}", m * l, pkg.residuals[i], pkg.off_support_weight[i])?;
        }
    }
    f.flush()?;
    let summary = json!({
        "ntheta": h.ntheta,
        "z0": critical.z0.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "eta0": critical.eta0,
        "holonomy_order": isotropy_order(&critical),
        "kernel_dim": pkg.kernel_dim,
        "twisted_sector_dim": pkg.twisted_sector_dim,
        "symmetry_defect": pkg.symmetry_defect,
        "grading_defect": pkg.grading_defect(h.bound, false),
        "grading_defect_off_support": pkg.grading_defect(h.bound, true),
        "fourier_defect": fourier_defect,
        "eigenvalues_within_bound": within.len(),
        "multiplicities": pkg.multiplicities(1e-6).into_iter().filter(|(l, _)| l.abs() <= h.bound).collect::<Vec<_>>(),
        "max_eigen_residual": pkg.residuals.iter().fold(0.0f64, |a, b| a.max(*b)),
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(summary)
}

/// Runs one scenario into `dir` and writes `run.json`. Errors become exit codes.
pub fn run(config: &RunConfig, scenario: Scenario, dir: &Path, workers: usize) -> Outcome {
    let start = Instant::now();
    let result = fs::create_dir_all(dir).map_err(Error::from).and_then(|_| {
        let r = config.validate()?;
        match scenario {
            Scenario::Oracle => run_oracle(dir, config, &r),
            Scenario::Solve => run_solve(dir, config, &r),
            Scenario::Analyze => run_analyze(dir, config, &r),
            Scenario::Hessian => run_hessian(dir, config, &r).map(Produced::from),
            Scenario::Check => check::run_check(dir, config, &r).map(Produced::from),
            Scenario::Sweep => sweep::run_sweep(dir, config, workers).map(Produced::from),
        }
    });
    let (exit_code, error, summary, decay) = match result {
        Ok(p) => {
            let code = p.summary.get("exit_code").and_then(Value::as_i64).unwrap_or(0) as i32;
            (code, None, p.summary, p.decay)
        }
        Err(e) => (e.exit_code(), Some(e.to_string()), Value::Null, None),
    };
    let run = json!({
        "tool": "vortexlab",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario.name(),
        "config": config,
        "config_hash": config.hash(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "exit_code": exit_code,
        "error": error,
    });
    if let Err(e) = write_json(&dir.join("run.json"), &run) {
        warn!("could not write run.json: {e}");
    }
    Outcome { exit_code, error, summary, decay }
}

/// Output directory: the flag wins over the config.
pub fn output_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.output.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_oracle() -> RunConfig {
        let mut c = RunConfig::default();
        c.grid = config::GridConfig { t0: 0.0, t1: 5.0, nt: 257, ntheta: 32 };
        c.model.weights = vec![vec![3]];
        c.oracle.m = 1;
        c
    }

    #[test]
    fn oracle_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&quick_oracle(), Scenario::Oracle, dir.path(), 1);
        assert_eq!(out.exit_code, 0, "{:?}", out.error);
        for f in ["run.json", "field.csv", "series.csv", "report.json", "certificate.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report["holonomy_order"], 3);
        let field = read_field(&dir.path().join("field.csv")).unwrap();
        assert_eq!(field.grid.nt, 257);
    }

    #[test]
    fn analyze_reads_a_written_field() {
        let dir = tempfile::tempdir().unwrap();
        let c = quick_oracle();
        assert_eq!(run(&c, Scenario::Oracle, &dir.path().join("a"), 1).exit_code, 0);
        let mut c2 = c.clone();
        c2.analyze.field = Some(dir.path().join("a/field.csv"));
        let out = run(&c2, Scenario::Analyze, &dir.path().join("b"), 1);
        assert_eq!(out.exit_code, 0, "{:?}", out.error);
        assert_eq!(out.summary["decay"]["applicable"], true);
        let load = |p: &str| -> Value { serde_json::from_str(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap() };
        assert_eq!(load("a/report.json")["decay"], load("b/report.json")["decay"]);
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.model.tau = vec![-0.5];
        let out = run(&c, Scenario::Oracle, dir.path(), 1);
        assert_eq!(out.exit_code, 3);
        assert!(out.error.unwrap().contains("model.tau"));
        let run_json: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(run_json["exit_code"], 3);

        // 2|m| ≥ k violates the oracle precondition
        let mut c = RunConfig::default();
        c.oracle.m = 1;
        assert_eq!(run(&c, Scenario::Oracle, dir.path(), 1).exit_code, 4);

        let c = RunConfig::default();
        assert_eq!(run(&c, Scenario::Analyze, dir.path(), 1).exit_code, 3);

        // one Gauss–Newton step cannot reach 1e-14
        let mut c = RunConfig::default();
        c.grid = config::GridConfig { t0: 0.0, t1: 8.0, nt: 129, ntheta: 32 };
        c.solve.solver.tol_residual = 1e-14;
        c.solve.solver.max_iter = 1;
        assert_eq!(run(&c, Scenario::Solve, dir.path(), 1).exit_code, 2);
    }

    #[test]
    fn hessian_run_reports_spectrum() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.model.weights = vec![vec![3]];
        c.hessian.ntheta = 64;
        c.hessian.eta0 = Some(vec![-1.0 / 3.0]);
        let out = run(&c, Scenario::Hessian, dir.path(), 1);
        assert_eq!(out.exit_code, 0, "{:?}", out.error);
        assert_eq!(out.summary["holonomy_order"], 3);
        assert!(out.summary["fourier_defect"].as_f64().unwrap() <= 1e-8);
        assert!(out.summary["symmetry_defect"].as_f64().unwrap() <= 1e-10);
        let spectrum = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        assert!(spectrum.starts_with("index,eigenvalue,scaled"));
    }
}
