use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decay::DecayPolicy;
use crate::error::{Error, Result};
use crate::fields::{Grid, MetricSpec};
use crate::model::ModelSpec;
use crate::solver::SolveConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Oracle,
    Solve,
    Analyze,
    Hessian,
    Check,
    Sweep,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Oracle => "oracle",
            Scenario::Solve => "solve",
            Scenario::Analyze => "analyze",
            Scenario::Hessian => "hessian",
            Scenario::Check => "check",
            Scenario::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub weights: Vec<Vec<i64>>,
    pub tau: Vec<f64>,
    pub epsilon: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { weights: vec![vec![1]], tau: vec![0.5], epsilon: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub b: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { b: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub t1: f64,
    pub nt: usize,
    pub ntheta: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { t0: 0.0, t1: 14.0, nt: 449, ntheta: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Winding of `u = ρ(t)e^{imθ}`.
    pub m: i64,
    pub tol: f64,
    /// `ρ(t₀)/ρ*`.
    pub start_fraction: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { m: 0, tol: 1e-12, start_fraction: crate::oracles::DEFAULT_START_FRACTION }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveScenario {
    /// Sup-norm of the perturbation added to the oracle seed.
    pub perturbation: f64,
    /// Start from this field instead of a perturbed oracle.
    pub initial: Option<PathBuf>,
    pub solver: SolveConfig,
}

impl Default for SolveScenario {
    fn default() -> Self {
        SolveScenario { perturbation: 1e-3, initial: None, solver: SolveConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub field: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianConfig {
    /// Base point as `[re, im]` pairs; defaults to a vertex point of `μ⁻¹(0)`.
    pub z0: Option<Vec<[f64; 2]>>,
    /// Constant connection; defaults to zero.
    pub eta0: Option<Vec<f64>>,
    pub ntheta: usize,
    /// Eigenvalues with `|λ|` up to this bound are reported and cross-checked.
    pub bound: f64,
}

impl Default for HessianConfig {
    fn default() -> Self {
        HessianConfig { z0: None, eta0: None, ntheta: 256, bound: 10.0 }
    }
}

/// Per-cell horizon override, matched on `b` and optionally `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub b: f64,
    #[serde(default)]
    pub k: Option<i64>,
    pub t1: f64,
    pub nt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub b: Vec<f64>,
    pub k: Vec<i64>,
    /// Modes with `2|m| ≥ k` are skipped.
    pub m: Vec<i64>,
    pub cell: Scenario,
    pub horizons: Vec<Horizon>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            b: vec![0.0, 1.0],
            k: vec![1, 3],
            m: vec![0, 1],
            cell: Scenario::Oracle,
            horizons: vec![
                Horizon { b: 0.0, k: Some(1), t1: 14.0, nt: 449 },
                Horizon { b: 0.0, k: Some(3), t1: 5.0, nt: 257 },
                Horizon { b: 1.0, k: None, t1: 3.0, nt: 257 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub metric: MetricConfig,
    pub grid: GridConfig,
    pub scenario: Option<Scenario>,
    pub oracle: OracleConfig,
    /// Solver settings used to certify oracle fields.
    pub certify: SolveConfig,
    pub solve: SolveScenario,
    pub analyze: AnalyzeConfig,
    pub hessian: HessianConfig,
    pub sweep: SweepConfig,
    pub decay: DecayPolicy,
    /// Seeds perturbation noise only.
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            metric: MetricConfig::default(),
            grid: GridConfig::default(),
            scenario: None,
            oracle: OracleConfig::default(),
            certify: SolveConfig { tol_residual: 1e-6, ..SolveConfig::default() },
            solve: SolveScenario::default(),
            analyze: AnalyzeConfig::default(),
            hessian: HessianConfig::default(),
            sweep: SweepConfig::default(),
            decay: DecayPolicy::default(),
            seed: 0,
            output: PathBuf::from("out"),
        }
    }
}

/// Validated pieces of a configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: ModelSpec,
    pub metric: MetricSpec,
    pub grid: Grid,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<Resolved> {
        let m = &self.model;
        let spec = ModelSpec::new(m.weights.clone(), m.tau.clone(), m.epsilon).map_err(|e| config_err("model", e))?;
        spec.validate().map_err(|e| match e {
            Error::Config(s) => Error::Config(s),
            other => config_err("model", other),
        })?;
        let metric = MetricSpec::new(self.metric.b)?;
        let g = &self.grid;
        let grid = Grid::new(g.t0, g.t1, g.nt, g.ntheta).map_err(|e| config_err("grid", e))?;
        if !(self.oracle.tol > 0.0) {
            return Err(config_err("oracle.tol", "must be positive"));
        }
        if !(self.oracle.start_fraction > 0.0 && self.oracle.start_fraction < 1.0) {
            return Err(config_err("oracle.start_fraction", "must lie in (0, 1)"));
        }
        if !(self.solve.perturbation >= 0.0 && self.solve.perturbation.is_finite()) {
            return Err(config_err("solve.perturbation", "must be nonnegative"));
        }
        self.solve.solver.validate()?;
        self.certify.validate().map_err(|e| config_err("certify", e))?;
        let p = &self.decay;
        if !(0.0..=1.0).contains(&p.fit.min_r2) {
            return Err(config_err("decay.fit.min_r2", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&p.fit.exclude_tail) {
            return Err(config_err("decay.fit.exclude_tail", "must lie in [0, 1)"));
        }
        if p.fit.min_samples < 2 {
            return Err(config_err("decay.fit.min_samples", "must be at least 2"));
        }
        for (name, v) in [("decay.tol_rel", p.tol_rel), ("decay.c0", p.c0), ("decay.c1", p.c1), ("decay.max_tail", p.max_tail)] {
            if !(v > 0.0) {
                return Err(config_err(name, "must be positive"));
            }
        }
        let h = &self.hessian;
        if h.ntheta < 64 || h.ntheta % 2 != 0 {
            return Err(config_err("hessian.ntheta", "must be even and at least 64"));
        }
        if !(h.bound > 0.0) {
            return Err(config_err("hessian.bound", "must be positive"));
        }
        let s = &self.sweep;
        if s.b.is_empty() || s.k.is_empty() || s.m.is_empty() {
            return Err(config_err("sweep", "b, k and m must be nonempty"));
        }
        if s.b.iter().any(|b| !(*b >= 0.0)) {
            return Err(config_err("sweep.b", "entries must be nonnegative"));
        }
        if s.k.iter().any(|k| *k < 1) {
            return Err(config_err("sweep.k", "entries must be positive"));
        }
        if !matches!(s.cell, Scenario::Oracle | Scenario::Solve) {
            return Err(config_err("sweep.cell", "must be oracle or solve"));
        }
        Ok(Resolved { spec, metric, grid })
    }

    /// SHA-256 of the canonical JSON of every semantic field (the output
    /// directory is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_json(r#"{"model": {"tau": [0.5], "colour": 1}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("colour"));
        assert!(RunConfig::from_json(r#"{"sweeep": {}}"#).is_err());
    }

    #[test]
    fn negative_tau_names_the_field() {
        let c = RunConfig::from_json(r#"{"model": {"weights": [[1]], "tau": [-0.5]}}"#).unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let msg = e.to_string();
        assert!(msg.contains("model.tau"), "{msg}");
        assert_eq!(msg.lines().count(), 1);
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let base = RunConfig::default();
        let mut moved = base.clone();
        moved.output = PathBuf::from("elsewhere");
        assert_eq!(base.hash(), moved.hash());
        let mut a = base.clone();
        a.model.tau = vec![0.6];
        let mut b = base.clone();
        b.seed = 1;
        let mut c = base.clone();
        c.decay.fit.min_r2 = 0.98;
        for other in [a, b, c] {
            assert_ne!(base.hash(), other.hash());
        }
        assert_eq!(base.hash().len(), 64);
    }
}
