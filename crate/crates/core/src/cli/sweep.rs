//! Parameter sweeps over `(b, k, m)`; cells run independently and never abort
//! the sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{RunConfig, Scenario};
use super::{run, write_json};
use crate::decay::{DecayReport, CURVATURE, D_ETA_U, MOMENT, TAIL_ENERGY};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: String,
    pub b: f64,
    pub k: i64,
    pub m: i64,
    pub exit_code: i32,
    pub applicable: bool,
    pub delta: Option<f64>,
    pub slope_d_eta_u: Option<f64>,
    pub slope_mu: Option<f64>,
    pub slope_curvature: Option<f64>,
    pub slope_tail_energy: Option<f64>,
    /// `slope(|μ|) − slope(|d_ηu|) + b`.
    pub rel_moment: Option<f64>,
    /// `slope(|F|) − slope(|d_ηu|) − b`.
    pub rel_curvature: Option<f64>,
    /// `(slope(E) − 2·slope(|d_ηu|)) / |2·slope(|d_ηu|)|`.
    pub rel_tail: Option<f64>,
    /// Pass flags of the checks `a` to `f`, in order.
    pub checks: String,
    pub all_passed: bool,
    pub holonomy_order: Option<u64>,
    pub residual_sup: Option<f64>,
    pub error: String,
}

/// Cells of the sweep, each with its own derived configuration.
pub fn sweep_cells(config: &RunConfig) -> Vec<(String, f64, i64, i64, RunConfig)> {
    let s = &config.sweep;
    let tau = config.model.tau.first().copied().unwrap_or(0.5);
    let mut cells = Vec::new();
    for &b in &s.b {
        for &k in &s.k {
            for &m in &s.m {
                if 2 * m.abs() >= k {
                    continue;
                }
                let mut c = config.clone();
                c.model.weights = vec![vec![k]];
                c.model.tau = vec![tau];
                c.model.epsilon = None;
                c.metric.b = b;
                c.oracle.m = m;
                c.scenario = Some(s.cell);
                if let Some(h) = s.horizons.iter().find(|h| h.b == b && h.k.is_none_or(|hk| hk == k)) {
                    c.grid.t1 = h.t1;
                    c.grid.nt = h.nt;
                }
                let name = format!("cell_{:02}_b{b}_k{k}_m{m}", cells.len());
                c.output = config.output.join(&name);
                cells.push((name, b, k, m, c));
            }
        }
    }
    cells
}

fn fmt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.10e}"),
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

fn row_from(name: String, b: f64, k: i64, m: i64, exit_code: i32, error: Option<String>, report: Option<DecayReport>) -> SweepRow {
    let slope = |n: &str| report.as_ref().and_then(|r| r.slope(n));
    let sd = slope(D_ETA_U);
    let diff = |a: Option<f64>, c: f64| Some(a? - sd? + c);
    let checks = report
        .as_ref()
        .map(|r| {
            ['a', 'b', 'c', 'd', 'e', 'f']
                .iter()
                .map(|l| {
                    let cs: Vec<_> = r.checks.iter().filter(|c| c.label == *l).collect();
                    match cs.iter().all(|c| c.passed == Some(true)) && !cs.is_empty() {
                        true => '1',
                        false => '0',
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    SweepRow {
        cell: name,
        b,
        k,
        m,
        exit_code,
        applicable: report.as_ref().is_some_and(|r| r.applicable),
        delta: report.as_ref().and_then(|r| r.delta),
        slope_d_eta_u: sd,
        slope_mu: slope(MOMENT),
        slope_curvature: slope(CURVATURE),
        slope_tail_energy: slope(TAIL_ENERGY),
        rel_moment: diff(slope(MOMENT), b),
        rel_curvature: diff(slope(CURVATURE), -b),
        rel_tail: match (slope(TAIL_ENERGY), sd) {
            (Some(e), Some(s)) if s != 0.0 => Some((e - 2.0 * s) / (2.0 * s).abs()),
            _ => None,
        },
        checks,
        all_passed: report.as_ref().is_some_and(|r| r.all_passed()),
        holonomy_order: report.as_ref().and_then(|r| r.holonomy_order),
        residual_sup: report.as_ref().map(|r| r.residual_sup),
        error: error.unwrap_or_default().replace([',', '\n'], ";"),
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "cell,b,k,m,exit_code,applicable,delta,slope_d_eta_u,slope_mu,slope_curvature,slope_tail_energy,rel_moment,rel_curvature,rel_tail,checks_a_to_f,all_passed,holonomy_order,residual_sup,error\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.b,
            r.k,
            r.m,
            r.exit_code,
            r.applicable,
            fmt(r.delta),
            fmt(r.slope_d_eta_u),
            fmt(r.slope_mu),
            fmt(r.slope_curvature),
            fmt(r.slope_tail_energy),
            fmt(r.rel_moment),
            fmt(r.rel_curvature),
            fmt(r.rel_tail),
            r.checks,
            r.all_passed,
            r.holonomy_order.map(|m| m.to_string()).unwrap_or_default(),
            fmt(r.residual_sup),
            r.error
        );
    }
    s
}

pub(super) fn run_sweep(dir: &Path, config: &RunConfig, workers: usize) -> Result<Value> {
    let cells = sweep_cells(config);
    if cells.is_empty() {
        return Err(Error::Config("sweep: no admissible (b, k, m) cells".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .into_par_iter()
            .map(|(name, b, k, m, c)| {
                let cell_dir = dir.join(&name);
                let scenario = c.scenario.unwrap_or(Scenario::Oracle);
                let out = run(&c, scenario, &cell_dir, 1);
                log::info!("{name}: exit {}", out.exit_code);
                row_from(name, b, k, m, out.exit_code, out.error, out.decay)
            })
            .collect()
    });
    fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    let ok = rows.iter().filter(|r| r.exit_code == 0).count();
    let summary = json!({
        "cells": rows.len(),
        "succeeded": ok,
        "rows": rows,
        "exit_code": if ok > 0 { 0 } else { 2 },
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(summary)
}
