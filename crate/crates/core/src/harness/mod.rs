//! Scenario runner behind the `ofo` command line tool.

mod config;
mod trace_csv;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{
    matrix_from_rows, BoxedPlant, ParamsConfig, PlantConfig, ReferenceConfig, ScenarioConfig, SweepCase,
    ToleranceConfig, Variant,
};
pub use trace_csv::{fmt_float, header, trace_to_csv, write_trace};

use crate::controller::{run, RunTrace, Termination};
use crate::error::{OfoError, Result};
use crate::model::{AdaptationMode, OfoParams};
use crate::plants::Reference;

/// Objective rises smaller than this are not counted as increases.
pub const INCREASE_TOL: f64 = 1e-6;

/// Mean squared tracking error over the first `horizon` records. Record
/// `i` is compared with the setpoint at time `i * dt`.
pub fn compute_error(trace: &RunTrace, reference: &Reference, horizon: usize, dt: f64) -> Result<f64> {
    let channel = trace
        .tracked_output
        .ok_or_else(|| OfoError::Config(format!("plant '{}' tracks no output", trace.plant_id)))?;
    if horizon == 0 {
        return Err(OfoError::Config("error horizon must be positive".into()));
    }
    if trace.records.len() < horizon {
        return Err(OfoError::Config(format!(
            "trace has {} records, horizon is {horizon}",
            trace.records.len()
        )));
    }
    reference.validate()?;
    let sum: f64 = trace.records[..horizon]
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let e = r.y[channel] - reference.at(i as f64 * dt);
            e * e
        })
        .sum();
    Ok(sum / horizon as f64)
}

/// One named run of a scenario.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub trace: RunTrace,
    pub csv_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub name: String,
    pub epsilon: f64,
    /// `epsilon` over the baseline's.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub horizon: usize,
    /// Name of the row the ratios refer to.
    pub baseline: String,
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    /// Ratios are taken against the best of `baseline_pool`, or against all
    /// rows when the pool is empty.
    pub fn new(horizon: usize, eps: Vec<(String, f64)>, baseline_pool: &[String]) -> Result<Self> {
        let pool: Vec<&(String, f64)> = if baseline_pool.is_empty() {
            eps.iter().collect()
        } else {
            eps.iter().filter(|(n, _)| baseline_pool.contains(n)).collect()
        };
        let best = pool
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| OfoError::Config("no runs to report".into()))?;
        let (baseline, base_eps) = (best.0.clone(), best.1);
        let rows = eps
            .iter()
            .map(|(name, e)| ErrorRow {
                name: name.clone(),
                epsilon: *e,
                ratio: if base_eps > 0.0 { e / base_eps } else { f64::NAN },
            })
            .collect();
        Ok(Self { horizon, baseline, rows })
    }

    pub fn get(&self, name: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub mode: AdaptationMode,
    pub step_adaptation: bool,
    pub final_phi: f64,
    pub iters_to_tol: Option<usize>,
    pub increases: usize,
    pub epsilon: Option<f64>,
    pub ratio: Option<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub scenario: String,
    /// Objective level used for `iters_to_tol`.
    pub phi_target: f64,
    pub phi_tol: f64,
    pub rows: Vec<SummaryRow>,
    pub errors: Option<ErrorReport>,
    pub outcomes: Vec<RunOutcome>,
}

impl ScenarioSummary {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn outcome(&self, name: &str) -> Option<&RunOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:<19} {:>5} {:>18} {:>8} {:>6} {:>12} {:>7}",
            "run", "mode", "step", "final_phi", "to_tol", "incr", "epsilon", "ratio"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:<19} {:>5} {:>18.10e} {:>8} {:>6} {:>12} {:>7}",
                r.name,
                r.mode.as_str(),
                r.step_adaptation,
                r.final_phi,
                r.iters_to_tol.map_or("-".to_string(), |k| k.to_string()),
                r.increases,
                r.epsilon.map_or("-".to_string(), |e| format!("{e:.6}")),
                r.ratio.map_or("-".to_string(), |q| format!("{q:.3}")),
            );
        }
        let _ = writeln!(out, "tolerance: |phi - {}| <= {}", self.phi_target, self.phi_tol);
        if let Some(e) = &self.errors {
            let _ = writeln!(out, "error horizon {} records, ratios against '{}'", e.horizon, e.baseline);
        }
        out
    }

    /// Machine-readable summary, one row per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,mode,step_adaptation,final_phi,iters_to_tol,increases,epsilon,ratio,termination\n");
        for r in &self.rows {
            let term = match &r.termination {
                Termination::MaxIters => "max-iters".to_string(),
                Termination::Converged => "converged".to_string(),
                Termination::Error(e) => format!("error: {}", e.replace([',', '\n'], " ")),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                r.mode,
                r.step_adaptation,
                fmt_float(r.final_phi),
                r.iters_to_tol.map_or(String::new(), |k| k.to_string()),
                r.increases,
                r.epsilon.map_or(String::new(), fmt_float),
                r.ratio.map_or(String::new(), fmt_float),
                term
            );
        }
        out
    }
}

/// Where a run's output goes and whether to write anything at all.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the configured output directory.
    pub out_dir: Option<PathBuf>,
    pub n_iters: Option<usize>,
    /// Skip all file output.
    pub dry_run: bool,
}

impl RunOptions {
    fn dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone())
    }
}

fn run_one(cfg: &ScenarioConfig, name: &str, params: &OfoParams, n_iters: usize, dir: Option<&Path>) -> Result<RunOutcome> {
    let (mut plant, cons, u0) = cfg.build_plant()?;
    let trace = run(plant.as_mut(), &cons, params, &u0, n_iters)?;
    let csv_path = match dir {
        Some(d) => {
            let path = d.join(format!("{name}.csv"));
            write_trace(&trace, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(RunOutcome {
        name: name.to_string(),
        trace,
        csv_path,
    })
}

fn execute(
    cfg: &ScenarioConfig,
    jobs: Vec<(String, OfoParams)>,
    opts: &RunOptions,
    baseline_pool: &[String],
) -> Result<ScenarioSummary> {
    let n_iters = opts.n_iters.unwrap_or(cfg.n_iters);
    let dir = (!opts.dry_run).then(|| opts.dir(cfg));
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|(name, params)| run_one(cfg, name, params, n_iters, dir.as_deref()))
        .collect::<Result<_>>()?;

    let (phi_target, phi_tol) = match cfg.tolerance.target {
        Some(t) => (t, cfg.tolerance.abs.unwrap_or(cfg.tolerance.rel * t.abs().max(1.0))),
        None => {
            let best = outcomes
                .iter()
                .flat_map(|o| o.trace.records.iter().map(|r| r.phi))
                .fold(f64::INFINITY, f64::min);
            (best, cfg.tolerance.abs.unwrap_or(cfg.tolerance.rel * best.abs()))
        }
    };

    let errors = match (&cfg.reference, cfg.horizon()) {
        (Some(r), Some(h)) if h <= n_iters => {
            let reference = r.reference();
            let eps = outcomes
                .iter()
                .map(|o| Ok((o.name.clone(), compute_error(&o.trace, &reference, h, cfg.plant.sample_time())?)))
                .collect::<Result<Vec<_>>>()?;
            Some(ErrorReport::new(h, eps, baseline_pool)?)
        }
        _ => None,
    };

    let rows = outcomes
        .iter()
        .zip(&jobs)
        .map(|(o, (_, p))| {
            let err = errors.as_ref().and_then(|e| e.get(&o.name));
            SummaryRow {
                name: o.name.clone(),
                mode: p.mode,
                step_adaptation: p.step_adaptation,
                final_phi: o.trace.final_record().phi,
                iters_to_tol: o.trace.records.iter().position(|r| r.phi <= phi_target + phi_tol && r.phi >= phi_target - phi_tol),
                increases: o.trace.increases(INCREASE_TOL),
                epsilon: err.map(|e| e.epsilon),
                ratio: err.map(|e| e.ratio),
                termination: o.trace.termination.clone(),
            }
        })
        .collect();

    let summary = ScenarioSummary {
        scenario: cfg.name.clone(),
        phi_target,
        phi_tol,
        rows,
        errors,
        outcomes,
    };
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("summary.csv"), summary.to_csv())?;
    }
    Ok(summary)
}

/// Runs the manual-tuning sweep when one is configured, otherwise a single
/// run with the base parameters (optionally with another mode).
pub fn run_scenario(cfg: &ScenarioConfig, mode: Option<&str>, opts: &RunOptions) -> Result<ScenarioSummary> {
    if !cfg.sweep.is_empty() && mode.is_none() {
        return sweep(cfg, opts);
    }
    let params = match mode {
        Some(m) => resolve_mode(cfg, m)?,
        None => cfg.params()?,
    };
    let name = mode.unwrap_or("run").to_string();
    execute(cfg, vec![(name, params)], opts, &[])
}

/// One fixed run per sweep case, in configured order.
pub fn sweep(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioSummary> {
    if cfg.sweep.is_empty() {
        return Err(OfoError::Config(format!("scenario '{}' has no sweep cases", cfg.name)));
    }
    let mut jobs = cfg
        .sweep
        .iter()
        .map(|c| Ok((c.name.clone(), cfg.case_params(c)?)))
        .collect::<Result<Vec<_>>>()?;
    let pool: Vec<String> = jobs.iter().map(|j| j.0.clone()).collect();
    if cfg.sweep_include_params {
        jobs.push(("adaptive".to_string(), cfg.params()?));
    }
    execute(cfg, jobs, opts, &pool)
}

/// Runs the scenario once per entry of `modes`, from the same initial point.
pub fn compare_modes(cfg: &ScenarioConfig, modes: &[String], opts: &RunOptions) -> Result<ScenarioSummary> {
    if modes.is_empty() {
        return Err(OfoError::Config("no modes to compare".into()));
    }
    let jobs = modes
        .iter()
        .map(|m| Ok((m.clone(), resolve_mode(cfg, m)?)))
        .collect::<Result<Vec<_>>>()?;
    execute(cfg, jobs, opts, &[])
}

/// Resolves a run name: a configured variant or sweep case first, then a
/// mode spec `<mode>[+step]` applied to the base parameters.
pub fn resolve_mode(cfg: &ScenarioConfig, name: &str) -> Result<OfoParams> {
    if let Some(v) = cfg.variants.iter().find(|v| v.name == name) {
        return cfg.variant_params(v);
    }
    if let Some(c) = cfg.sweep.iter().find(|c| c.name == name) {
        return cfg.case_params(c);
    }
    let (mode, step) = match name.strip_suffix("+step") {
        Some(m) => (m, true),
        None => (name, false),
    };
    let mut p = cfg.params()?;
    p.mode = mode.parse()?;
    p.step_adaptation = step;
    p.validate()?;
    Ok(p)
}
