use std::path::{Path, PathBuf};

use adpomdp_core::env::N_ACTIONS;
use adpomdp_core::hmm::{em_fit_observed, log_likelihood, restart_init, total_steps, EmConfig, ModelParams, Trajectory, UnvisitedRow};
use adpomdp_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{load_dataset, load_manifest};
use crate::error::{HarnessError, Result};
use crate::io::{self, fmt};

pub const MODEL_DIR: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub train_ll_per_step: f64,
    pub test_ll_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScanRow {
    pub n_states: usize,
    pub train_ll_per_step: f64,
    pub test_ll_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_states: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
    /// Per-step log-likelihood of every iterate of the best restart.
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    pub unvisited_rows: Vec<UnvisitedRow>,
    pub state_scan: Vec<StateScanRow>,
    pub state_note: String,
}

pub fn model_dir(out: &Path) -> PathBuf {
    out.join(MODEL_DIR)
}

pub fn model_path(out: &Path) -> PathBuf {
    model_dir(out).join("model.json")
}

pub fn load_model(out: &Path) -> Result<ModelParams> {
    let p = model_path(out);
    if !p.exists() {
        return Err(HarnessError::Missing(format!("{} (run fit-hmm first)", p.display())));
    }
    Ok(ModelParams::load(&p)?)
}

/// Per-step log-likelihood; `-inf` when some trajectory is impossible
/// under the model and NaN for an empty set.
pub fn ll_per_step(params: &ModelParams, trajs: &[Trajectory]) -> Result<f64> {
    let steps = total_steps(trajs);
    if steps == 0 {
        return Ok(f64::NAN);
    }
    match log_likelihood(params, trajs) {
        Ok(ll) => Ok(ll / steps as f64),
        Err(CoreError::DegenerateLikelihood { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e.into()),
    }
}

struct Run {
    params: ModelParams,
    train_curve: Vec<f64>,
    test_curve: Vec<f64>,
    summary: RestartSummary,
    unvisited: Vec<UnvisitedRow>,
}

fn fit_one(
    train: &[Trajectory],
    test: &[Trajectory],
    init: &ModelParams,
    em: &EmConfig,
    restart: usize,
) -> Result<Run> {
    let steps = total_steps(train) as f64;
    let mut test_curve = Vec::new();
    let mut test_err = None;
    let fit = em_fit_observed(train, init, em, |_, params, _| {
        if test_err.is_none() {
            match ll_per_step(params, test) {
                Ok(v) => test_curve.push(v),
                Err(e) => test_err = Some(e),
            }
        }
    })?;
    if let Some(e) = test_err {
        return Err(e);
    }
    let train_curve: Vec<f64> = fit.history.iter().map(|ll| ll / steps).collect();
    let summary = RestartSummary {
        restart,
        iterations: fit.diagnostics.iterations,
        converged: fit.diagnostics.converged,
        train_ll_per_step: *train_curve.last().expect("non-empty history"),
        test_ll_per_step: *test_curve.last().expect("non-empty history"),
    };
    Ok(Run {
        params: fit.params,
        train_curve,
        test_curve,
        summary,
        unvisited: fit.diagnostics.unvisited_rows,
    })
}

/// Best-of-restarts EM fit on the training split; writes the model, the
/// fit report, the per-iteration curve and the state-count scan.
pub fn cmd_fit_hmm(cfg: &ExperimentConfig) -> Result<FitReport> {
    let out = cfg.out_path();
    let (train, test) = load_dataset(&out)?;
    if train.is_empty() {
        return Err(HarnessError::Core(CoreError::InvalidInput(
            "training split is empty; generate data with episodes > 0".into(),
        )));
    }
    let obs_dims = load_manifest(&out)?.obs_dims;
    let em = EmConfig {
        max_iters: cfg.em_max_iters,
        tol: cfg.em_tol,
        pseudocount: cfg.em_pseudocount,
    };

    let mut best: Option<Run> = None;
    let mut restarts = Vec::new();
    for k in 0..cfg.em_restarts {
        let init = restart_init(cfg.seed, k, cfg.n_states, N_ACTIONS, &obs_dims);
        let run = fit_one(&train, &test, &init, &em, k)?;
        restarts.push(run.summary.clone());
        // strict improvement keeps the lowest restart index on ties
        if best.as_ref().is_none_or(|b| run.summary.train_ll_per_step > b.summary.train_ll_per_step) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");

    let mut state_scan = Vec::new();
    for &n in &cfg.state_scan {
        let init = restart_init(cfg.seed, 0, n, N_ACTIONS, &obs_dims);
        let run = fit_one(&train, &test, &init, &em, 0)?;
        state_scan.push(StateScanRow {
            n_states: n,
            train_ll_per_step: run.summary.train_ll_per_step,
            test_ll_per_step: run.summary.test_ll_per_step,
        });
    }
    let state_note = state_note(&state_scan, cfg.n_states);

    let dir = model_dir(&out);
    io::ensure_dir(&dir)?;
    best.params.save(model_path(&out))?;
    io::write_csv(
        &dir.join("em_curve.csv"),
        &["iteration", "train_ll_per_step", "test_ll_per_step"],
        best.train_curve
            .iter()
            .zip(&best.test_curve)
            .enumerate()
            .map(|(i, (a, b))| vec![i.to_string(), fmt(*a), fmt(*b)]),
    )?;
    io::write_csv(
        &dir.join("state_scan.csv"),
        &["n_states", "train_ll_per_step", "test_ll_per_step"],
        state_scan
            .iter()
            .map(|r| vec![r.n_states.to_string(), fmt(r.train_ll_per_step), fmt(r.test_ll_per_step)]),
    )?;
    let report = FitReport {
        n_states: cfg.n_states,
        n_train: train.len(),
        n_test: test.len(),
        best_restart: best.summary.restart,
        restarts,
        train_curve: best.train_curve,
        test_curve: best.test_curve,
        unvisited_rows: best.unvisited,
        state_scan,
        state_note,
    };
    io::write_json(&dir.join("fit_report.json"), &report)?;
    Ok(report)
}

fn state_note(scan: &[StateScanRow], chosen: usize) -> String {
    let mut parts = Vec::new();
    for w in scan.windows(2) {
        parts.push(format!(
            "|S| {} -> {}: train {:+.4}, test {:+.4} per step",
            w[0].n_states,
            w[1].n_states,
            w[1].train_ll_per_step - w[0].train_ll_per_step,
            w[1].test_ll_per_step - w[0].test_ll_per_step
        ));
    }
    format!(
        "converged log-likelihood gains by state count (chosen |S| = {chosen}): {}",
        if parts.is_empty() { "no scan".into() } else { parts.join("; ") }
    )
}
