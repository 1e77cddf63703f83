use adpomdp_core::agents::{Agent, AgentKind};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::evaluate::{build_report, eval_seeds, evaluate_agent};
use crate::fit::load_model;
use crate::io::{self, fmt};
use crate::train::{new_world, train_agent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub disa_mean_reward: f64,
    pub manual_mean_reward: f64,
    pub rel_reward: f64,
    pub rel_roi: f64,
}

/// DISA hyper-parameter sweep over the discount factor and the number of
/// vectors per action, one axis at a time, at reduced episode counts.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let world = new_world(cfg)?;
    let model = load_model(&cfg.out_path())?;
    let seeds = eval_seeds(cfg.seed, cfg.sweep_eval_episodes.max(1));
    let manual = evaluate_agent(cfg, &world, &Agent::Manual, None, &seeds, None)?;

    let mut variants: Vec<(String, f64, ExperimentConfig)> = Vec::new();
    for &g in &cfg.sweep_gammas {
        let mut c = cfg.clone();
        c.gamma = g;
        variants.push(("gamma".into(), g, c));
    }
    for &n in &cfg.sweep_n_vectors {
        let mut c = cfg.clone();
        c.n_vectors = n;
        variants.push(("n_vectors".into(), n as f64, c));
    }

    let mut rows = Vec::new();
    for (axis, value, c) in variants {
        let trained = train_agent(&c, &world, AgentKind::Disa, Some(&model), c.sweep_train_episodes, None)?;
        let t = evaluate_agent(&c, &world, &trained.agent, trained.estimator.as_ref(), &seeds, None)?;
        let report = build_report(c.gamma, &[(AgentKind::Manual, manual), (AgentKind::Disa, t)]);
        let disa = &report.rows[1];
        rows.push(SweepRow {
            axis,
            value,
            disa_mean_reward: t.mean_reward(),
            manual_mean_reward: manual.mean_reward(),
            rel_reward: disa.rel_reward,
            rel_roi: disa.rel_roi,
        });
    }
    let dir = cfg.out_path().join("sweep");
    io::write_csv(
        &dir.join("sweep.csv"),
        &["axis", "value", "disa_mean_reward", "manual_mean_reward", "rel_reward", "rel_roi"],
        rows.iter().map(|r| {
            vec![
                r.axis.clone(),
                fmt(r.value),
                fmt(r.disa_mean_reward),
                fmt(r.manual_mean_reward),
                fmt(r.rel_reward),
                fmt(r.rel_roi),
            ]
        }),
    )?;
    Ok(rows)
}
