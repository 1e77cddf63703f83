use std::path::{Path, PathBuf};

use adpomdp_core::agents::{run_episode, Agent, AgentKind, EpisodeOptions};
use adpomdp_core::env::World;
use adpomdp_core::hmm::{ModelParams, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::{self, fmt, stream, stream_rng};
use crate::metrics::{relative, Totals};
use crate::train::{kind_index, load_agent, new_world};

pub const EVAL_DIR: &str = "eval";

/// One evaluation episode with the filtered beliefs and the hidden path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub agent: AgentKind,
    pub episode: usize,
    pub item: usize,
    pub trajectory: Trajectory,
    /// Filtered beliefs aligned with the trajectory steps (empty when the
    /// agent does not use beliefs).
    pub beliefs: Vec<Vec<f64>>,
    /// Hidden intent at every step.
    pub states: Vec<usize>,
    pub belief_fallbacks: usize,
}

/// Raw totals plus the values relative to the manual agent (= 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: AgentKind,
    pub totals: Totals,
    pub roi: f64,
    pub rel_revenue: f64,
    pub rel_cost: f64,
    pub rel_roi: f64,
    pub rel_reward: f64,
    pub rel_discounted_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub gamma: f64,
    pub rows: Vec<AgentMetrics>,
}

impl MetricsReport {
    pub fn get(&self, kind: AgentKind) -> Option<&AgentMetrics> {
        self.rows.iter().find(|r| r.agent == kind)
    }
}

pub fn eval_dir(out: &Path) -> PathBuf {
    out.join(EVAL_DIR)
}

pub fn eval_log_path(out: &Path, kind: AgentKind) -> PathBuf {
    eval_dir(out).join(format!("eval_log_{kind}.jsonl"))
}

/// Environment seeds of the evaluation set, shared by every agent.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream_rng(seed, stream::EVAL_ENV);
    (0..episodes).map(|_| rng.random()).collect()
}

/// Greedy (epsilon = 0, no learning) rollouts of one agent over the shared
/// seed set.
pub fn evaluate_agent(
    cfg: &ExperimentConfig,
    world: &World,
    agent: &Agent,
    estimator: Option<&ModelParams>,
    seeds: &[u64],
    mut log: Option<&mut Vec<EvalLog>>,
) -> Result<Totals> {
    let kind = agent.kind();
    let mut agent = agent.clone();
    let mut rng = stream_rng(cfg.seed, stream::AGENT_EVAL + kind_index(kind));
    let mut totals = Totals::default();
    for (i, &s) in seeds.iter().enumerate() {
        let user = format!("eval{i:06}");
        let opts = EpisodeOptions::default();
        let rec = run_episode(world, &mut agent, estimator, s, &user, opts, &mut rng)?;
        totals.add_episode(world, &rec.episode, cfg.gamma);
        if let Some(log) = log.as_deref_mut() {
            log.push(EvalLog {
                agent: kind,
                episode: i,
                item: rec.episode.item.id,
                beliefs: rec.beliefs.iter().map(|b| b.probs().to_vec()).collect(),
                states: rec.episode.states,
                trajectory: rec.episode.trajectory,
                belief_fallbacks: rec.belief_fallbacks,
            });
        }
    }
    Ok(totals)
}

/// Builds the relative table; `totals[0]` must be the manual agent.
pub fn build_report(gamma: f64, totals: &[(AgentKind, Totals)]) -> MetricsReport {
    let base = totals[0].1;
    let rows = totals
        .iter()
        .map(|(kind, t)| AgentMetrics {
            agent: *kind,
            totals: *t,
            roi: t.roi(),
            rel_revenue: relative(t.revenue, base.revenue),
            rel_cost: relative(t.cost, base.cost),
            rel_roi: relative(t.roi(), base.roi()),
            rel_reward: relative(t.reward, base.reward),
            rel_discounted_reward: relative(t.discounted_reward, base.discounted_reward),
        })
        .collect();
    MetricsReport {
        episodes: base.episodes,
        gamma,
        rows,
    }
}

/// Evaluation order: manual first, then the configured agents.
pub fn eval_kinds(cfg: &ExperimentConfig) -> Result<Vec<AgentKind>> {
    let mut kinds = vec![AgentKind::Manual];
    kinds.extend(cfg.agent_kinds()?.into_iter().filter(|k| *k != AgentKind::Manual));
    Ok(kinds)
}

/// Evaluates the manual agent and every trained agent on a shared seed set
/// and writes the metrics table and per-agent episode logs.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let world = new_world(cfg)?;
    let out = cfg.out_path();
    let seeds = eval_seeds(cfg.seed, cfg.eval_episodes);
    let mut totals = Vec::new();
    for kind in eval_kinds(cfg)? {
        let (agent, estimator) = load_agent(cfg, kind)?;
        let mut log = Vec::new();
        let t = evaluate_agent(cfg, &world, &agent, estimator.as_ref(), &seeds, Some(&mut log))?;
        io::write_jsonl(&eval_log_path(&out, kind), &log)?;
        totals.push((kind, t));
    }
    let report = build_report(cfg.gamma, &totals);
    write_metrics(&eval_dir(&out), &report)?;
    Ok(report)
}

pub const METRICS_HEADER: [&str; 16] = [
    "agent",
    "episodes",
    "revenue",
    "cost",
    "roi",
    "reward",
    "discounted_reward",
    "clicks",
    "purchases",
    "displays",
    "rel_revenue",
    "rel_cost",
    "rel_roi",
    "rel_reward",
    "rel_discounted_reward",
    "mean_reward",
];

pub fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<()> {
    io::write_csv(
        &dir.join("metrics.csv"),
        &METRICS_HEADER,
        report.rows.iter().map(|r| {
            let t = &r.totals;
            vec![
                r.agent.to_string(),
                t.episodes.to_string(),
                fmt(t.revenue),
                fmt(t.cost),
                fmt(r.roi),
                fmt(t.reward),
                fmt(t.discounted_reward),
                t.clicks.to_string(),
                t.purchases.to_string(),
                t.displays.to_string(),
                fmt(r.rel_revenue),
                fmt(r.rel_cost),
                fmt(r.rel_roi),
                fmt(r.rel_reward),
                fmt(r.rel_discounted_reward),
                fmt(t.mean_reward()),
            ]
        }),
    )?;
    io::write_json(&dir.join("metrics.json"), report)
}
