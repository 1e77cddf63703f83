use std::path::{Path, PathBuf};

use adpomdp_core::agents::{run_episode, Agent, AgentKind, EpisodeOptions, ReplayMemory};
use adpomdp_core::belief::ema_blend;
use adpomdp_core::env::{World, N_ACTIONS};
use adpomdp_core::hmm::{em_fit, EmConfig, ModelParams, Trajectory};
use adpomdp_core::Error as CoreError;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::fit::load_model;
use crate::io::{self, fmt, stream, stream_rng};
use crate::metrics::Totals;

pub const AGENTS_DIR: &str = "agents";

/// One row of a training curve (one epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub episodes: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub revenue: f64,
    pub cost: f64,
    pub roi: f64,
    pub em_refreshed: bool,
}

/// Result of training one agent.
#[derive(Debug, Clone)]
pub struct Trained {
    pub agent: Agent,
    /// Belief estimator after the last refresh (belief agents only).
    pub estimator: Option<ModelParams>,
    pub curve: Vec<CurveRow>,
    pub belief_fallbacks: usize,
    pub skipped_refreshes: usize,
}

pub fn agents_dir(out: &Path) -> PathBuf {
    out.join(AGENTS_DIR)
}

pub fn agent_path(out: &Path, kind: AgentKind) -> PathBuf {
    agents_dir(out).join(format!("{kind}.json"))
}

pub fn estimator_path(out: &Path, kind: AgentKind) -> PathBuf {
    agents_dir(out).join(format!("{kind}_estimator.json"))
}

pub fn kind_index(kind: AgentKind) -> u64 {
    AgentKind::ALL.iter().position(|k| *k == kind).expect("listed kind") as u64
}

pub fn new_world(cfg: &ExperimentConfig) -> Result<World> {
    World::new(cfg.env()?).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Loads the fitted model when any requested agent needs beliefs.
pub fn model_if_needed(cfg: &ExperimentConfig, kinds: &[AgentKind]) -> Result<Option<ModelParams>> {
    if kinds.iter().any(|k| k.uses_belief()) {
        Ok(Some(load_model(&cfg.out_path())?))
    } else {
        Ok(None)
    }
}

/// Where periodic checkpoints and fault dumps go.
pub struct TrainOutput<'a> {
    pub out: &'a Path,
    pub checkpoint_every: usize,
}

/// The training loop for one agent: per-epoch estimator refresh (EM on
/// replayed trajectories, then EMA blend), epsilon-greedy rollouts with
/// online minibatch learning, curve rows per epoch.
///
/// Environment seeds come from a stream shared by all agents, so every
/// agent trains on the same sequence of users.
pub fn train_agent(
    cfg: &ExperimentConfig,
    world: &World,
    kind: AgentKind,
    model: Option<&ModelParams>,
    episodes: usize,
    output: Option<&TrainOutput>,
) -> Result<Trained> {
    let acfg = cfg.agent_config(kind);
    let mut rng = stream_rng(cfg.seed, stream::AGENT + kind_index(kind));
    let n_states = model.map_or(cfg.n_states, |m| m.n_states);
    let mut agent = Agent::new(&acfg, n_states, N_ACTIONS, &mut rng)?;
    let mut estimator = if kind.uses_belief() {
        Some(model.ok_or_else(|| HarnessError::Missing(format!("fitted model for {kind}")))?.clone())
    } else {
        None
    };

    let mut env_rng = stream_rng(cfg.seed, stream::TRAIN_ENV);
    let mut em_rng = stream_rng(cfg.seed, stream::EM_REFRESH);
    let mut replay: ReplayMemory<Trajectory> = ReplayMemory::new(cfg.trajectory_replay_capacity.max(1));
    let em = EmConfig {
        max_iters: cfg.em_refresh_iters,
        tol: 0.0,
        pseudocount: cfg.em_pseudocount,
    };

    let mut curve = Vec::new();
    let mut epoch_totals = Totals::default();
    let mut refreshed = false;
    let mut belief_fallbacks = 0;
    let mut skipped_refreshes = 0;
    for e in 0..episodes {
        if e > 0 && e % cfg.epoch_episodes == 0 {
            if let Some(theta) = estimator.as_mut() {
                if cfg.ema_rate > 0.0 && cfg.em_refresh_iters > 0 && !replay.is_empty() {
                    let m = cfg.em_refresh_trajectories.min(replay.len());
                    let batch: Vec<Trajectory> = replay.sample(&mut em_rng, m).into_iter().cloned().collect();
                    match em_fit(&batch, theta, &em) {
                        Ok(fit) => {
                            *theta = ema_blend(theta, &fit.params, cfg.ema_rate)?;
                            refreshed = true;
                        }
                        Err(CoreError::DegenerateLikelihood { .. }) => skipped_refreshes += 1,
                        Err(err) => return Err(err.into()),
                    }
                }
            }
        }

        let epsilon = acfg.epsilon.value(e as u64);
        let env_seed: u64 = env_rng.random();
        let opts = EpisodeOptions {
            epsilon,
            learn: true,
            ..Default::default()
        };
        let user = format!("train{e:06}");
        let rec = match run_episode(world, &mut agent, estimator.as_ref(), env_seed, &user, opts, &mut rng) {
            Ok(r) => r,
            Err(err) => {
                if let Some(o) = output {
                    dump_fault(o.out, kind, e, &agent, estimator.as_ref(), &err)?;
                }
                return Err(err.into());
            }
        };
        belief_fallbacks += rec.belief_fallbacks;
        epoch_totals.add_episode(world, &rec.episode, cfg.gamma);
        replay.push(rec.episode.trajectory);

        if (e + 1) % cfg.epoch_episodes == 0 || e + 1 == episodes {
            curve.push(CurveRow {
                epoch: curve.len(),
                episodes: e + 1,
                epsilon,
                mean_reward: epoch_totals.mean_reward(),
                revenue: epoch_totals.revenue,
                cost: epoch_totals.cost,
                roi: epoch_totals.roi(),
                em_refreshed: refreshed,
            });
            epoch_totals = Totals::default();
            refreshed = false;
        }
        if let Some(o) = output {
            if o.checkpoint_every > 0 && (e + 1) % o.checkpoint_every == 0 {
                let dir = agents_dir(o.out).join("checkpoints");
                io::atomic_write(&dir.join(format!("{kind}_{:06}.json", e + 1)), agent_json(&agent)?.as_bytes())?;
                if let Some(theta) = &estimator {
                    io::write_json(&dir.join(format!("{kind}_{:06}_estimator.json", e + 1)), theta)?;
                }
            }
        }
    }
    Ok(Trained {
        agent,
        estimator,
        curve,
        belief_fallbacks,
        skipped_refreshes,
    })
}

fn agent_json(agent: &Agent) -> Result<String> {
    let mut s = agent.to_json()?;
    s.push('\n');
    Ok(s)
}

fn dump_fault(
    out: &Path,
    kind: AgentKind,
    episode: usize,
    agent: &Agent,
    estimator: Option<&ModelParams>,
    err: &CoreError,
) -> Result<()> {
    #[derive(Serialize)]
    struct Dump<'a> {
        kind: AgentKind,
        episode: usize,
        error: String,
        agent: &'a Agent,
        estimator: Option<&'a ModelParams>,
    }
    io::write_json(
        &agents_dir(out).join(format!("{kind}_fault.json")),
        &Dump {
            kind,
            episode,
            error: err.to_string(),
            agent,
            estimator,
        },
    )
}

pub fn write_curve(path: &Path, curve: &[CurveRow]) -> Result<()> {
    io::write_csv(
        path,
        &["epoch", "episodes", "epsilon", "mean_reward", "revenue", "cost", "roi", "em_refreshed"],
        curve.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.episodes.to_string(),
                fmt(r.epsilon),
                fmt(r.mean_reward),
                fmt(r.revenue),
                fmt(r.cost),
                fmt(r.roi),
                r.em_refreshed.to_string(),
            ]
        }),
    )
}

/// Trains every configured agent and writes checkpoints, final agents,
/// estimators and training curves.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<(AgentKind, Trained)>> {
    let kinds = cfg.agent_kinds()?;
    let world = new_world(cfg)?;
    let model = model_if_needed(cfg, &kinds)?;
    let out = cfg.out_path();
    io::ensure_dir(&agents_dir(&out))?;
    let output = TrainOutput {
        out: &out,
        checkpoint_every: cfg.checkpoint_every,
    };
    let mut results = Vec::new();
    for kind in kinds {
        let trained = train_agent(cfg, &world, kind, model.as_ref(), cfg.train_episodes, Some(&output))?;
        io::atomic_write(&agent_path(&out, kind), agent_json(&trained.agent)?.as_bytes())?;
        if let Some(theta) = &trained.estimator {
            io::write_json(&estimator_path(&out, kind), theta)?;
        }
        write_curve(&agents_dir(&out).join(format!("{kind}_curve.csv")), &trained.curve)?;
        results.push((kind, trained));
    }
    Ok(results)
}

/// Loads a trained agent and its estimator (falling back to the fitted
/// model when no refreshed estimator was written).
pub fn load_agent(cfg: &ExperimentConfig, kind: AgentKind) -> Result<(Agent, Option<ModelParams>)> {
    let out = cfg.out_path();
    let agent = if kind == AgentKind::Manual {
        Agent::Manual
    } else {
        let p = agent_path(&out, kind);
        if !p.exists() {
            return Err(HarnessError::Missing(format!("{} (run train first)", p.display())));
        }
        Agent::from_json(&io::read_to_string(&p)?)?
    };
    let estimator = if kind.uses_belief() {
        let p = estimator_path(&out, kind);
        Some(if p.exists() { ModelParams::load(&p)? } else { load_model(&out)? })
    } else {
        None
    };
    Ok((agent, estimator))
}
