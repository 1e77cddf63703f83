//! Decision-makers and their shared scaffolding.
//!
//! Every agent is driven through [`run_episode`], which turns environment
//! views into [`Perception`]s (observation, previous action, last reward and,
//! when an estimator is supplied, the filtered belief). All agents therefore
//! see identical inputs for identical action sequences.

mod bandit;
mod mlp;
mod replay;
mod table;
mod tabular;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bandit::{ArmStat, BanditAgent};
pub use mlp::{EmQAgent, Mlp, MlpGrads};
pub use replay::ReplayMemory;
pub use tabular::TabularQAgent;

use crate::belief::{belief_correct, belief_update, predict, Belief};
use crate::env::{Episode, World, KEEP};
use crate::error::{invalid, Error, Result};
use crate::hmm::ModelParams;
use crate::spova::{EtaSet, ExponentMode, SpovaConfig, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Manual,
    Bandit,
    TabularQ,
    EmQ,
    Disa,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [Self::Manual, Self::Bandit, Self::TabularQ, Self::EmQ, Self::Disa];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Manual => "manual",
            Self::Bandit => "bandit",
            Self::TabularQ => "tabular_q",
            Self::EmQ => "em_q",
            Self::Disa => "disa",
        }
    }

    /// Whether the agent acts on beliefs (and so needs a fitted model).
    pub fn uses_belief(self) -> bool {
        matches!(self, Self::EmQ | Self::Disa)
    }

    pub fn learns(self) -> bool {
        self != Self::Manual
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown agent kind {s:?}")))
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return invalid("epsilon endpoints must lie in [0, 1]");
        }
        if self.end > self.start {
            return invalid("epsilon must not increase (end > start)");
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Hyper-parameters of one agent. Fields that do not apply to `kind` are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub epsilon: EpsilonSchedule,
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Minibatch updates between target refreshes.
    pub target_refresh: usize,
    pub n_vectors: usize,
    pub z: f64,
    pub upsilon: f64,
    pub exponent_mode: ExponentMode,
    pub compensate: bool,
    pub reward_shift: f64,
    pub init_scale: f64,
}

impl AgentConfig {
    /// Defaults per kind.
    pub fn new(kind: AgentKind) -> Self {
        let spova = SpovaConfig::default();
        let learning_rate = match kind {
            AgentKind::TabularQ => 0.1,
            AgentKind::EmQ => 1e-3,
            _ => spova.learning_rate,
        };
        Self {
            kind,
            epsilon: EpsilonSchedule::default(),
            learning_rate,
            gamma: spova.gamma,
            hidden_width: 32,
            hidden_depth: 2,
            replay_capacity: 50_000,
            batch_size: 32,
            target_refresh: 200,
            n_vectors: spova.n_vectors,
            z: spova.z,
            upsilon: spova.upsilon,
            exponent_mode: spova.exponent_mode,
            compensate: spova.compensate,
            reward_shift: spova.reward_shift,
            init_scale: spova.init_scale,
        }
    }

    pub fn spova_config(&self) -> SpovaConfig {
        SpovaConfig {
            n_vectors: self.n_vectors,
            z: self.z,
            upsilon: self.upsilon,
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            exponent_mode: self.exponent_mode,
            compensate: self.compensate,
            reward_shift: self.reward_shift,
            init_scale: self.init_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.epsilon.validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return invalid("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.target_refresh == 0 || self.replay_capacity < self.batch_size {
            return invalid("batch_size and target_refresh must be positive and replay_capacity >= batch_size");
        }
        if self.kind == AgentKind::EmQ && (self.hidden_width == 0 || self.hidden_depth == 0) {
            return invalid("em_q needs at least one hidden layer of positive width");
        }
        if self.kind == AgentKind::Disa {
            self.spova_config().validate()?;
        }
        Ok(())
    }
}

/// SPOVA value function with a frozen target copy and its own replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisaAgent {
    pub etas: EtaSet,
    pub target: EtaSet,
    pub batch_size: usize,
    pub target_refresh: usize,
    pub replay_capacity: usize,
    pub updates: u64,
    #[serde(skip)]
    replay: Option<ReplayMemory<Transition>>,
}

impl DisaAgent {
    pub fn new(etas: EtaSet, batch_size: usize, target_refresh: usize, replay_capacity: usize) -> Self {
        Self {
            target: etas.clone(),
            etas,
            batch_size,
            target_refresh,
            replay_capacity,
            updates: 0,
            replay: None,
        }
    }

    pub fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<()> {
        let cap = self.replay_capacity;
        let replay = self.replay.get_or_insert_with(|| ReplayMemory::new(cap));
        replay.push(t);
        if replay.len() < self.batch_size {
            return Ok(());
        }
        let batch: Vec<Transition> = replay.sample(rng, self.batch_size).into_iter().cloned().collect();
        self.etas.train_step(&self.target, &batch)?;
        self.updates += 1;
        if self.updates % self.target_refresh as u64 == 0 {
            self.target = self.etas.clone();
        }
        Ok(())
    }
}

/// A trained or untrained agent; serializes as JSON tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Agent {
    Manual,
    Bandit(BanditAgent),
    TabularQ(TabularQAgent),
    EmQ(EmQAgent),
    Disa(DisaAgent),
}

/// Everything an agent is given before it acts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub t: usize,
    pub prev_action: usize,
    pub obs: Vec<usize>,
    pub last_reward: Option<f64>,
    pub belief: Option<Belief>,
}

/// One completed step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<usize>,
    pub belief: Option<Belief>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<usize>,
    pub next_belief: Option<Belief>,
    pub terminal: bool,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: &AgentConfig, n_states: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            AgentKind::Manual => Self::Manual,
            AgentKind::Bandit => Self::Bandit(BanditAgent::new(n_actions)),
            AgentKind::TabularQ => Self::TabularQ(TabularQAgent::new(n_actions, config.learning_rate, config.gamma)),
            AgentKind::EmQ => {
                let mut a = EmQAgent::new(
                    rng,
                    n_states,
                    n_actions,
                    config.hidden_width,
                    config.hidden_depth,
                    config.learning_rate,
                    config.gamma,
                );
                a.batch_size = config.batch_size;
                a.target_refresh = config.target_refresh;
                a.replay_capacity = config.replay_capacity;
                Self::EmQ(a)
            }
            AgentKind::Disa => {
                let etas = EtaSet::random(rng, n_states, n_actions, config.spova_config())?;
                Self::Disa(DisaAgent::new(etas, config.batch_size, config.target_refresh, config.replay_capacity))
            }
        })
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Self::Manual => AgentKind::Manual,
            Self::Bandit(_) => AgentKind::Bandit,
            Self::TabularQ(_) => AgentKind::TabularQ,
            Self::EmQ(_) => AgentKind::EmQ,
            Self::Disa(_) => AgentKind::Disa,
        }
    }

    fn belief<'a>(&self, b: Option<&'a Belief>) -> Result<&'a Belief> {
        b.ok_or_else(|| Error::InvalidInput(format!("{} agent needs a belief", self.kind())))
    }

    pub fn act<R: Rng + ?Sized>(&self, p: &Perception, epsilon: f64, rng: &mut R) -> Result<usize> {
        Ok(match self {
            Self::Manual => KEEP,
            Self::Bandit(b) => b.act(&p.obs, epsilon, rng),
            Self::TabularQ(q) => q.act(&p.obs, epsilon, rng),
            Self::EmQ(q) => q.act(self.belief(p.belief.as_ref())?, epsilon, rng),
            Self::Disa(d) => d.etas.select_action(self.belief(p.belief.as_ref())?, epsilon, rng),
        })
    }

    pub fn learn<R: Rng + ?Sized>(&mut self, e: &Experience, rng: &mut R) -> Result<()> {
        let belief_transition = |e: &Experience, kind: AgentKind| -> Result<Transition> {
            match (&e.belief, &e.next_belief) {
                (Some(b), Some(nb)) => Ok(Transition {
                    belief_before: b.clone(),
                    action: e.action,
                    reward: e.reward,
                    belief_after: nb.clone(),
                    terminal: e.terminal,
                }),
                _ => invalid(format!("{kind} agent needs beliefs to learn")),
            }
        };
        match self {
            Self::Manual => {}
            Self::Bandit(b) => b.update(&e.obs, e.action, e.reward),
            Self::TabularQ(q) => {
                q.update(&e.obs, e.action, e.reward, &e.next_obs, e.terminal);
            }
            Self::EmQ(q) => q.observe(belief_transition(e, AgentKind::EmQ)?, rng)?,
            Self::Disa(d) => d.observe(belief_transition(e, AgentKind::Disa)?, rng)?,
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Bayes filter with a fallback for observations the model deems impossible:
/// the correction is skipped and the predicted prior (or `b0` on the first
/// step) is used instead.
#[derive(Debug, Clone)]
pub struct BeliefTracker<'a> {
    pub params: &'a ModelParams,
    pub belief: Option<Belief>,
    pub fallbacks: usize,
}

impl<'a> BeliefTracker<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            belief: None,
            fallbacks: 0,
        }
    }

    pub fn reset(&mut self) {
        self.belief = None;
    }

    pub fn observe(&mut self, prev_action: usize, obs: &[usize]) -> Result<Belief> {
        let result = match &self.belief {
            None => belief_correct(self.params, &Belief::initial(self.params), prev_action, obs),
            Some(b) => belief_update(self.params, b, prev_action, obs),
        };
        let b = match result {
            Ok(b) => b,
            Err(Error::DegenerateBelief { .. }) => {
                self.fallbacks += 1;
                match &self.belief {
                    None => Belief::initial(self.params),
                    Some(b) => Belief::from_unnormalized(predict(self.params, b, prev_action))?,
                }
            }
            Err(e) => return Err(e),
        };
        self.belief = Some(b.clone());
        Ok(b)
    }
}

/// Options for [`run_episode`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions<'a> {
    pub epsilon: f64,
    pub learn: bool,
    /// Actions to take instead of the agent's choices (the agent still
    /// perceives every step).
    pub forced_actions: Option<&'a [usize]>,
    pub record_perceptions: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: Episode,
    /// Filtered beliefs aligned with the trajectory steps (empty without a model).
    pub beliefs: Vec<Belief>,
    pub perceptions: Vec<Perception>,
    pub belief_fallbacks: usize,
}

/// Runs one episode of `agent` in `world`, filtering beliefs with `model`
/// when given and learning online when `opts.learn` is set.
pub fn run_episode<R: Rng + ?Sized>(
    world: &World,
    agent: &mut Agent,
    model: Option<&ModelParams>,
    seed: u64,
    user_id: &str,
    opts: EpisodeOptions,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    if agent.kind().uses_belief() && model.is_none() {
        return invalid(format!("{} agent needs a fitted model", agent.kind()));
    }
    let mut tracker = model.map(BeliefTracker::new);
    let mut beliefs: Vec<Belief> = Vec::new();
    let mut perceptions = Vec::new();
    let mut pending: Option<(Vec<usize>, Option<Belief>, usize)> = None;
    let mut failure: Option<Error> = None;

    let mut perceive = |prev_action: usize, obs: &[usize]| -> Result<Option<Belief>> {
        match tracker.as_mut() {
            Some(tr) => tr.observe(prev_action, obs).map(Some),
            None => Ok(None),
        }
    };

    let episode = world.rollout(seed, user_id, |view| {
        if failure.is_some() {
            return KEEP;
        }
        let mut step = || -> Result<usize> {
            let belief = perceive(view.prev_action, view.obs)?;
            if let Some(b) = &belief {
                beliefs.push(b.clone());
            }
            if let (true, Some((obs, b, a)), Some(last)) = (opts.learn, pending.take(), view.last) {
                let e = Experience {
                    obs,
                    belief: b,
                    action: a,
                    reward: last.reward,
                    next_obs: view.obs.to_vec(),
                    next_belief: belief.clone(),
                    terminal: false,
                };
                agent.learn(&e, rng)?;
            }
            let p = Perception {
                t: view.t,
                prev_action: view.prev_action,
                obs: view.obs.to_vec(),
                last_reward: view.last.map(|o| o.reward),
                belief,
            };
            let chosen = agent.act(&p, opts.epsilon, rng)?;
            let action = match opts.forced_actions {
                Some(fa) => *fa.get(view.t - 1).ok_or_else(|| Error::InvalidInput("forced action list too short".into()))?,
                None => chosen,
            };
            pending = Some((p.obs.clone(), p.belief.clone(), action));
            if opts.record_perceptions {
                perceptions.push(p);
            }
            Ok(action)
        };
        match step() {
            Ok(a) => a,
            Err(e) => {
                failure = Some(e);
                KEEP
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let last = episode.trajectory.steps.last().expect("non-empty trajectory");
    let final_belief = perceive(last.action, &last.obs)?;
    if let Some(b) = &final_belief {
        beliefs.push(b.clone());
    }
    if opts.learn {
        if let Some((obs, b, a)) = pending.take() {
            let e = Experience {
                obs,
                belief: b,
                action: a,
                reward: last.reward,
                next_obs: last.obs.clone(),
                next_belief: final_belief,
                terminal: true,
            };
            agent.learn(&e, rng)?;
        }
    }
    let belief_fallbacks = tracker.map_or(0, |t| t.fallbacks);
    Ok(EpisodeRecord {
        episode,
        beliefs,
        perceptions,
        belief_fallbacks,
    })
}
