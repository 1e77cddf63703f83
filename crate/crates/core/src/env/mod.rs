//! Simulated display-advertising auction with a hidden shopping-intent funnel.
//!
//! Each episode pairs one user with one catalog item. Per request the agent
//! picks an action that scales the item's rank score; the item is displayed
//! when its score beats enough competitors. Displays move the user through
//! the funnel and produce clicks and purchases; the reward is scaled revenue
//! minus the (punished) click cost.

mod config;
mod observation;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

pub use config::*;
pub use observation::{Counters, ObservationSpec};

use crate::error::{invalid, Result};
use crate::hmm::{sample_categorical, Step, Trajectory};

/// A catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub category_id: String,
    pub price: f64,
    pub bid: f64,
    pub pctr: f64,
}

/// Reward parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda_scale: f64,
    pub beta_boost: f64,
}

impl RewardConfig {
    /// `lambda * price * y - c * bid * x` with `c = beta` for boosted requests.
    pub fn reward(&self, item: &Item, action: usize, click: bool, purchase: bool) -> f64 {
        let cost_mult = if action == BOOST { self.beta_boost } else { 1.0 };
        let y = if purchase { 1.0 } else { 0.0 };
        let x = if click { 1.0 } else { 0.0 };
        self.lambda_scale * item.price * y - cost_mult * item.bid * x
    }
}

/// Ground-truth world derived from an [`EnvConfig`].
#[derive(Debug, Clone)]
pub struct World {
    pub config: EnvConfig,
    pub items: Vec<Item>,
    pub reward: RewardConfig,
    pub obs_spec: ObservationSpec,
    competitor: LogNormal<f64>,
}

/// Mutable per-episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub intent: usize,
    pub scenario: usize,
    pub counters: Counters,
}

/// Random variates for one request, drawn up front so that every action sees
/// the same randomness (paired comparisons across agents).
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub competitor_scores: Vec<f64>,
    pub u_click: f64,
    pub u_purchase: f64,
    pub u_transition: f64,
    pub u_switch: f64,
    pub u_scenario: f64,
}

/// Result of one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub displayed: bool,
    pub click: bool,
    pub purchase: bool,
    pub reward: f64,
}

/// What an agent sees before acting on request `t` (1-based).
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub t: usize,
    /// Action that preceded `obs` (the placeholder on the first request).
    pub prev_action: usize,
    pub obs: &'a [usize],
    /// Outcome of the previous request, `None` on the first.
    pub last: Option<StepOutcome>,
    /// Item shown this episode.
    pub item: &'a Item,
}

/// A rolled-out episode. `trajectory` has `horizon + 1` steps: step 0 holds
/// the placeholder action and the first observation; step `t` holds the
/// action of request `t`, its outcome and the following observation.
/// `states[t]` is the hidden intent when `steps[t].obs` was emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub states: Vec<usize>,
    pub item: Item,
    /// Whether the ad was displayed on each request.
    pub displayed: Vec<bool>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.trajectory.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_reward(&self, gamma: f64) -> f64 {
        self.trajectory
            .steps
            .iter()
            .skip(1)
            .enumerate()
            .map(|(k, s)| gamma.powi(k as i32) * s.reward)
            .sum()
    }
}

impl World {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let items = (0..config.item_prices.len())
            .map(|i| Item {
                id: i,
                category_id: config.category.clone(),
                price: config.item_prices[i],
                bid: config.item_bids[i],
                pctr: config.item_pctrs[i],
            })
            .collect();
        let obs_spec = if config.obs_edges.is_empty() {
            ObservationSpec::unit_bins(config.cardinalities.clone())
        } else {
            ObservationSpec::with_edges(config.cardinalities.clone(), config.obs_edges.clone())?
        };
        let competitor = LogNormal::new(config.competitor_log_mean, config.competitor_log_sd)
            .map_err(|e| crate::Error::InvalidInput(format!("competitor distribution: {e}")))?;
        Ok(Self {
            reward: RewardConfig {
                lambda_scale: config.lambda_scale,
                beta_boost: config.beta_boost,
            },
            items,
            obs_spec,
            competitor,
            config,
        })
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        self.obs_spec.cardinalities.clone()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> StepNoise {
        let competitor_scores = (0..self.config.competitor_count)
            .map(|_| self.competitor.sample(rng))
            .collect();
        StepNoise {
            competitor_scores,
            u_click: rng.random(),
            u_purchase: rng.random(),
            u_transition: rng.random(),
            u_switch: rng.random(),
            u_scenario: rng.random(),
        }
    }

    /// Adjusted rank score `pctr * bid * delta_a`.
    pub fn adjusted_score(&self, item: &Item, action: usize) -> f64 {
        item.pctr * item.bid * self.config.deltas[action]
    }

    /// Auction for `action` with this world's deltas and slot count.
    pub fn auction(&self, item: &Item, action: usize, competitor_scores: &[f64]) -> bool {
        run_auction(item, self.config.deltas[action], competitor_scores, self.config.slots)
    }

    /// Initial state of an episode.
    pub fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> (Item, EpisodeState) {
        let item = self.items[rng.random_range(0..self.items.len())].clone();
        let intent = sample_categorical(rng, &self.config.b0);
        let gw = rng.random::<f64>() < self.config.gw_preference[intent];
        let state = EpisodeState {
            intent,
            scenario: if gw { GUESS_WHAT_YOU_LIKE } else { GOOD_ITEMS },
            counters: Counters::default(),
        };
        (item, state)
    }

    /// Initial state after the random warm-up (see [`EnvConfig::warmup_max`]).
    pub fn start_with_history<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Item, EpisodeState)> {
        let (item, mut state) = self.start(rng);
        let n = rng.random_range(0..=self.config.warmup_max);
        for _ in 0..n {
            let noise = self.draw_noise(rng);
            self.step(&mut state, &item, self.config.initial_action, &noise)?;
        }
        Ok((item, state))
    }

    pub fn observe(&self, state: &EpisodeState) -> Vec<usize> {
        self.obs_spec.discretize(&state.counters.features(state.scenario))
    }

    /// Advances the state by one request under `action` with pre-drawn noise.
    pub fn step(&self, state: &mut EpisodeState, item: &Item, action: usize, noise: &StepNoise) -> Result<StepOutcome> {
        if action >= N_ACTIONS {
            return invalid(format!("action {action} out of range"));
        }
        let cfg = &self.config;
        let displayed = self.auction(item, action, &noise.competitor_scores);
        let (mut click, mut purchase) = (false, false);
        let row = if displayed {
            click = noise.u_click < cfg.click_prob[state.intent][state.scenario];
            purchase = click && noise.u_purchase < cfg.purchase_given_click[state.intent];
            let c = &mut state.counters;
            if state.scenario == GUESS_WHAT_YOU_LIKE {
                c.pv_gw += 1;
                c.clk_gw += click as u32;
            } else {
                c.pv_gi += 1;
                c.clk_gi += click as u32;
            }
            &cfg.display_transition[state.intent]
        } else {
            &cfg.no_display_transition[state.intent]
        };
        state.intent = categorical_from_uniform(row, noise.u_transition);
        if noise.u_switch < cfg.scenario_switch_prob {
            state.scenario = if noise.u_scenario < cfg.gw_preference[state.intent] {
                GUESS_WHAT_YOU_LIKE
            } else {
                GOOD_ITEMS
            };
        }
        Ok(StepOutcome {
            displayed,
            click,
            purchase,
            reward: self.reward.reward(item, action, click, purchase),
        })
    }

    /// Rolls out one episode. `policy` is called once per request.
    pub fn rollout<F>(&self, seed: u64, user_id: impl Into<String>, mut policy: F) -> Result<Episode>
    where
        F: FnMut(&AgentView) -> usize,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (item, mut state) = self.start_with_history(&mut rng)?;
        let horizon = self.config.horizon;
        let mut steps = Vec::with_capacity(horizon + 1);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut displayed = Vec::with_capacity(horizon);
        steps.push(Step::new(self.config.initial_action, self.observe(&state)));
        states.push(state.intent);
        let mut last = None;
        for t in 1..=horizon {
            let prev = steps.last().expect("non-empty");
            let view = AgentView {
                t,
                prev_action: prev.action,
                obs: &prev.obs,
                last,
                item: &item,
            };
            let action = policy(&view);
            let noise = self.draw_noise(&mut rng);
            let out = self.step(&mut state, &item, action, &noise)?;
            let mut s = Step::new(action, self.observe(&state));
            s.reward = out.reward;
            s.click = out.click as u8;
            s.purchase = out.purchase as u8;
            steps.push(s);
            states.push(state.intent);
            displayed.push(out.displayed);
            last = Some(out);
        }
        let traj = Trajectory {
            user_id: user_id.into(),
            category_id: self.config.category.clone(),
            steps,
        };
        Ok(Episode {
            trajectory: traj,
            states,
            item,
            displayed,
        })
    }
}

/// The item wins one of `k` slots when fewer than `k` competitors score
/// strictly higher than `pctr * bid * delta`; ties go to the item.
pub fn run_auction(item: &Item, delta: f64, competitors: &[f64], k: usize) -> bool {
    let score = item.pctr * item.bid * delta;
    competitors.iter().filter(|&&c| c > score).count() < k
}

fn categorical_from_uniform(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn world() -> World {
        World::new(EnvConfig::default()).unwrap()
    }

    fn noise(scores: Vec<f64>, u: f64) -> StepNoise {
        StepNoise {
            competitor_scores: scores,
            u_click: u,
            u_purchase: u,
            u_transition: u,
            u_switch: 1.0,
            u_scenario: u,
        }
    }

    #[test]
    fn default_config_is_valid() {
        EnvConfig::default().validate().unwrap();
        let w = world();
        assert_eq!(w.obs_dims(), vec![7, 6, 12, 4, 2]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = EnvConfig::default();
        c.click_prob[SEARCH][0] = 0.01;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.b0 = vec![0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.item_bids.pop();
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.obs_edges = vec![vec![1.0]; 5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn reward_is_exact() {
        let w = world();
        let item = Item { id: 0, category_id: "c".into(), price: 10.0, bid: 1.0, pctr: 0.05 };
        let r = &w.reward;
        assert_eq!(r.reward(&item, BOOST, true, true), 48.8);
        assert_eq!(r.reward(&item, KEEP, false, false), 0.0);
        assert_eq!(r.reward(&item, KEEP, true, false), -1.0);
        assert_eq!(r.reward(&item, BOOST, true, false), -1.2);
        assert_eq!(r.reward(&item, BOOST, true, true), 5.0 * 10.0 - 1.2 * 1.0);
        assert_eq!(r.reward(&item, RESTRAIN, true, true), 49.0);
    }

    #[test]
    fn display_is_monotone_in_delta() {
        let w = world();
        let item = w.items[1].clone();
        for &c in &[0.001, 0.004, 0.05, 0.3, 0.6] {
            let d: Vec<bool> = [RESTRAIN, KEEP, BOOST].iter().map(|&a| w.auction(&item, a, &[c])).collect();
            assert!(d[0] <= d[1] && d[1] <= d[2], "{c}: {d:?}");
        }
        // tie goes to the item
        let s = w.adjusted_score(&item, KEEP);
        assert!(w.auction(&item, KEEP, &[s]));
    }

    #[test]
    fn auction_examples() {
        let item = Item { id: 0, category_id: "c".into(), price: 10.0, bid: 2.0, pctr: 0.05 };
        assert!(!run_auction(&item, 1.0, &[0.5], 1));
        assert!(run_auction(&item, 10.0, &[0.5], 1));
        assert!(run_auction(&item, 0.1, &[], 1));
        assert!(run_auction(&item, 1.0, &[0.5, 0.01], 2));
    }

    #[test]
    fn restraining_against_strong_competitors_earns_nothing() {
        let mut cfg = EnvConfig::default();
        cfg.competitor_log_mean = 10.0;
        cfg.competitor_log_sd = 0.0;
        let w = World::new(cfg).unwrap();
        for seed in 0..200 {
            let e = w.rollout(seed, "", |_| RESTRAIN).unwrap();
            assert!(e.trajectory.steps.iter().all(|s| s.click == 0 && s.reward == 0.0));
        }
    }

    #[test]
    fn counters_track_the_displayed_scenario() {
        let w = world();
        let item = w.items[0].clone();
        let mut st = EpisodeState { intent: INTEREST, scenario: GUESS_WHAT_YOU_LIKE, counters: Counters::default() };
        let out = w.step(&mut st, &item, BOOST, &noise(vec![0.0], 0.0)).unwrap();
        assert!(out.displayed && out.click && out.purchase);
        assert_eq!(st.counters, Counters { pv_gi: 0, clk_gi: 0, pv_gw: 1, clk_gw: 1 });
        st.scenario = GOOD_ITEMS;
        let out = w.step(&mut st, &item, KEEP, &noise(vec![0.0], 0.999)).unwrap();
        assert!(out.displayed && !out.click);
        assert_eq!(st.counters, Counters { pv_gi: 1, clk_gi: 0, pv_gw: 1, clk_gw: 1 });
        let before = st.counters;
        let out = w.step(&mut st, &item, RESTRAIN, &noise(vec![1e6], 0.0)).unwrap();
        assert!(!out.displayed && !out.click && out.reward == 0.0);
        assert_eq!(st.counters, before);
    }

    #[test]
    fn rollout_is_deterministic_and_aligned() {
        let w = world();
        let a = w.rollout(11, "u", |_| BOOST).unwrap();
        let b = w.rollout(11, "u", |_| BOOST).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.len(), w.horizon() + 1);
        assert_eq!(a.states.len(), w.horizon() + 1);
        assert_eq!(a.trajectory.steps[0].action, KEEP);
        assert!(a.trajectory.steps[1..].iter().all(|s| s.action == BOOST));
        let dims = w.obs_dims();
        for s in &a.trajectory.steps {
            assert!(s.obs.iter().zip(&dims).all(|(o, m)| o < m));
            assert!(s.purchase <= s.click);
        }
    }

    #[test]
    fn boosting_moves_users_down_the_funnel() {
        // paired per-seed differences; the mean shift must exceed 3 standard errors
        let w = world();
        let n = 4000;
        let (mut aw, mut deep) = (Vec::new(), Vec::new());
        for seed in 0..n {
            let b = *w.rollout(seed, "", |_| BOOST).unwrap().states.last().unwrap();
            let r = *w.rollout(seed, "", |_| RESTRAIN).unwrap().states.last().unwrap();
            aw.push((r == AWARENESS) as i32 as f64 - (b == AWARENESS) as i32 as f64);
            deep.push((b == INTEREST) as i32 as f64 - (r == INTEREST) as i32 as f64);
        }
        for d in [aw, deep] {
            let mean = d.iter().sum::<f64>() / n as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean > 3.0 * (var / n as f64).sqrt(), "mean shift {mean}, var {var}");
        }
    }

    #[test]
    fn conversion_rate_rises_under_repeated_boosting() {
        let w = world();
        let h = w.horizon();
        let (mut clicks, mut buys) = (vec![0usize; h + 1], vec![0usize; h + 1]);
        for seed in 0..20_000 {
            let e = w.rollout(seed, "", |_| BOOST).unwrap();
            for (t, s) in e.trajectory.steps.iter().enumerate().skip(1) {
                clicks[t] += s.click as usize;
                buys[t] += s.purchase as usize;
            }
        }
        let cvr = |t: usize| buys[t] as f64 / clicks[t] as f64;
        assert!(cvr(h) > cvr(1), "first {} last {}", cvr(1), cvr(h));
        let early = (buys[1] + buys[2]) as f64 / (clicks[1] + clicks[2]) as f64;
        let late = (buys[h - 1] + buys[h]) as f64 / (clicks[h - 1] + clicks[h]) as f64;
        assert!(late > early);
    }

    proptest! {
        #[test]
        fn rollouts_respect_invariants(seed in any::<u64>(), actions in prop::collection::vec(0usize..3, 8)) {
            let w = world();
            let e = w.rollout(seed, "p", |v| actions[v.t - 1]).unwrap();
            let mut prev = Counters::default();
            for (t, s) in e.trajectory.steps.iter().enumerate().skip(1) {
                let expected = w.reward.reward(&e.item, s.action, s.click == 1, s.purchase == 1);
                prop_assert_eq!(s.reward, expected);
                if !e.displayed[t - 1] {
                    prop_assert_eq!(s.click, 0);
                }
                // counters never decrease (observed symbols with unit bins)
                let c = Counters {
                    pv_gi: s.obs[0] as u32, clk_gi: s.obs[1] as u32,
                    pv_gw: s.obs[2] as u32, clk_gw: s.obs[3] as u32,
                };
                prop_assert!(c.pv_gi >= prev.pv_gi && c.pv_gw >= prev.pv_gw);
                prop_assert!(c.clk_gi >= prev.clk_gi && c.clk_gw >= prev.clk_gw);
                prev = c;
            }
        }
    }
}
