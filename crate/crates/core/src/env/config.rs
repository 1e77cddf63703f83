use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Action indices. The agent scales the item's rank score by `deltas[a]`.
pub const BOOST: usize = 0;
pub const KEEP: usize = 1;
pub const RESTRAIN: usize = 2;
pub const N_ACTIONS: usize = 3;
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["boost", "keep", "restrain"];

/// Hidden intent labels of the ground-truth world.
pub const AWARENESS: usize = 0;
pub const SEARCH: usize = 1;
pub const INTEREST: usize = 2;
pub const N_INTENTS: usize = 3;
pub const INTENT_NAMES: [&str; N_INTENTS] = ["awareness", "search", "interest"];

/// Scenario indices; `scen = 1` marks Guess-What-You-Like.
pub const GOOD_ITEMS: usize = 0;
pub const GUESS_WHAT_YOU_LIKE: usize = 1;

/// Observation feature order: `pv_gi, clk_gi, pv_gw, clk_gw, scen`.
pub const FEATURE_NAMES: [&str; 5] = ["pv_gi", "clk_gi", "pv_gw", "clk_gw", "scen"];
pub const DEFAULT_CARDINALITIES: [usize; 5] = [7, 6, 12, 4, 2];

/// Flat environment configuration. Every field has a default; the default
/// world is synthetic and chosen so that click probability rises along the
/// funnel awareness -> search -> interest, intents are persistent, and the
/// scenario of each request is drawn from the current intent's preference.
/// Awareness users never buy; search users mostly browse
/// Guess-What-You-Like; interest users click and buy the most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Requests per episode.
    pub horizon: usize,
    /// Category the simulated items belong to.
    pub category: String,
    /// Action recorded before the first observation.
    pub initial_action: usize,
    /// Users arrive with history: before the first observation, a uniform
    /// number of requests in `0..=warmup_max` is served with `initial_action`.
    pub warmup_max: usize,

    /// Initial intent distribution over (awareness, search, interest).
    pub b0: Vec<f64>,
    /// Intent transition after the ad is displayed, `[from][to]`.
    pub display_transition: Vec<Vec<f64>>,
    /// Intent transition when the ad is not displayed.
    pub no_display_transition: Vec<Vec<f64>>,
    /// Click probability per displayed ad, `[intent][scenario]`.
    pub click_prob: Vec<Vec<f64>>,
    /// Purchase probability given a click, per intent.
    pub purchase_given_click: Vec<f64>,
    /// Probability that the user re-draws the scenario before a request.
    pub scenario_switch_prob: f64,
    /// Probability of Guess-What-You-Like when the scenario is drawn, per intent.
    pub gw_preference: Vec<f64>,

    /// Catalog, one entry per item (parallel arrays). Currency units.
    pub item_prices: Vec<f64>,
    pub item_bids: Vec<f64>,
    pub item_pctrs: Vec<f64>,

    /// Number of competing ads per request and the log-normal parameters
    /// of their rank scores.
    pub competitor_count: usize,
    pub competitor_log_mean: f64,
    pub competitor_log_sd: f64,
    /// Display slots per request.
    pub slots: usize,

    /// Revenue scale lambda.
    pub lambda_scale: f64,
    /// Bid punishment beta applied to clicks won by boosting.
    pub beta_boost: f64,
    /// Rank-score ratio per action (boost, keep, restrain).
    pub deltas: Vec<f64>,

    /// Symbols per observation feature.
    pub cardinalities: Vec<usize>,
    /// Optional explicit bin edges per feature (`cardinality - 1` increasing
    /// values each). Empty means unit-width bins for integer counts.
    pub obs_edges: Vec<Vec<f64>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            category: "c0".into(),
            initial_action: KEEP,
            warmup_max: 8,
            b0: vec![0.34, 0.33, 0.33],
            display_transition: vec![
                vec![0.96, 0.03, 0.01],
                vec![0.00, 0.97, 0.03],
                vec![0.00, 0.01, 0.99],
            ],
            no_display_transition: vec![
                vec![0.98, 0.015, 0.005],
                vec![0.02, 0.97, 0.01],
                vec![0.01, 0.02, 0.97],
            ],
            click_prob: vec![vec![0.04, 0.03], vec![0.20, 0.25], vec![0.80, 0.70]],
            purchase_given_click: vec![0.0, 0.05, 0.22],
            scenario_switch_prob: 1.0,
            gw_preference: vec![0.02, 0.98, 0.5],
            item_prices: vec![8.0, 10.0, 12.0],
            item_bids: vec![0.8, 1.0, 1.2],
            item_pctrs: vec![0.05, 0.05, 0.05],
            competitor_count: 1,
            competitor_log_mean: (0.05f64).ln(),
            competitor_log_sd: 0.8,
            slots: 1,
            lambda_scale: 5.0,
            beta_boost: 1.2,
            deltas: vec![10.0, 1.0, 0.1],
            cardinalities: DEFAULT_CARDINALITIES.to_vec(),
            obs_edges: Vec::new(),
        }
    }
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("{what} = {p} is not a probability"));
    }
    Ok(())
}

fn check_stochastic(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return invalid(format!("{what}: expected {len} entries"));
    }
    for &p in row {
        check_prob(p, what)?;
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return invalid(format!("{what}: sums to {s}"));
    }
    Ok(())
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return invalid("horizon must be at least 1");
        }
        if self.initial_action >= N_ACTIONS {
            return invalid("initial_action out of range");
        }
        check_stochastic(&self.b0, N_INTENTS, "b0")?;
        for (name, m) in [
            ("display_transition", &self.display_transition),
            ("no_display_transition", &self.no_display_transition),
        ] {
            if m.len() != N_INTENTS {
                return invalid(format!("{name} needs {N_INTENTS} rows"));
            }
            for row in m {
                check_stochastic(row, N_INTENTS, name)?;
            }
        }
        if self.click_prob.len() != N_INTENTS || self.click_prob.iter().any(|r| r.len() != 2) {
            return invalid("click_prob must be 3 x 2 (intent x scenario)");
        }
        for row in &self.click_prob {
            for &p in row {
                check_prob(p, "click_prob")?;
            }
        }
        for scen in 0..2 {
            let c: Vec<f64> = self.click_prob.iter().map(|r| r[scen]).collect();
            if !(c[AWARENESS] < c[SEARCH] && c[SEARCH] < c[INTEREST]) {
                return invalid("click_prob must increase along awareness < search < interest");
            }
        }
        if self.purchase_given_click.len() != N_INTENTS || self.gw_preference.len() != N_INTENTS {
            return invalid("purchase_given_click and gw_preference need one entry per intent");
        }
        for &p in self.purchase_given_click.iter().chain(&self.gw_preference) {
            check_prob(p, "per-intent probability")?;
        }
        check_prob(self.scenario_switch_prob, "scenario_switch_prob")?;

        let n_items = self.item_prices.len();
        if n_items == 0 || self.item_bids.len() != n_items || self.item_pctrs.len() != n_items {
            return invalid("catalog arrays must be non-empty and of equal length");
        }
        if self.item_prices.iter().chain(&self.item_bids).any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("item prices and bids must be positive");
        }
        for &p in &self.item_pctrs {
            check_prob(p, "item pctr")?;
        }
        if !(self.competitor_log_sd >= 0.0 && self.competitor_log_mean.is_finite()) {
            return invalid("competitor log-normal parameters invalid");
        }
        if self.slots == 0 {
            return invalid("slots must be at least 1");
        }
        if !(self.lambda_scale > 0.0) {
            return invalid("lambda_scale must be positive");
        }
        if !(self.beta_boost >= 1.0) {
            return invalid("beta_boost must be >= 1");
        }
        if self.deltas.len() != N_ACTIONS || self.deltas.iter().any(|&d| !(d > 0.0)) {
            return invalid("deltas needs three positive ratios (boost, keep, restrain)");
        }
        if self.cardinalities.len() != FEATURE_NAMES.len() || self.cardinalities.iter().any(|&c| c == 0) {
            return invalid("cardinalities needs five positive entries");
        }
        if self.cardinalities[4] != 2 {
            return invalid("the scenario feature is binary");
        }
        if !self.obs_edges.is_empty() {
            super::ObservationSpec::with_edges(self.cardinalities.clone(), self.obs_edges.clone())?;
        }
        Ok(())
    }
}
