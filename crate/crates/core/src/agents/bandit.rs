use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::table;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStat {
    pub count: u64,
    pub mean: f64,
}

/// Epsilon-greedy contextual bandit over running mean immediate rewards;
/// the context is the full discretized observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditAgent {
    pub n_actions: usize,
    #[serde(with = "table")]
    pub stats: BTreeMap<Vec<usize>, Vec<ArmStat>>,
}

impl BanditAgent {
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            stats: BTreeMap::new(),
        }
    }

    /// Unvisited contexts draw uniformly. In a visited context, untried arms
    /// are taken first (lowest index), then the best mean.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[usize], epsilon: f64, rng: &mut R) -> usize {
        let Some(arms) = self.stats.get(obs) else {
            return rng.random_range(0..self.n_actions);
        };
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return rng.random_range(0..self.n_actions);
        }
        self.greedy(arms)
    }

    fn greedy(&self, arms: &[ArmStat]) -> usize {
        if let Some(a) = arms.iter().position(|s| s.count == 0) {
            return a;
        }
        let means: Vec<f64> = arms.iter().map(|s| s.mean).collect();
        table::argmax(&means)
    }

    pub fn update(&mut self, obs: &[usize], action: usize, reward: f64) {
        let arms = self
            .stats
            .entry(obs.to_vec())
            .or_insert_with(|| vec![ArmStat::default(); self.n_actions]);
        let s = &mut arms[action];
        s.count += 1;
        s.mean += (reward - s.mean) / s.count as f64;
    }
}
