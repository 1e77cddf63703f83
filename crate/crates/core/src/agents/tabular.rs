use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::table;

/// One-step Q-learning over the finite discretized observation space.
/// Entries are created lazily at `init_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQAgent {
    pub n_actions: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub init_value: f64,
    #[serde(with = "table")]
    pub table: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl TabularQAgent {
    pub fn new(n_actions: usize, learning_rate: f64, gamma: f64) -> Self {
        Self {
            n_actions,
            learning_rate,
            gamma,
            init_value: 0.0,
            table: BTreeMap::new(),
        }
    }

    pub fn q_values(&self, obs: &[usize]) -> Vec<f64> {
        self.table
            .get(obs)
            .cloned()
            .unwrap_or_else(|| vec![self.init_value; self.n_actions])
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[usize], epsilon: f64, rng: &mut R) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return rng.random_range(0..self.n_actions);
        }
        table::argmax(&self.q_values(obs))
    }

    /// `Q(o,a) += lr (r + gamma max Q(o',.) - Q(o,a))`; terminal drops the
    /// bootstrap term. Returns the TD error.
    pub fn update(&mut self, obs: &[usize], action: usize, reward: f64, next_obs: &[usize], terminal: bool) -> f64 {
        let bootstrap = if terminal {
            0.0
        } else {
            self.q_values(next_obs).into_iter().fold(f64::NEG_INFINITY, f64::max)
        };
        let (init, n) = (self.init_value, self.n_actions);
        let row = self.table.entry(obs.to_vec()).or_insert_with(|| vec![init; n]);
        let td = reward + self.gamma * bootstrap - row[action];
        row[action] += self.learning_rate * td;
        td
    }
}
