use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on probability-vector sums.
pub const PROB_TOL: f64 = 1e-12;

/// Parameters `(b0, T, O)` of an action-conditioned HMM with a factorized
/// observation model.
///
/// * `transition[a][i][j] = P(s' = j | s = i, a)`
/// * `emission[g][a][s][m] = P(o[g] = m | s, a)` where `a` is the action
///   taken before the observation is emitted.
///
/// The observation likelihood of a full symbol vector is the product of the
/// per-dimension terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub obs_dims: Vec<usize>,
    pub b0: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub emission: Vec<Vec<Vec<Vec<f64>>>>,
}

fn check_row(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return invalid(format!("{what}: expected length {len}, got {}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return invalid(format!("{what}: entry {p} is not a probability"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return invalid(format!("{what}: sums to {sum}, not 1"));
    }
    Ok(())
}

fn normalize_in_place(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|p| *p /= s);
    }
}

fn random_row<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    // Flat Dirichlet draw via normalized exponentials.
    let mut row: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3)
        .collect();
    normalize_in_place(&mut row);
    row
}

impl ModelParams {
    /// Builds and validates a parameter set.
    pub fn new(
        obs_dims: Vec<usize>,
        b0: Vec<f64>,
        transition: Vec<Vec<Vec<f64>>>,
        emission: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        let params = Self {
            n_states: b0.len(),
            n_actions: transition.len(),
            obs_dims,
            b0,
            transition,
            emission,
        };
        params.validate()?;
        Ok(params)
    }

    /// Like [`ModelParams::new`] but renormalizes every row first. Useful for
    /// hand-written models whose decimal entries do not sum exactly to one.
    pub fn normalized(
        obs_dims: Vec<usize>,
        mut b0: Vec<f64>,
        mut transition: Vec<Vec<Vec<f64>>>,
        mut emission: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        normalize_in_place(&mut b0);
        transition
            .iter_mut()
            .flatten()
            .for_each(|row| normalize_in_place(row));
        emission
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|row| normalize_in_place(row));
        Self::new(obs_dims, b0, transition, emission)
    }

    /// All-uniform parameters.
    pub fn uniform(n_states: usize, n_actions: usize, obs_dims: Vec<usize>) -> Self {
        let b0 = vec![1.0 / n_states as f64; n_states];
        let transition = vec![vec![vec![1.0 / n_states as f64; n_states]; n_states]; n_actions];
        let emission = obs_dims
            .iter()
            .map(|&m| vec![vec![vec![1.0 / m as f64; m]; n_states]; n_actions])
            .collect();
        Self {
            n_states,
            n_actions,
            obs_dims,
            b0,
            transition,
            emission,
        }
    }

    /// Random parameters with every row drawn from a flat Dirichlet.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_actions: usize,
        obs_dims: Vec<usize>,
    ) -> Self {
        let b0 = random_row(rng, n_states);
        let transition = (0..n_actions)
            .map(|_| (0..n_states).map(|_| random_row(rng, n_states)).collect())
            .collect();
        let emission = obs_dims
            .iter()
            .map(|&m| {
                (0..n_actions)
                    .map(|_| (0..n_states).map(|_| random_row(rng, m)).collect())
                    .collect()
            })
            .collect();
        Self {
            n_states,
            n_actions,
            obs_dims,
            b0,
            transition,
            emission,
        }
    }

    pub fn n_obs_dims(&self) -> usize {
        self.obs_dims.len()
    }

    /// Checks shapes and stochasticity of every row.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        if n == 0 {
            return invalid("model needs at least one state");
        }
        if self.n_actions == 0 {
            return invalid("model needs at least one action");
        }
        if self.obs_dims.iter().any(|&m| m == 0) {
            return invalid("observation dimension with zero symbols");
        }
        check_row(&self.b0, n, "b0")?;
        if self.transition.len() != self.n_actions {
            return invalid(format!(
                "transition has {} action slices, expected {}",
                self.transition.len(),
                self.n_actions
            ));
        }
        for (a, slice) in self.transition.iter().enumerate() {
            if slice.len() != n {
                return invalid(format!("transition[{a}] has {} rows, expected {n}", slice.len()));
            }
            for (i, row) in slice.iter().enumerate() {
                check_row(row, n, &format!("transition[{a}][{i}]"))?;
            }
        }
        if self.emission.len() != self.obs_dims.len() {
            return invalid(format!(
                "emission has {} dimensions, obs_dims has {}",
                self.emission.len(),
                self.obs_dims.len()
            ));
        }
        for (g, dim) in self.emission.iter().enumerate() {
            if dim.len() != self.n_actions {
                return invalid(format!("emission[{g}] has {} action slices", dim.len()));
            }
            for (a, slice) in dim.iter().enumerate() {
                if slice.len() != n {
                    return invalid(format!("emission[{g}][{a}] has {} rows", slice.len()));
                }
                for (s, row) in slice.iter().enumerate() {
                    check_row(row, self.obs_dims[g], &format!("emission[{g}][{a}][{s}]"))?;
                }
            }
        }
        Ok(())
    }

    /// Checks that an observation vector fits `obs_dims`.
    pub fn check_obs(&self, obs: &[usize]) -> Result<()> {
        if obs.len() != self.obs_dims.len() {
            return invalid(format!(
                "observation has {} dims, model expects {}",
                obs.len(),
                self.obs_dims.len()
            ));
        }
        for (g, (&o, &m)) in obs.iter().zip(&self.obs_dims).enumerate() {
            if o >= m {
                return invalid(format!("observation dim {g}: symbol {o} out of range 0..{m}"));
            }
        }
        Ok(())
    }

    pub fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.n_actions {
            return invalid(format!("action {action} out of range 0..{}", self.n_actions));
        }
        Ok(())
    }

    /// `P(o | s, a) = prod_g O[g][a][s][o[g]]`. Inputs are assumed valid.
    #[inline]
    pub fn obs_likelihood(&self, state: usize, action: usize, obs: &[usize]) -> f64 {
        self.emission
            .iter()
            .zip(obs)
            .map(|(dim, &o)| dim[action][state][o])
            .product()
    }

    /// Per-state observation likelihood vector for `(action, obs)`.
    pub fn obs_likelihood_vec(&self, action: usize, obs: &[usize]) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| self.obs_likelihood(s, action, obs))
            .collect()
    }

    /// Same shapes (states, actions, observation cardinalities).
    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.obs_dims == other.obs_dims
    }

    /// Relabels hidden states: new state `k` is old state `perm[k]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return invalid("state permutation must be a bijection over 0..n_states");
        }
        let b0 = perm.iter().map(|&p| self.b0[p]).collect();
        let transition = self
            .transition
            .iter()
            .map(|slice| {
                perm.iter()
                    .map(|&i| perm.iter().map(|&j| slice[i][j]).collect())
                    .collect()
            })
            .collect();
        let emission = self
            .emission
            .iter()
            .map(|dim| {
                dim.iter()
                    .map(|slice| perm.iter().map(|&s| slice[s].clone()).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states: n,
            n_actions: self.n_actions,
            obs_dims: self.obs_dims.clone(),
            b0,
            transition,
            emission,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_params_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            ModelParams::random(&mut rng, 3, 2, vec![4, 2]).validate().unwrap();
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let mut p = ModelParams::uniform(2, 1, vec![2]);
        p.transition[0][1] = vec![0.5, 0.6];
        assert!(p.validate().is_err());
        let mut p = ModelParams::uniform(2, 1, vec![2]);
        p.b0 = vec![1.5, -0.5];
        assert!(p.validate().is_err());
        let mut p = ModelParams::uniform(2, 1, vec![2]);
        p.emission[0][0].pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn obs_checks() {
        let p = ModelParams::uniform(2, 2, vec![3, 2]);
        assert!(p.check_obs(&[2, 1]).is_ok());
        assert!(p.check_obs(&[3, 0]).is_err());
        assert!(p.check_obs(&[0]).is_err());
        assert!(p.check_action(2).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_lossless(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::random(&mut rng, 3, 2, vec![4, 3]);
            let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
            prop_assert_eq!(p, back);
        }
    }
}
