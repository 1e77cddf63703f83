//! Bayes filter over hidden intent states and the EMA blend of estimator
//! parameters.
//!
//! One filter step slices the transition tensor along the previous action,
//! propagates the belief through it, multiplies element-wise by the
//! per-state observation likelihood (a product over observation dims) and
//! renormalizes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hmm::{ModelParams, Trajectory, PROB_TOL};

/// Probability distribution over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("belief entries must be finite and non-negative");
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > PROB_TOL {
            return invalid(format!("belief sums to {s}, not 1"));
        }
        Ok(Self(probs))
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return invalid("cannot normalize a vector without positive finite mass");
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    /// The learned initial distribution `b0`.
    pub fn initial(params: &ModelParams) -> Self {
        Self(params.b0.clone())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(b, x)| b * x).sum()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Belief {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_inputs(params: &ModelParams, prior: &Belief, action: usize, obs: &[usize]) -> Result<()> {
    if prior.len() != params.n_states {
        return invalid(format!(
            "belief over {} states, model has {}",
            prior.len(),
            params.n_states
        ));
    }
    params.check_action(action)?;
    params.check_obs(obs)
}

fn correct_unchecked(
    params: &ModelParams,
    predicted: Vec<f64>,
    action: usize,
    obs: &[usize],
    step: usize,
) -> Result<Belief> {
    let mut weights = predicted;
    for (s, w) in weights.iter_mut().enumerate() {
        *w *= params.obs_likelihood(s, action, obs);
    }
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateBelief {
            step,
            unnormalized: weights,
        });
    }
    weights.iter_mut().for_each(|w| *w /= mass);
    Ok(Belief(weights))
}

/// Measurement update without a transition: `b'(s) ∝ O(o | s, a) prior(s)`.
/// Used for the first observation, whose prior is `b0`.
pub fn belief_correct(params: &ModelParams, prior: &Belief, action: usize, obs: &[usize]) -> Result<Belief> {
    check_inputs(params, prior, action, obs)?;
    correct_unchecked(params, prior.0.clone(), action, obs, 0)
}

/// `b'(s') ∝ O(o | s', a) * sum_s T(s, s', a) prev(s)`.
pub fn belief_update(params: &ModelParams, prev: &Belief, prev_action: usize, obs: &[usize]) -> Result<Belief> {
    check_inputs(params, prev, prev_action, obs)?;
    correct_unchecked(params, predict(params, prev, prev_action), prev_action, obs, 0)
}

/// Transition-only prediction `sum_s T(s, ., a) b(s)`.
pub fn predict(params: &ModelParams, b: &Belief, action: usize) -> Vec<f64> {
    let n = params.n_states;
    let tr = &params.transition[action];
    (0..n)
        .map(|j| (0..n).map(|i| b.0[i] * tr[i][j]).sum())
        .collect()
}

/// Beliefs after every step. `b_init` is the prior over the first hidden
/// state, so the first belief is a pure measurement update and later ones
/// are full filter steps. With `b_init = b0` this reproduces the normalized
/// forward messages.
pub fn filter_trajectory(params: &ModelParams, traj: &Trajectory, b_init: &Belief) -> Result<Vec<Belief>> {
    traj.validate(params)?;
    if b_init.len() != params.n_states {
        return invalid("initial belief has the wrong number of states");
    }
    let mut out: Vec<Belief> = Vec::with_capacity(traj.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let predicted = match out.last() {
            None => b_init.0.clone(),
            Some(prev) => predict(params, prev, step.action),
        };
        out.push(correct_unchecked(params, predicted, step.action, &step.obs, t)?);
    }
    Ok(out)
}

fn blend_row(old: &[f64], new: &[f64], rate: f64) -> Vec<f64> {
    let mut row: Vec<f64> = old
        .iter()
        .zip(new)
        .map(|(o, n)| (1.0 - rate) * o + rate * n)
        .collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= s);
    row
}

/// Element-wise `(1 - rate) * old + rate * new`, renormalized per row.
pub fn ema_blend(old: &ModelParams, new: &ModelParams, rate: f64) -> Result<ModelParams> {
    if !old.same_shape(new) {
        return invalid("ema_blend: models have different dimensions");
    }
    if !(0.0..=1.0).contains(&rate) {
        return invalid(format!("ema_blend: rate {rate} outside [0, 1]"));
    }
    if rate == 0.0 {
        return Ok(old.clone());
    }
    if rate == 1.0 {
        return Ok(new.clone());
    }
    let transition = old
        .transition
        .iter()
        .zip(&new.transition)
        .map(|(so, sn)| so.iter().zip(sn).map(|(o, n)| blend_row(o, n, rate)).collect())
        .collect();
    let emission = old
        .emission
        .iter()
        .zip(&new.emission)
        .map(|(go, gn)| {
            go.iter()
                .zip(gn)
                .map(|(so, sn)| so.iter().zip(sn).map(|(o, n)| blend_row(o, n, rate)).collect())
                .collect()
        })
        .collect();
    ModelParams::new(
        old.obs_dims.clone(),
        blend_row(&old.b0, &new.b0, rate),
        transition,
        emission,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::forward;
    use crate::hmm::testing::{random_instance, two_state_example};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_transition_and_flat_emission_is_a_no_op() {
        let mut params = ModelParams::uniform(3, 1, vec![4]);
        params.transition[0] = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let prev = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        let next = belief_update(&params, &prev, 0, &[2]).unwrap();
        for (a, b) in next.probs().iter().zip(prev.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_hand_computation() {
        let (params, traj) = two_state_example();
        let b1 = belief_correct(&params, &Belief::initial(&params), 0, &[1]).unwrap();
        assert!((b1.probs()[0] - 0.870_967_741_935_483_9).abs() < 1e-12);
        let b2 = belief_update(&params, &b1, 0, &[0]).unwrap();
        // (0.0394, 0.1808) / 0.2202
        assert!((b2.probs()[0] - 0.0394 / 0.2202).abs() < 1e-12);
        assert!((b2.probs()[1] - 0.1808 / 0.2202).abs() < 1e-12);
        assert!((b2.probs()[0] - 0.17893).abs() < 5e-6);
        let all = filter_trajectory(&params, &traj, &Belief::initial(&params)).unwrap();
        assert_eq!(all[1], b2);
    }

    #[test]
    fn table_prior_stays_normalized() {
        let prior = Belief::new(vec![0.24, 0.03, 0.73]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::random(&mut rng, 3, 3, vec![7, 6, 12, 4, 2]);
        let next = belief_update(&params, &prior, 2, &[6, 5, 11, 3, 1]).unwrap();
        assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_observation_reports_step() {
        let mut params = ModelParams::uniform(2, 1, vec![2]);
        params.emission[0][0] = vec![vec![1.0, 0.0], vec![0.7, 0.3]];
        params.transition[0] = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let traj = Trajectory::from_pairs([(0, vec![0]), (0, vec![0]), (0, vec![1])]);
        match filter_trajectory(&params, &traj, &Belief::initial(&params)) {
            Err(Error::DegenerateBelief { step, unnormalized }) => {
                assert_eq!(step, 2);
                assert_eq!(unnormalized, vec![0.0, 0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_likelihood_state_gets_zero_posterior() {
        let mut params = ModelParams::uniform(3, 1, vec![2]);
        params.emission[0][0][1] = vec![1.0, 0.0];
        let b = belief_update(&params, &Belief::uniform(3), 0, &[1]).unwrap();
        assert_eq!(b.probs()[1], 0.0);
    }

    #[test]
    fn ema_endpoints_and_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let old = ModelParams::random(&mut rng, 3, 2, vec![3, 2]);
        let new = ModelParams::random(&mut rng, 3, 2, vec![3, 2]);
        assert_eq!(ema_blend(&old, &new, 0.0).unwrap(), old);
        assert_eq!(ema_blend(&old, &new, 1.0).unwrap(), new);
        let mid = ema_blend(&old, &new, 0.01).unwrap();
        mid.validate().unwrap();
        assert!((mid.b0[0] - (0.99 * old.b0[0] + 0.01 * new.b0[0])).abs() < 1e-12);
        let other = ModelParams::random(&mut rng, 2, 2, vec![3, 2]);
        assert!(ema_blend(&old, &other, 0.5).is_err());
        assert!(ema_blend(&old, &new, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn filtering_equals_normalized_forward(seed in any::<u64>()) {
            let (params, traj) = random_instance(seed, 5, 3, 4, 15);
            let beliefs = filter_trajectory(&params, &traj, &Belief::initial(&params)).unwrap();
            let fwd = forward(&params, &traj).unwrap();
            for (b, a) in beliefs.iter().zip(&fwd.alpha) {
                prop_assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (x, y) in b.probs().iter().zip(a) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn filtering_is_label_equivariant(seed in any::<u64>()) {
            let (params, traj) = random_instance(seed, 4, 2, 4, 10);
            let n = params.n_states;
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted = params.permute_states(&perm).unwrap();
            let b = filter_trajectory(&params, &traj, &Belief::initial(&params)).unwrap();
            let bp = filter_trajectory(&permuted, &traj, &Belief::initial(&permuted)).unwrap();
            for (x, y) in b.iter().zip(&bp) {
                for k in 0..n {
                    prop_assert!((y.probs()[k] - x.probs()[perm[k]]).abs() < 1e-12);
                }
            }
        }
    }
}
