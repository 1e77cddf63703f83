use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, Step, Trajectory};
use crate::error::{invalid, Result};

/// Draws an index from a discrete distribution.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative sum: take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// A sampled trajectory together with its hidden state path.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub trajectory: Trajectory,
    pub states: Vec<usize>,
}

/// Samples a trajectory of `length` steps. `policy(t, prev_obs)` chooses the
/// action stored on step `t` (the action preceding `o_t`); `prev_obs` is
/// `None` for the first step.
pub fn sample_with_states<F>(
    params: &ModelParams,
    mut policy: F,
    length: usize,
    seed: u64,
) -> Result<SampledTrajectory>
where
    F: FnMut(usize, Option<&[usize]>) -> usize,
{
    if length == 0 {
        return invalid("trajectory length must be at least 1");
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps: Vec<Step> = Vec::with_capacity(length);
    let mut states: Vec<usize> = Vec::with_capacity(length);
    for t in 0..length {
        let action = policy(t, steps.last().map(|s| s.obs.as_slice()));
        params.check_action(action)?;
        let state = match states.last() {
            None => sample_categorical(&mut rng, params.b0.as_slice()),
            Some(&prev) => sample_categorical(&mut rng, params.transition[action][prev].as_slice()),
        };
        let obs = params
            .emission
            .iter()
            .map(|dim| sample_categorical(&mut rng, &dim[action][state]))
            .collect();
        states.push(state);
        steps.push(Step::new(action, obs));
    }
    Ok(SampledTrajectory {
        trajectory: Trajectory::new("", "", steps),
        states,
    })
}

/// [`sample_with_states`] without the hidden path.
pub fn sample_trajectory<F>(params: &ModelParams, policy: F, length: usize, seed: u64) -> Result<Trajectory>
where
    F: FnMut(usize, Option<&[usize]>) -> usize,
{
    sample_with_states(params, policy, length, seed).map(|s| s.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testing::two_state_example;

    #[test]
    fn same_seed_same_trajectory() {
        let (params, _) = two_state_example();
        let a = sample_trajectory(&params, |_, _| 0, 25, 42).unwrap();
        let b = sample_trajectory(&params, |_, _| 0, 25, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectory(&params, |_, _| 0, 25, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_hot_model_emits_the_chain() {
        let mut params = ModelParams::uniform(3, 1, vec![3]);
        params.b0 = vec![0.0, 1.0, 0.0];
        params.transition[0] = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        params.emission[0][0] = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let s = sample_with_states(&params, |_, _| 0, 7, 3).unwrap();
        let symbols: Vec<usize> = s.trajectory.steps.iter().map(|st| st.obs[0]).collect();
        assert_eq!(symbols, vec![1, 2, 0, 1, 2, 0, 1]);
        assert_eq!(s.states, symbols);
    }

    #[test]
    fn zero_length_is_rejected() {
        let (params, _) = two_state_example();
        assert!(sample_trajectory(&params, |_, _| 0, 0, 1).is_err());
    }

    #[test]
    fn emission_frequencies_within_three_sigma() {
        // Single state: every symbol comes from the same O row.
        let mut params = ModelParams::uniform(1, 1, vec![4]);
        let row = [0.1, 0.2, 0.3, 0.4];
        params.emission[0][0][0] = row.to_vec();
        let n = 100_000;
        let traj = sample_trajectory(&params, |_, _| 0, n, 2024).unwrap();
        let mut counts = [0usize; 4];
        for s in &traj.steps {
            counts[s.obs[0]] += 1;
        }
        for (c, p) in counts.iter().zip(row) {
            let mean = n as f64 * p;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - mean).abs() < 3.0 * sd, "count {c} vs {mean} +- {sd}");
        }
    }
}
