//! Scaled forward/backward recursions for the action-conditioned HMM.
//!
//! Alignment: step `t` of a trajectory carries `(a_{t-1}, o_t)`. The first
//! message is `alpha_0(s) = b0(s) O(o_0 | s, a_{-1})` and every later step
//! applies `T[a]` then `O(. | ., a)` with the action stored on that step.
//!
//! Each forward message is normalized to sum to one and the normalizer
//! `c_t` is kept, so the unscaled message is `alpha[t] * prod_{u<=t} c_u`
//! and `log P(O | A) = sum_t ln c_t`. The backward pass divides by the
//! same `c_{t+1}`, which makes `alpha[t][i] * beta[t][i]` the smoothed
//! posterior directly.

use super::{ModelParams, Trajectory};
use crate::error::{invalid, Error, Result};

/// Output of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Normalized forward messages, `L x N`.
    pub alpha: Vec<Vec<f64>>,
    /// Per-step normalizers `c_t`.
    pub scale: Vec<f64>,
    pub log_likelihood: f64,
}

/// Posterior quantities of one trajectory.
#[derive(Debug, Clone)]
pub struct PosteriorBundle {
    pub log_likelihood: f64,
    /// `gamma_single[t][i] = P(s_t = i | O, A)`, `L x N`.
    pub gamma_single: Vec<Vec<f64>>,
    /// `gamma_pair[t][i][j] = P(s_t = i, s_{t+1} = j | O, A)`, `(L-1) x N x N`.
    /// The conditioning action of pair `t` is `steps[t + 1].action`.
    pub gamma_pair: Vec<Vec<Vec<f64>>>,
}

pub fn forward(params: &ModelParams, traj: &Trajectory) -> Result<ForwardPass> {
    traj.validate(params)?;
    let n = params.n_states;
    let mut alpha = Vec::with_capacity(traj.len());
    let mut scale = Vec::with_capacity(traj.len());
    let mut log_likelihood = 0.0;

    for (t, step) in traj.steps.iter().enumerate() {
        let a = step.action;
        let mut msg: Vec<f64> = if t == 0 {
            params.b0.clone()
        } else {
            let prev: &Vec<f64> = &alpha[t - 1];
            let tr = &params.transition[a];
            (0..n)
                .map(|j| (0..n).map(|i| prev[i] * tr[i][j]).sum())
                .collect()
        };
        for (s, m) in msg.iter_mut().enumerate() {
            *m *= params.obs_likelihood(s, a, &step.obs);
        }
        let c: f64 = msg.iter().sum();
        if !(c > 0.0) {
            return Err(Error::DegenerateLikelihood { step: t });
        }
        msg.iter_mut().for_each(|m| *m /= c);
        log_likelihood += c.ln();
        alpha.push(msg);
        scale.push(c);
    }
    Ok(ForwardPass {
        alpha,
        scale,
        log_likelihood,
    })
}

/// Backward messages scaled by the forward normalizers.
pub fn backward(params: &ModelParams, traj: &Trajectory, scale: &[f64]) -> Result<Vec<Vec<f64>>> {
    traj.validate(params)?;
    if scale.len() != traj.len() {
        return invalid(format!(
            "scale factors have length {}, trajectory has {} steps",
            scale.len(),
            traj.len()
        ));
    }
    let n = params.n_states;
    let len = traj.len();
    let mut beta = vec![vec![1.0; n]; len];
    for t in (0..len - 1).rev() {
        let next = &traj.steps[t + 1];
        let a = next.action;
        let tr = &params.transition[a];
        let weighted: Vec<f64> = (0..n)
            .map(|j| params.obs_likelihood(j, a, &next.obs) * beta[t + 1][j])
            .collect();
        for i in 0..n {
            beta[t][i] = (0..n).map(|j| tr[i][j] * weighted[j]).sum::<f64>() / scale[t + 1];
        }
    }
    Ok(beta)
}

/// Single-step and pairwise smoothed posteriors.
pub fn posteriors(params: &ModelParams, traj: &Trajectory) -> Result<PosteriorBundle> {
    let fwd = forward(params, traj)?;
    let beta = backward(params, traj, &fwd.scale)?;
    let n = params.n_states;
    let len = traj.len();

    let gamma_single = fwd
        .alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let mut row: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            row
        })
        .collect();

    let mut gamma_pair = Vec::with_capacity(len.saturating_sub(1));
    for t in 0..len.saturating_sub(1) {
        let next = &traj.steps[t + 1];
        let a = next.action;
        let tr = &params.transition[a];
        let weighted: Vec<f64> = (0..n)
            .map(|j| params.obs_likelihood(j, a, &next.obs) * beta[t + 1][j])
            .collect();
        let mut pair: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| fwd.alpha[t][i] * tr[i][j] * weighted[j]).collect())
            .collect();
        let total: f64 = pair.iter().flatten().sum();
        pair.iter_mut().flatten().for_each(|p| *p /= total);
        gamma_pair.push(pair);
    }

    Ok(PosteriorBundle {
        log_likelihood: fwd.log_likelihood,
        gamma_single,
        gamma_pair,
    })
}

/// Upper bound on `N^L` for [`brute_force_likelihood`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Exact likelihood `P(O | A)` by summing the joint over every hidden path.
/// Test oracle; refuses when `N^L` exceeds [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_likelihood(params: &ModelParams, traj: &Trajectory) -> Result<f64> {
    traj.validate(params)?;
    let n = params.n_states;
    let len = traj.len();
    let paths = (n as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "{n}^{len} state paths exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )));
    }

    let mut path = vec![0usize; len];
    let mut total = 0.0;
    for _ in 0..paths {
        let first = &traj.steps[0];
        let mut p = params.b0[path[0]] * params.obs_likelihood(path[0], first.action, &first.obs);
        for t in 1..len {
            let step = &traj.steps[t];
            p *= params.transition[step.action][path[t - 1]][path[t]]
                * params.obs_likelihood(path[t], step.action, &step.obs);
        }
        total += p;
        // odometer increment
        for digit in path.iter_mut() {
            *digit += 1;
            if *digit < n {
                break;
            }
            *digit = 0;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testing::{random_instance, two_state_example};
    use proptest::prelude::*;

    /// Unscaled forward recursion; only safe for short sequences.
    fn unscaled_likelihood(params: &ModelParams, traj: &Trajectory) -> f64 {
        let n = params.n_states;
        let first = &traj.steps[0];
        let mut alpha: Vec<f64> = (0..n)
            .map(|s| params.b0[s] * params.obs_likelihood(s, first.action, &first.obs))
            .collect();
        for step in &traj.steps[1..] {
            alpha = (0..n)
                .map(|j| {
                    (0..n)
                        .map(|i| alpha[i] * params.transition[step.action][i][j])
                        .sum::<f64>()
                        * params.obs_likelihood(j, step.action, &step.obs)
                })
                .collect();
        }
        alpha.iter().sum()
    }

    #[test]
    fn two_state_hand_enumeration() {
        let (params, traj) = two_state_example();
        let fwd = forward(&params, &traj).unwrap();
        assert!((fwd.log_likelihood.exp() - 0.2202).abs() < 1e-12);
        assert!((brute_force_likelihood(&params, &traj).unwrap() - 0.2202).abs() < 1e-12);
        // normalized alpha after the first observation: (0.54, 0.08) / 0.62
        assert!((fwd.alpha[0][0] - 0.54 / 0.62).abs() < 1e-12);
    }

    #[test]
    fn two_state_posteriors_match_enumeration() {
        // Joint P(s1, s2, O) for the four paths, enumerated by hand:
        //   (0,0): 0.54*0.7*0.1 = 0.0378   (0,1): 0.54*0.3*0.8 = 0.1296
        //   (1,0): 0.08*0.2*0.1 = 0.0016   (1,1): 0.08*0.8*0.8 = 0.0512
        let joint = [[0.0378, 0.1296], [0.0016, 0.0512]];
        let total = 0.2202;
        let (params, traj) = two_state_example();
        let post = posteriors(&params, &traj).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((post.gamma_pair[0][i][j] - joint[i][j] / total).abs() < 1e-12);
            }
            let first: f64 = joint[i].iter().sum::<f64>() / total;
            assert!((post.gamma_single[0][i] - first).abs() < 1e-12);
            let second = (joint[0][i] + joint[1][i]) / total;
            assert!((post.gamma_single[1][i] - second).abs() < 1e-12);
        }
    }

    #[test]
    fn single_state_likelihood_is_product_of_emissions() {
        let mut params = ModelParams::uniform(1, 2, vec![3, 2]);
        params.emission[0][0][0] = vec![0.2, 0.3, 0.5];
        params.emission[0][1][0] = vec![0.6, 0.3, 0.1];
        params.emission[1][1][0] = vec![0.9, 0.1];
        let traj = Trajectory::from_pairs([(0, vec![2, 1]), (1, vec![0, 0]), (1, vec![1, 1])]);
        let expected = 0.5f64.ln() + 0.5f64.ln() + 0.6f64.ln() + 0.9f64.ln() + 0.3f64.ln() + 0.1f64.ln();
        let fwd = forward(&params, &traj).unwrap();
        assert!((fwd.log_likelihood - expected).abs() < 1e-12);
        let beta = backward(&params, &traj, &fwd.scale).unwrap();
        assert!(beta.iter().flatten().all(|&b| (b - 1.0).abs() < 1e-15));
    }

    #[test]
    fn uniform_model_likelihood() {
        let params = ModelParams::uniform(3, 2, vec![4]);
        let traj = Trajectory::from_pairs([(0, vec![1]), (1, vec![3]), (0, vec![0])]);
        let l = forward(&params, &traj).unwrap().log_likelihood.exp();
        assert!((l - 0.25f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn length_one_backward_is_all_ones() {
        let (params, _) = two_state_example();
        let traj = Trajectory::from_pairs([(0, vec![1])]);
        let fwd = forward(&params, &traj).unwrap();
        assert_eq!(backward(&params, &traj, &fwd.scale).unwrap(), vec![vec![1.0, 1.0]]);
        let l = brute_force_likelihood(&params, &traj).unwrap();
        assert!((l - (0.6 * 0.9 + 0.4 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_chain_gives_one_hot_posteriors() {
        // 0 -> 1 -> 2 -> 2, state s emits symbol s.
        let mut params = ModelParams::uniform(3, 1, vec![3]);
        params.b0 = vec![1.0, 0.0, 0.0];
        params.transition[0] = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
        params.emission[0][0] = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let traj = Trajectory::from_pairs([(0, vec![0]), (0, vec![1]), (0, vec![2]), (0, vec![2])]);
        let post = posteriors(&params, &traj).unwrap();
        for (t, row) in post.gamma_single.iter().enumerate() {
            let hot = [0, 1, 2, 2][t];
            for (s, &p) in row.iter().enumerate() {
                assert_eq!(p, if s == hot { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(post.log_likelihood, 0.0);
    }

    #[test]
    fn impossible_observation_names_step() {
        let mut params = ModelParams::uniform(2, 1, vec![2]);
        params.emission[0][0] = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let traj = Trajectory::from_pairs([(0, vec![0]), (0, vec![0]), (0, vec![1])]);
        match forward(&params, &traj) {
            Err(Error::DegenerateLikelihood { step }) => assert_eq!(step, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_scale_is_rejected() {
        let (params, traj) = two_state_example();
        assert!(matches!(
            backward(&params, &traj, &[1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn brute_force_guard() {
        let params = ModelParams::uniform(3, 1, vec![2]);
        let traj = Trajectory::from_pairs((0..13).map(|_| (0, vec![0])));
        assert!(matches!(
            brute_force_likelihood(&params, &traj),
            Err(Error::SizeLimit(_))
        ));
    }

    proptest! {
        #[test]
        fn forward_matches_enumeration(seed in any::<u64>()) {
            let (params, traj) = random_instance(seed, 3, 2, 4, 6);
            let fwd = forward(&params, &traj).unwrap();
            let exact = brute_force_likelihood(&params, &traj).unwrap().ln();
            prop_assert!((fwd.log_likelihood - exact).abs() < 1e-10);
            let unscaled = unscaled_likelihood(&params, &traj).ln();
            prop_assert!((fwd.log_likelihood - unscaled).abs() < 1e-10);
        }

        #[test]
        fn pair_posteriors_marginalize(seed in any::<u64>()) {
            let (params, traj) = random_instance(seed, 4, 3, 3, 10);
            let post = posteriors(&params, &traj).unwrap();
            for row in &post.gamma_single {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            for (t, pair) in post.gamma_pair.iter().enumerate() {
                for i in 0..params.n_states {
                    let out: f64 = pair[i].iter().sum();
                    prop_assert!((out - post.gamma_single[t][i]).abs() < 1e-10);
                    let inflow: f64 = pair.iter().map(|r| r[i]).sum();
                    prop_assert!((inflow - post.gamma_single[t + 1][i]).abs() < 1e-10);
                }
            }
        }
    }
}
