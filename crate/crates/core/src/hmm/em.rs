//! Baum-Welch style EM for the action-conditioned HMM, pooled over many
//! trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{posteriors, ModelParams, Trajectory};
use crate::error::{invalid, Result};

/// Rows whose expected visit count falls below this keep their previous value.
pub const UNVISITED_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Maximum number of M-steps.
    pub max_iters: usize,
    /// Stop once the per-observation log-likelihood improves by less than this.
    pub tol: f64,
    /// Additive pseudocount on every M-step numerator (0 = plain maximum likelihood).
    pub pseudocount: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            pseudocount: 0.0,
        }
    }
}

/// A parameter row that was not re-estimated because it had no expected visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnvisitedRow {
    Transition { iteration: usize, action: usize, state: usize },
    Emission { iteration: usize, dim: usize, action: usize, state: usize },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub unvisited_rows: Vec<UnvisitedRow>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: ModelParams,
    /// Total data log-likelihood of each iterate; the last entry belongs to `params`.
    pub history: Vec<f64>,
    pub diagnostics: EmDiagnostics,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

/// Total log-likelihood of a dataset.
pub fn log_likelihood(params: &ModelParams, trajs: &[Trajectory]) -> Result<f64> {
    trajs
        .iter()
        .map(|t| super::forward(params, t).map(|f| f.log_likelihood))
        .sum()
}

pub fn total_steps(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(Trajectory::len).sum()
}

struct SufficientStats {
    b0: Vec<f64>,
    /// [a][i][j]
    trans: Vec<Vec<Vec<f64>>>,
    /// [g][a][s][m]
    emit: Vec<Vec<Vec<Vec<f64>>>>,
    /// expected occupancy conditioned on action, [a][s]
    emit_visits: Vec<Vec<f64>>,
    log_likelihood: f64,
}

fn accumulate(params: &ModelParams, trajs: &[Trajectory]) -> Result<SufficientStats> {
    let (n, na) = (params.n_states, params.n_actions);
    let mut st = SufficientStats {
        b0: vec![0.0; n],
        trans: vec![vec![vec![0.0; n]; n]; na],
        emit: params
            .obs_dims
            .iter()
            .map(|&m| vec![vec![vec![0.0; m]; n]; na])
            .collect(),
        emit_visits: vec![vec![0.0; n]; na],
        log_likelihood: 0.0,
    };
    for traj in trajs {
        let post = posteriors(params, traj)?;
        st.log_likelihood += post.log_likelihood;
        for (acc, p) in st.b0.iter_mut().zip(&post.gamma_single[0]) {
            *acc += p;
        }
        for (t, pair) in post.gamma_pair.iter().enumerate() {
            let a = traj.steps[t + 1].action;
            for (acc_row, row) in st.trans[a].iter_mut().zip(pair) {
                for (acc, p) in acc_row.iter_mut().zip(row) {
                    *acc += p;
                }
            }
        }
        for (step, gamma) in traj.steps.iter().zip(&post.gamma_single) {
            let a = step.action;
            for (s, &g) in gamma.iter().enumerate() {
                st.emit_visits[a][s] += g;
                for (dim, &o) in st.emit.iter_mut().zip(&step.obs) {
                    dim[a][s][o] += g;
                }
            }
        }
    }
    Ok(st)
}

fn normalized_row(counts: &[f64], pseudocount: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + pseudocount * counts.len() as f64;
    counts.iter().map(|c| (c + pseudocount) / total).collect()
}

/// One E+M iteration. Returns the re-estimated parameters and the
/// log-likelihood of `params` (the input iterate).
pub fn em_step(
    params: &ModelParams,
    trajs: &[Trajectory],
    pseudocount: f64,
    iteration: usize,
    unvisited: &mut Vec<UnvisitedRow>,
) -> Result<(ModelParams, f64)> {
    let st = accumulate(params, trajs)?;
    let mut next = params.clone();

    next.b0 = normalized_row(&st.b0, pseudocount);
    for a in 0..params.n_actions {
        for i in 0..params.n_states {
            let counts = &st.trans[a][i];
            if counts.iter().sum::<f64>() < UNVISITED_THRESHOLD {
                unvisited.push(UnvisitedRow::Transition { iteration, action: a, state: i });
            } else {
                next.transition[a][i] = normalized_row(counts, pseudocount);
            }
        }
        for s in 0..params.n_states {
            let visits = st.emit_visits[a][s];
            for (g, dim) in st.emit.iter().enumerate() {
                if visits < UNVISITED_THRESHOLD {
                    unvisited.push(UnvisitedRow::Emission { iteration, dim: g, action: a, state: s });
                } else {
                    next.emission[g][a][s] = normalized_row(&dim[a][s], pseudocount);
                }
            }
        }
    }
    Ok((next, st.log_likelihood))
}

/// Fits parameters by EM starting from `init`.
pub fn em_fit(trajs: &[Trajectory], init: &ModelParams, cfg: &EmConfig) -> Result<EmFit> {
    em_fit_observed(trajs, init, cfg, |_, _, _| {})
}

/// [`em_fit`] that also hands every iterate to `observe(k, params, ll)`,
/// where `ll` is `history[k]`.
pub fn em_fit_observed<F>(trajs: &[Trajectory], init: &ModelParams, cfg: &EmConfig, mut observe: F) -> Result<EmFit>
where
    F: FnMut(usize, &ModelParams, f64),
{
    if trajs.is_empty() {
        return invalid("em_fit needs at least one trajectory");
    }
    if cfg.max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    if !(cfg.pseudocount >= 0.0) {
        return invalid("pseudocount must be non-negative");
    }
    init.validate()?;
    for (k, t) in trajs.iter().enumerate() {
        t.validate(init)
            .map_err(|e| crate::Error::InvalidInput(format!("trajectory {k}: {e}")))?;
    }
    let steps = total_steps(trajs) as f64;

    let mut params = init.clone();
    let mut history = Vec::new();
    let mut diagnostics = EmDiagnostics::default();
    for iteration in 0..cfg.max_iters {
        let (next, ll) = em_step(&params, trajs, cfg.pseudocount, iteration, &mut diagnostics.unvisited_rows)?;
        observe(iteration, &params, ll);
        if let Some(&prev) = history.last() {
            if (ll - prev) / steps < cfg.tol {
                history.push(ll);
                diagnostics.converged = true;
                return Ok(EmFit {
                    params,
                    history,
                    diagnostics,
                });
            }
        }
        history.push(ll);
        params = next;
        diagnostics.iterations = iteration + 1;
    }
    let ll = log_likelihood(&params, trajs)?;
    observe(cfg.max_iters, &params, ll);
    history.push(ll);
    Ok(EmFit {
        params,
        history,
        diagnostics,
    })
}

/// Random initialization used by restart `k` of [`fit_with_restarts`].
pub fn restart_init(seed: u64, k: usize, n_states: usize, n_actions: usize, obs_dims: &[usize]) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
    ModelParams::random(&mut rng, n_states, n_actions, obs_dims.to_vec())
}

/// Runs EM from `restarts` random initializations and returns every fit,
/// best (highest final log-likelihood) first. Restart `k` draws its
/// initialization from a ChaCha stream seeded with `seed + k`.
pub fn fit_with_restarts(
    trajs: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    obs_dims: &[usize],
    restarts: usize,
    seed: u64,
    cfg: &EmConfig,
) -> Result<Vec<EmFit>> {
    if restarts == 0 {
        return invalid("need at least one EM restart");
    }
    let mut fits = (0..restarts)
        .map(|k| em_fit(trajs, &restart_init(seed, k, n_states, n_actions, obs_dims), cfg))
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps the lowest restart index first on ties
    fits.sort_by(|a, b| b.final_log_likelihood().total_cmp(&a.final_log_likelihood()));
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::sample::sample_trajectory;
    use crate::hmm::testing::{random_dataset, two_state_example};
    use proptest::prelude::*;

    fn one_hot_model() -> ModelParams {
        // Two actions, three states. Action 0 advances the chain, action 1
        // holds it; each state emits its own symbol in dim 0, dim 1 is the
        // previous action.
        let mut p = ModelParams::uniform(3, 2, vec![3, 2]);
        p.b0 = vec![1.0, 0.0, 0.0];
        p.transition[0] = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        p.transition[1] = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        for a in 0..2 {
            p.emission[0][a] = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
            let mut one_hot = vec![0.0; 2];
            one_hot[a] = 1.0;
            p.emission[1][a] = vec![one_hot; 3];
        }
        p.validate().unwrap();
        p
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (params, _) = two_state_example();
        assert!(em_fit(&[], &params, &EmConfig::default()).is_err());
        let (_, traj) = two_state_example();
        let cfg = EmConfig { max_iters: 0, ..EmConfig::default() };
        assert!(em_fit(&[traj], &params, &cfg).is_err());
    }

    #[test]
    fn deterministic_truth_is_a_fixed_point() {
        let truth = one_hot_model();
        let trajs: Vec<_> = (0..40)
            .map(|k| sample_trajectory(&truth, |t, _| (t + k) % 2, 7, k as u64).unwrap())
            .collect();
        // start close to the truth
        let mut init = truth.clone();
        for slice in init.transition.iter_mut() {
            for row in slice.iter_mut() {
                for p in row.iter_mut() {
                    *p = 0.98 * *p + 0.02 / 3.0;
                }
            }
        }
        let fit = em_fit(&trajs, &init, &EmConfig { max_iters: 500, tol: 1e-14, pseudocount: 0.0 }).unwrap();
        for (a, slice) in fit.params.transition.iter().enumerate() {
            for (i, row) in slice.iter().enumerate() {
                for (j, p) in row.iter().enumerate() {
                    assert!((p - truth.transition[a][i][j]).abs() < 1e-6, "T[{a}][{i}][{j}] = {p}");
                }
            }
        }
        for (g, dim) in fit.params.emission.iter().enumerate() {
            for (a, slice) in dim.iter().enumerate() {
                for (s, row) in slice.iter().enumerate() {
                    for (m, p) in row.iter().enumerate() {
                        assert!((p - truth.emission[g][a][s][m]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn unvisited_rows_keep_previous_value() {
        let (params, traj) = two_state_example();
        // Only action 0 ever appears; params with a second action slice.
        let mut p = ModelParams::uniform(2, 2, vec![2]);
        p.b0 = params.b0.clone();
        p.transition[0] = params.transition[0].clone();
        p.emission[0][0] = params.emission[0][0].clone();
        p.transition[1] = vec![vec![0.25, 0.75], vec![0.6, 0.4]];
        let fit = em_fit(&[traj], &p, &EmConfig { max_iters: 3, tol: 0.0, pseudocount: 0.0 }).unwrap();
        assert_eq!(fit.params.transition[1], p.transition[1]);
        assert!(fit
            .diagnostics
            .unvisited_rows
            .contains(&UnvisitedRow::Transition { iteration: 0, action: 1, state: 0 }));
        fit.params.validate().unwrap();
    }

    #[test]
    fn pseudocount_removes_zeros() {
        let trajs = random_dataset(11, 3, 2, 3, 10, 20);
        let init = ModelParams::uniform(2, 2, vec![3]);
        let fit = em_fit(&trajs, &init, &EmConfig { max_iters: 5, tol: 0.0, pseudocount: 0.5 }).unwrap();
        assert!(fit.params.emission.iter().flatten().flatten().flatten().all(|&p| p > 0.0));
        fit.params.validate().unwrap();
    }

    #[test]
    fn restarts_are_sorted_and_reproducible() {
        let trajs = random_dataset(5, 2, 2, 3, 8, 30);
        let cfg = EmConfig { max_iters: 20, ..EmConfig::default() };
        let a = fit_with_restarts(&trajs, 2, 2, &[3], 3, 99, &cfg).unwrap();
        let b = fit_with_restarts(&trajs, 2, 2, &[3], 3, 99, &cfg).unwrap();
        assert_eq!(a[0].params, b[0].params);
        assert!(a.windows(2).all(|w| w[0].final_log_likelihood() >= w[1].final_log_likelihood()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn em_is_monotone_and_stochastic(seed in any::<u64>()) {
            let trajs = random_dataset(seed, 3, 2, 3, 6, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            let init = ModelParams::random(&mut rng, 3, 2, vec![3]);
            let fit = em_fit(&trajs, &init, &EmConfig { max_iters: 30, tol: 0.0, pseudocount: 0.0 }).unwrap();
            for w in fit.history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
            fit.params.validate().unwrap();
        }
    }
}
