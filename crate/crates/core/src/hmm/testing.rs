//! Fixtures shared by unit and integration tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_trajectory, ModelParams, Trajectory};

/// Two states, one action, binary symbols:
/// `b0 = (0.6, 0.4)`, `T = [[0.7, 0.3], [0.2, 0.8]]`,
/// `O(1|s0) = 0.9`, `O(1|s1) = 0.2`, observations `(1, 0)`.
/// Likelihood by hand enumeration over the four paths is 0.2202.
pub fn two_state_example() -> (ModelParams, Trajectory) {
    let params = ModelParams::new(
        vec![2],
        vec![0.6, 0.4],
        vec![vec![vec![0.7, 0.3], vec![0.2, 0.8]]],
        vec![vec![vec![vec![0.1, 0.9], vec![0.8, 0.2]]]],
    )
    .expect("valid example");
    let traj = Trajectory::from_pairs([(0, vec![1]), (0, vec![0])]);
    (params, traj)
}

/// Random model with `1..=max_states` states, `1..=max_dims` observation
/// dims of `2..=max_symbols` symbols, two actions, and a random-action
/// trajectory of length `1..=max_len`.
pub fn random_instance(
    seed: u64,
    max_states: usize,
    max_dims: usize,
    max_symbols: usize,
    max_len: usize,
) -> (ModelParams, Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_states);
    let g = rng.random_range(1..=max_dims);
    let dims: Vec<usize> = (0..g).map(|_| rng.random_range(2..=max_symbols)).collect();
    let len = rng.random_range(1..=max_len);
    let params = ModelParams::random(&mut rng, n, 2, dims);
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let traj = sample_trajectory(&params, |_, _| action_rng.random_range(0..2), len, seed ^ 0x5eed)
        .expect("valid sample");
    (params, traj)
}

/// `count` trajectories of length `len` from a random model with a single
/// observation dimension of `n_symbols` symbols and uniformly random actions.
pub fn random_dataset(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    n_symbols: usize,
    len: usize,
    count: usize,
) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::random(&mut rng, n_states, n_actions, vec![n_symbols]);
    (0..count)
        .map(|k| {
            let mut arng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + k as u64));
            sample_trajectory(&params, |_, _| arng.random_range(0..n_actions), len, seed.wrapping_add(k as u64))
                .expect("valid sample")
        })
        .collect()
}
