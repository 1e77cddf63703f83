//! Action-conditioned discrete HMM: parameters, trajectories, scaled
//! forward/backward inference, EM fitting and sampling.

mod em;
mod inference;
mod params;
mod sample;
#[doc(hidden)]
pub mod testing;
mod trajectory;

pub use em::{
    em_fit, em_fit_observed, em_step, fit_with_restarts, log_likelihood, restart_init, total_steps, EmConfig,
    EmDiagnostics, EmFit,
    UnvisitedRow, UNVISITED_THRESHOLD,
};
pub use inference::{
    backward, brute_force_likelihood, forward, posteriors, ForwardPass, PosteriorBundle,
    BRUTE_FORCE_LIMIT,
};
pub use params::{ModelParams, PROB_TOL};
pub use sample::{sample_categorical, sample_trajectory, sample_with_states, SampledTrajectory};
pub use trajectory::{read_jsonl, write_jsonl, Step, Trajectory};
