use std::path::{Path, PathBuf};

use adpomdp_core::env::{World, BOOST, KEEP, N_ACTIONS, RESTRAIN};
use adpomdp_core::hmm::{read_jsonl, sample_categorical, Trajectory};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{self, stream, stream_rng};

pub const DATA_DIR: &str = "data";
pub const BEHAVIOR_NAMES: [&str; 4] = ["uniform", "keep", "boost", "restrain"];

/// Hidden intent path of one generated trajectory (oracle use only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenPath {
    pub user: String,
    pub split: String,
    pub item: usize,
    pub behavior: String,
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub episodes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub n_actions: usize,
    pub obs_dims: Vec<usize>,
    pub files: Vec<String>,
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join(DATA_DIR)
}

/// Generates trajectories with the behavior-policy mix and writes the
/// train/test split, the hidden paths and a manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    let world = World::new(cfg.env()?).map_err(|e| HarnessError::Config(e.to_string()))?;
    let out = data_dir(&cfg.out_path());
    io::ensure_dir(&out)?;

    let mut env_rng = stream_rng(cfg.seed, stream::DATA_ENV);
    let mut behavior_rng = stream_rng(cfg.seed, stream::DATA_BEHAVIOR);
    let mix_total: f64 = cfg.behavior_mix.iter().sum();
    let mix: Vec<f64> = cfg.behavior_mix.iter().map(|w| w / mix_total).collect();

    let mut episodes = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let env_seed: u64 = env_rng.random();
        let behavior = sample_categorical(&mut behavior_rng, &mix);
        let ep = world.rollout(env_seed, format!("u{i:06}"), |_| match behavior {
            0 => behavior_rng.random_range(0..N_ACTIONS),
            1 => KEEP,
            2 => BOOST,
            _ => RESTRAIN,
        })?;
        episodes.push((ep, behavior));
    }

    let n_test = (cfg.episodes as f64 * cfg.test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cfg.episodes).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stream::SPLIT));
    let mut is_test = vec![false; cfg.episodes];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }

    let split = |test: bool| if test { "test" } else { "train" };
    let pick = |want_test: bool| episodes.iter().zip(&is_test).filter(move |(_, &t)| t == want_test);
    io::write_jsonl(&out.join("train.jsonl"), pick(false).map(|((e, _), _)| &e.trajectory))?;
    io::write_jsonl(&out.join("test.jsonl"), pick(true).map(|((e, _), _)| &e.trajectory))?;
    io::write_jsonl(
        &out.join("hidden_paths.jsonl"),
        episodes.iter().zip(&is_test).map(|((e, b), &t)| HiddenPath {
            user: e.trajectory.user_id.clone(),
            split: split(t).into(),
            item: e.item.id,
            behavior: BEHAVIOR_NAMES[*b].into(),
            states: e.states.clone(),
        }),
    )?;

    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        episodes: cfg.episodes,
        n_train: cfg.episodes - n_test,
        n_test,
        horizon: world.horizon(),
        n_actions: N_ACTIONS,
        obs_dims: world.obs_dims(),
        files: ["train.jsonl", "test.jsonl", "hidden_paths.jsonl"].map(String::from).to_vec(),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads the train and test splits written by [`cmd_gen_data`].
pub fn load_dataset(out: &Path) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let dir = data_dir(out);
    let read = |name: &str| -> Result<Vec<Trajectory>> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(HarnessError::Missing(format!("{} (run gen-data first)", p.display())));
        }
        Ok(read_jsonl(&p)?)
    };
    Ok((read("train.jsonl")?, read("test.jsonl")?))
}

pub fn load_manifest(out: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&io::read_to_string(&data_dir(out).join("manifest.json"))?)?)
}
