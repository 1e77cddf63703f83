use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{invalid, Result};

/// One observation step. `action` is the action taken *before* `obs` was
/// seen (a_{t-1} for o_t); `reward`, `click` and `purchase` are the feedback
/// produced by executing that action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "o")]
    pub obs: Vec<usize>,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "x")]
    pub click: u8,
    #[serde(rename = "y")]
    pub purchase: u8,
}

impl Step {
    pub fn new(action: usize, obs: Vec<usize>) -> Self {
        Self {
            action,
            obs,
            reward: 0.0,
            click: 0,
            purchase: 0,
        }
    }
}

/// A per-user, per-category sequence of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "category")]
    pub category_id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(user_id: impl Into<String>, category_id: impl Into<String>, steps: Vec<Step>) -> Self {
        Self {
            user_id: user_id.into(),
            category_id: category_id.into(),
            steps,
        }
    }

    /// Anonymous trajectory from `(action, obs)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, Vec<usize>)>) -> Self {
        Self::new(
            "",
            "",
            pairs.into_iter().map(|(a, o)| Step::new(a, o)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks length and that every action/symbol fits the model.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.steps.is_empty() {
            return invalid("trajectory must have at least one step");
        }
        for (t, step) in self.steps.iter().enumerate() {
            if step.action >= params.n_actions {
                return invalid(format!(
                    "step {t}: action {} out of range 0..{}",
                    step.action, params.n_actions
                ));
            }
            params
                .check_obs(&step.obs)
                .map_err(|e| crate::Error::InvalidInput(format!("step {t}: {e}")))?;
            if step.click > 1 || step.purchase > 1 {
                return invalid(format!("step {t}: click/purchase flags must be 0 or 1"));
            }
        }
        Ok(())
    }
}

/// Reads a JSON-Lines trajectory dataset. Blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Writes one trajectory per line.
pub fn write_jsonl<'a>(
    path: impl AsRef<Path>,
    trajs: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_uses_short_keys() {
        let t = Trajectory::new(
            "u1",
            "c9",
            vec![Step {
                action: 1,
                obs: vec![0, 2],
                reward: -1.5,
                click: 1,
                purchase: 0,
            }],
        );
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(
            text,
            r#"{"user":"u1","category":"c9","steps":[{"a":1,"o":[0,2],"r":-1.5,"x":1,"y":0}]}"#
        );
        let back: Trajectory = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn validation() {
        let p = ModelParams::uniform(2, 2, vec![3]);
        assert!(Trajectory::from_pairs([(0, vec![2]), (1, vec![0])]).validate(&p).is_ok());
        assert!(Trajectory::from_pairs([(2, vec![0])]).validate(&p).is_err());
        assert!(Trajectory::from_pairs([(0, vec![3])]).validate(&p).is_err());
        assert!(Trajectory::from_pairs(Vec::<(usize, Vec<usize>)>::new())
            .validate(&p)
            .is_err());
    }
}
