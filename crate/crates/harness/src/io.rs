//! Output helpers. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a partial file.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Independent random streams derived from the experiment seed.
pub mod stream {
    pub const DATA_ENV: u64 = 1;
    pub const DATA_BEHAVIOR: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const TRAIN_ENV: u64 = 4;
    pub const EM_REFRESH: u64 = 5;
    pub const EVAL_ENV: u64 = 6;
    pub const INTERPRET: u64 = 7;
    /// Agent initialization and exploration use `AGENT + kind index`.
    pub const AGENT: u64 = 100;
    /// Agent randomness during evaluation uses `AGENT_EVAL + kind index`.
    pub const AGENT_EVAL: u64 = 200;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(&item)?);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => HarnessError::Missing(path.display().to_string()),
        _ => HarnessError::io(path, e),
    })
}

pub fn write_csv<H, R, I>(path: &Path, header: &[H], rows: I) -> Result<()>
where
    H: AsRef<[u8]>,
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
    atomic_write(path, &bytes)
}

/// Shortest round-trip decimal representation.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
