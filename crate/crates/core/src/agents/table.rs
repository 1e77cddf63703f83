//! Sparse observation-keyed tables, serialized with `"s0,s1,..."` keys.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub(crate) fn key_string(obs: &[usize]) -> String {
    obs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_key(s: &str) -> Result<Vec<usize>, std::num::ParseIntError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

pub(crate) fn serialize<S, V>(map: &BTreeMap<Vec<usize>, V>, ser: S) -> Result<S::Ok, S::Error>
where
    S: Serializer,
    V: Serialize,
{
    let keyed: BTreeMap<String, &V> = map.iter().map(|(k, v)| (key_string(k), v)).collect();
    keyed.serialize(ser)
}

pub(crate) fn deserialize<'de, D, V>(de: D) -> Result<BTreeMap<Vec<usize>, V>, D::Error>
where
    D: Deserializer<'de>,
    V: Deserialize<'de>,
{
    let keyed: BTreeMap<String, V> = BTreeMap::deserialize(de)?;
    keyed
        .into_iter()
        .map(|(k, v)| parse_key(&k).map(|k| (k, v)).map_err(D::Error::custom))
        .collect()
}

/// Lowest-index argmax.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
