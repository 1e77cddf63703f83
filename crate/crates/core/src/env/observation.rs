use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Raw per-request statistics of one user/item pair before discretization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub pv_gi: u32,
    pub clk_gi: u32,
    pub pv_gw: u32,
    pub clk_gw: u32,
}

impl Counters {
    /// Feature vector in `FEATURE_NAMES` order.
    pub fn features(&self, scenario: usize) -> [f64; 5] {
        [
            self.pv_gi as f64,
            self.clk_gi as f64,
            self.pv_gw as f64,
            self.clk_gw as f64,
            scenario as f64,
        ]
    }
}

/// Maps raw features to symbols. Feature `g` has `cardinalities[g]` symbols
/// and `cardinalities[g] - 1` strictly increasing edges; the symbol is the
/// number of edges at or below the value, so values beyond the last edge
/// land in the top bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub cardinalities: Vec<usize>,
    pub edges: Vec<Vec<f64>>,
}

impl ObservationSpec {
    /// Unit-width bins `[0,1), [1,2), ...` suitable for integer counts.
    pub fn unit_bins(cardinalities: Vec<usize>) -> Self {
        let edges = cardinalities
            .iter()
            .map(|&m| (1..m).map(|k| k as f64).collect())
            .collect();
        Self { cardinalities, edges }
    }

    pub fn with_edges(cardinalities: Vec<usize>, edges: Vec<Vec<f64>>) -> Result<Self> {
        if cardinalities.len() != edges.len() {
            return invalid("one edge list per feature required");
        }
        for (g, (e, &m)) in edges.iter().zip(&cardinalities).enumerate() {
            if m == 0 || e.len() != m - 1 {
                return invalid(format!("feature {g}: {m} bins need {} edges", m.saturating_sub(1)));
            }
            if e.iter().any(|v| !v.is_finite()) || e.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("feature {g}: edges must be finite and strictly increasing"));
            }
        }
        Ok(Self { cardinalities, edges })
    }

    /// Edges at the empirical quantiles `k/m` of each feature column.
    /// Duplicate quantiles are nudged upward so edges stay strictly increasing.
    pub fn from_quantiles(samples: &[Vec<f64>], cardinalities: Vec<usize>) -> Result<Self> {
        if samples.is_empty() {
            return invalid("quantile edges need at least one sample");
        }
        let mut edges = Vec::with_capacity(cardinalities.len());
        for (g, &m) in cardinalities.iter().enumerate() {
            let mut col: Vec<f64> = Vec::with_capacity(samples.len());
            for s in samples {
                match s.get(g) {
                    Some(v) if v.is_finite() => col.push(*v),
                    _ => return invalid(format!("sample missing finite feature {g}")),
                }
            }
            col.sort_by(f64::total_cmp);
            let mut e: Vec<f64> = Vec::with_capacity(m.saturating_sub(1));
            for k in 1..m {
                let idx = (k * col.len() / m).min(col.len() - 1);
                let mut v = col[idx];
                if let Some(&last) = e.last() {
                    if v <= last {
                        v = last + (last.abs() * 1e-9).max(1e-9);
                    }
                }
                e.push(v);
            }
            edges.push(e);
        }
        Self::with_edges(cardinalities, edges)
    }

    pub fn n_features(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn symbol(&self, feature: usize, value: f64) -> usize {
        self.edges[feature].partition_point(|&e| e <= value)
    }

    pub fn discretize(&self, features: &[f64]) -> Vec<usize> {
        features
            .iter()
            .enumerate()
            .map(|(g, &v)| self.symbol(g, v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_bins_clamp_counts() {
        let spec = ObservationSpec::unit_bins(vec![7, 6, 12, 4, 2]);
        assert_eq!(spec.discretize(&[0.0, 0.0, 0.0, 0.0, 0.0]), vec![0, 0, 0, 0, 0]);
        assert_eq!(spec.discretize(&[3.0, 2.0, 11.0, 3.0, 1.0]), vec![3, 2, 11, 3, 1]);
        assert_eq!(spec.discretize(&[40.0, 9.0, 99.0, 4.0, 1.0]), vec![6, 5, 11, 3, 1]);
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(ObservationSpec::with_edges(vec![3], vec![vec![1.0]]).is_err());
        assert!(ObservationSpec::with_edges(vec![3], vec![vec![2.0, 1.0]]).is_err());
        assert!(ObservationSpec::with_edges(vec![3], vec![vec![1.0, 1.0]]).is_err());
        assert!(ObservationSpec::with_edges(vec![3], vec![vec![1.0, 2.0]]).is_ok());
    }

    #[test]
    fn quantile_edges_balance_bins() {
        let samples: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64]).collect();
        let spec = ObservationSpec::from_quantiles(&samples, vec![4]).unwrap();
        let mut counts = [0usize; 4];
        for s in &samples {
            counts[spec.symbol(0, s[0])] += 1;
        }
        assert_eq!(counts, [250, 250, 250, 250]);
    }

    proptest! {
        #[test]
        fn symbols_in_range_and_monotone(
            samples in prop::collection::vec(-50.0f64..50.0, 1..60),
            m in 1usize..8,
            a in -100.0f64..100.0,
            b in -100.0f64..100.0,
        ) {
            let rows: Vec<Vec<f64>> = samples.iter().map(|&v| vec![v]).collect();
            let spec = ObservationSpec::from_quantiles(&rows, vec![m]).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spec.symbol(0, hi) < m);
            prop_assert!(spec.symbol(0, lo) <= spec.symbol(0, hi));
        }
    }
}
