//! Histograms of how often each path is significant within a class.

use serde::{Deserialize, Serialize};

use crate::class_stats::BernoulliClassModel;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

/// Equal-width histogram over `[0, 1]`; bins are `[lo, hi)` except the last, `[lo, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Raw `count / N` per path, row-major.
pub fn path_frequencies(model: &BernoulliClassModel) -> Result<Vec<f64>> {
    if model.sample_count() == 0 {
        return Err(Error::EmptyModel);
    }
    let n = model.sample_count() as f64;
    Ok(model.counts().iter().map(|&c| c as f64 / n).collect())
}

pub fn build_histogram(freqs: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for &f in freqs {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!("frequency {f} outside [0, 1]")));
        }
        // floor(f * B) can land one bin off near an edge; settle against the edges
        let mut idx = ((f * bins as f64) as usize).min(bins - 1);
        while idx + 1 < bins && f >= bin_edges[idx + 1] {
            idx += 1;
        }
        while idx > 0 && f < bin_edges[idx] {
            idx -= 1;
        }
        counts[idx] += 1;
    }
    Ok(Histogram {
        bin_edges,
        counts,
        total: freqs.len() as u64,
    })
}

/// Fraction of paths with frequency strictly above `threshold`.
pub fn tail_mass(freqs: &[f64], threshold: f64) -> f64 {
    if freqs.is_empty() {
        return 0.0;
    }
    freqs.iter().filter(|&&f| f > threshold).count() as f64 / freqs.len() as f64
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(counts: &[u64], n: u64) -> BernoulliClassModel {
        BernoulliClassModel::from_counts(Some(0), 2, counts.len() / 2, counts.to_vec(), n).unwrap()
    }

    #[test]
    fn frequencies() {
        assert_eq!(path_frequencies(&model(&[2, 1, 0, 0], 2)).unwrap(), vec![1.0, 0.5, 0.0, 0.0]);
        assert_eq!(path_frequencies(&model(&[3, 3], 3)).unwrap(), vec![1.0, 1.0]);
        assert_eq!(path_frequencies(&model(&[0, 0], 3)).unwrap(), vec![0.0, 0.0]);
        assert!(path_frequencies(&BernoulliClassModel::new(None, 1, 1)).is_err());
    }

    #[test]
    fn edge_rule() {
        let h = build_histogram(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.bin_edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(build_histogram(&[0.0; 7], 5).unwrap().counts, vec![7, 0, 0, 0, 0]);
        assert_eq!(build_histogram(&[0.0, 0.3, 1.0], 1).unwrap().counts, vec![3]);
        assert!(build_histogram(&[0.1], 0).is_err());
        assert!(build_histogram(&[1.5], 2).is_err());
    }

    #[test]
    fn decimal_edges_land_in_upper_bin() {
        let h = build_histogram(&[0.3, 0.7, 0.1, 0.9], 10).unwrap();
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.counts[7], 1);
        assert_eq!(h.counts[9], 1);
    }

    #[test]
    fn tail_fixtures() {
        assert!((tail_mass(&[0.1, 0.9, 0.95], 0.8) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tail_mass(&[0.1, 1.0], 1.0), 0.0);
        assert_eq!(tail_mass(&[0.1, 1.0, 0.5], 0.0), 1.0);
    }

    #[test]
    fn csv() {
        let h = build_histogram(&[0.0, 0.75], 2).unwrap();
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0,0.5,1\n0.5,1,1\n");
    }
}
