//! Per-sample neuron-weight interaction matrices `N = W diag(a)` and the
//! binary significance masks derived from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ActivationDump, DenseMatrix};

/// `N_ij = W_ij * a_j` for one sample. Bias is not part of `N`, so
/// `rowsum(N) + b` is the layer's pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub n: DenseMatrix,
    pub sample: Option<usize>,
}

pub fn interaction_matrix(weights: &DenseMatrix, activation: &[f64]) -> Result<InteractionMatrix> {
    if activation.len() != weights.cols() {
        return Err(Error::Shape(format!(
            "activation of length {} for {}x{} weights",
            activation.len(),
            weights.rows(),
            weights.cols()
        )));
    }
    if let Some(index) = activation.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let values = weights
        .iter_rows()
        .flat_map(|row| row.iter().zip(activation).map(|(w, a)| w * a))
        .collect();
    Ok(InteractionMatrix {
        n: DenseMatrix::new(weights.rows(), weights.cols(), values)?,
        sample: None,
    })
}

impl InteractionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.n.iter_rows().map(|r| r.iter().sum()).collect()
    }
}

/// Rule for the per-row significance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ThresholdMode {
    /// `|N_ij| > n * sum_k N_ik` with the signed row sum and `n` the input width.
    #[default]
    Literal,
    /// `|N_ij| > (1/n) * sum_k |N_ik|`.
    RowMeanAbs,
    /// `|N_ij|` above the `q`-quantile of `|N_i.|` (linear interpolation).
    Quantile(f64),
}

impl ThresholdMode {
    pub fn quantile(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
        }
        Ok(ThresholdMode::Quantile(q))
    }

    fn row_threshold(self, row: &[f64]) -> f64 {
        let n = row.len() as f64;
        match self {
            ThresholdMode::Literal => n * row.iter().sum::<f64>(),
            ThresholdMode::RowMeanAbs => row.iter().map(|v| v.abs()).sum::<f64>() / n,
            ThresholdMode::Quantile(q) => {
                let mut mags: Vec<f64> = row.iter().map(|v| v.abs()).collect();
                mags.sort_by(f64::total_cmp);
                let pos = q * (mags.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                mags[lo] + (mags[hi] - mags[lo]) * (pos - lo as f64)
            }
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Literal => f.write_str("literal"),
            ThresholdMode::RowMeanAbs => f.write_str("row-mean-abs"),
            ThresholdMode::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ThresholdMode::Literal),
            "row-mean-abs" => Ok(ThresholdMode::RowMeanAbs),
            _ => match s.strip_prefix("quantile:") {
                Some(q) => ThresholdMode::quantile(
                    q.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad quantile {q:?}")))?,
                ),
                None => Err(Error::InvalidArgument(format!(
                    "unknown threshold mode {s:?} (expected literal, row-mean-abs or quantile:<q>)"
                ))),
            },
        }
    }
}

impl From<ThresholdMode> for String {
    fn from(mode: ThresholdMode) -> String {
        mode.to_string()
    }
}

impl TryFrom<String> for ThresholdMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Binary matrix marking significant paths of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
    pub mode: ThresholdMode,
}

impl SignificanceMask {
    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>, mode: ThresholdMode) -> Result<Self> {
        if rows * cols != bits.len() || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "{} bits for a {rows}x{cols} mask",
                bits.len()
            )));
        }
        Ok(SignificanceMask {
            rows,
            cols,
            bits,
            mode,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn count_significant(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        self.count_significant() as f64 / self.bits.len() as f64
    }

    /// 0/1 matrix, for export.
    pub fn to_matrix(&self) -> DenseMatrix {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        DenseMatrix::new(self.rows, self.cols, values).expect("mask shape is valid")
    }
}

/// Marks `(i, j)` significant when `|N_ij|` strictly exceeds the row's threshold.
pub fn significance_mask(interactions: &InteractionMatrix, mode: ThresholdMode) -> SignificanceMask {
    let n = &interactions.n;
    let mut bits = Vec::with_capacity(n.len());
    for row in n.iter_rows() {
        let threshold = mode.row_threshold(row);
        bits.extend(row.iter().map(|v| v.abs() > threshold));
    }
    SignificanceMask {
        rows: n.rows(),
        cols: n.cols(),
        bits,
        mode,
    }
}

/// Lazily yields `(class_id, mask)` for each sample of a dump, in order.
pub struct SampleMasks<'a> {
    dump: &'a ActivationDump,
    mode: ThresholdMode,
    range: std::ops::Range<usize>,
}

pub fn sample_masks(dump: &ActivationDump, mode: ThresholdMode) -> SampleMasks<'_> {
    sample_masks_in(dump, mode, 0..dump.sample_count())
}

/// Like [`sample_masks`] but restricted to a contiguous range of samples.
pub fn sample_masks_in(
    dump: &ActivationDump,
    mode: ThresholdMode,
    range: std::ops::Range<usize>,
) -> SampleMasks<'_> {
    let end = range.end.min(dump.sample_count());
    SampleMasks {
        dump,
        mode,
        range: range.start.min(end)..end,
    }
}

impl Iterator for SampleMasks<'_> {
    type Item = Result<(usize, SignificanceMask)>;

    fn next(&mut self) -> Option<Self::Item> {
        let s = self.range.next()?;
        Some(
            interaction_matrix(&self.dump.weights, self.dump.activation(s)).map(|mut n| {
                n.sample = Some(s);
                (self.dump.labels[s], significance_mask(&n, self.mode))
            }),
        )
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.range.size_hint()
    }
}

impl ExactSizeIterator for SampleMasks<'_> {}
