//! Streaming per-class Bernoulli models over significance masks.
//!
//! A model is a matrix of integer counts (how often each path was
//! significant) plus the number of samples seen. Counts add exactly, so any
//! partition of a sample stream merges back to the sequential result.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::{sample_masks_in, SignificanceMask, ThresholdMode};
use crate::tensorio::{npy, ActivationDump, DenseMatrix, Dtype};

/// Jeffreys prior.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BernoulliClassModel {
    /// `None` for the class-agnostic model.
    pub class_id: Option<usize>,
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    sample_count: u64,
}

impl BernoulliClassModel {
    pub fn new(class_id: Option<usize>, rows: usize, cols: usize) -> Self {
        BernoulliClassModel {
            class_id,
            rows,
            cols,
            counts: vec![0; rows * cols],
            sample_count: 0,
        }
    }

    /// Rebuilds a model from raw counts, checking `counts <= sample_count`.
    pub fn from_counts(
        class_id: Option<usize>,
        rows: usize,
        cols: usize,
        counts: Vec<u64>,
        sample_count: u64,
    ) -> Result<Self> {
        if counts.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} counts for a {rows}x{cols} model",
                counts.len()
            )));
        }
        if counts.iter().any(|&c| c > sample_count) {
            return Err(Error::InvalidArgument(format!(
                "a count exceeds the sample count {sample_count}"
            )));
        }
        Ok(BernoulliClassModel {
            class_id,
            rows,
            cols,
            counts,
            sample_count,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn counts_matrix(&self) -> DenseMatrix {
        let values = self.counts.iter().map(|&c| c as f64).collect();
        DenseMatrix::new(self.rows, self.cols, values).expect("model shape is valid")
    }

    pub fn accumulate(&mut self, mask: &SignificanceMask) -> Result<()> {
        if mask.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "{:?} mask for a {:?} model",
                mask.shape(),
                self.shape()
            )));
        }
        for (count, &bit) in self.counts.iter_mut().zip(mask.bits()) {
            *count += u64::from(bit);
        }
        self.sample_count += 1;
        Ok(())
    }

    pub fn merge(mut self, other: &BernoulliClassModel) -> Result<Self> {
        if self.class_id != other.class_id {
            return Err(Error::ClassMismatch(format!(
                "cannot merge class {:?} into class {:?}",
                other.class_id, self.class_id
            )));
        }
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot merge {:?} model into {:?} model",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.sample_count += other.sample_count;
        Ok(self)
    }

    /// Smoothed estimate `(count + alpha) / (N + 2 alpha)`.
    pub fn finalize(&self, alpha: f64) -> Result<ProbabilityMatrix> {
        if self.sample_count == 0 {
            return Err(Error::EmptyModel);
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing alpha {alpha} must be >= 0")));
        }
        let denom = self.sample_count as f64 + 2.0 * alpha;
        let values = self.counts.iter().map(|&c| (c as f64 + alpha) / denom).collect();
        Ok(ProbabilityMatrix {
            p: DenseMatrix::new(self.rows, self.cols, values)?,
            alpha,
        })
    }

    /// Writes `<stem>.npy` (counts, f64) and `<stem>.json` (sidecar).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str, alpha: f64) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let counts_file = format!("{stem}.npy");
        npy::write_array(&self.counts_matrix(), dir.join(&counts_file), Dtype::F64)?;
        let sidecar = ModelSidecar {
            class_id: self.class_id,
            sample_count: self.sample_count,
            alpha,
            counts_file,
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a model saved by [`BernoulliClassModel::save`]; returns it with
    /// the recorded alpha.
    pub fn load(sidecar_path: impl AsRef<Path>) -> Result<(Self, f64)> {
        let path = sidecar_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let counts = npy::read_array(base.join(&sidecar.counts_file))?;
        let ints = counts
            .values()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as u64)
                } else {
                    Err(Error::InvalidArgument(format!("count {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_counts(
            sidecar.class_id,
            counts.rows(),
            counts.cols(),
            ints,
            sidecar.sample_count,
        )?;
        Ok((model, sidecar.alpha))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSidecar {
    class_id: Option<usize>,
    sample_count: u64,
    alpha: f64,
    counts_file: String,
}

/// Per-path probability of being significant.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub p: DenseMatrix,
    pub alpha: f64,
}

impl ProbabilityMatrix {
    pub fn new(p: DenseMatrix, alpha: f64) -> Result<Self> {
        if let Some(v) = p.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        Ok(ProbabilityMatrix { p, alpha })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p.shape()
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Mean binary entropy over all paths, in nats.
pub fn class_entropy(p: &ProbabilityMatrix) -> f64 {
    let values = p.p.values();
    values.iter().map(|&v| binary_entropy(v)).sum::<f64>() / values.len() as f64
}

/// Accumulates every mask into one label-agnostic model.
pub fn overall_model<'a>(
    masks: impl IntoIterator<Item = &'a SignificanceMask>,
    rows: usize,
    cols: usize,
) -> Result<BernoulliClassModel> {
    let mut model = BernoulliClassModel::new(None, rows, cols);
    for mask in masks {
        model.accumulate(mask)?;
    }
    Ok(model)
}

/// One model per class plus the class-agnostic model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassModels {
    pub class_names: Vec<String>,
    pub models: Vec<BernoulliClassModel>,
    pub overall: BernoulliClassModel,
}

impl ClassModels {
    pub fn new(class_names: Vec<String>, rows: usize, cols: usize) -> Self {
        let models = (0..class_names.len())
            .map(|c| BernoulliClassModel::new(Some(c), rows, cols))
            .collect();
        ClassModels {
            class_names,
            models,
            overall: BernoulliClassModel::new(None, rows, cols),
        }
    }

    pub fn observe(&mut self, class_id: usize, mask: &SignificanceMask) -> Result<()> {
        let classes = self.models.len();
        let model = self.models.get_mut(class_id).ok_or(Error::LabelOutOfRange {
            sample: 0,
            label: class_id,
            classes,
        })?;
        model.accumulate(mask)?;
        self.overall.accumulate(mask)
    }

    pub fn merge(self, other: &ClassModels) -> Result<Self> {
        if self.class_names != other.class_names {
            return Err(Error::ClassMismatch("class lists differ".into()));
        }
        let models = self
            .models
            .into_iter()
            .zip(&other.models)
            .map(|(a, b)| a.merge(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassModels {
            class_names: self.class_names,
            models,
            overall: self.overall.merge(&other.overall)?,
        })
    }

    /// Classes with at least one sample, as `(class_id, model)`.
    pub fn present(&self) -> impl Iterator<Item = (usize, &BernoulliClassModel)> {
        self.models
            .iter()
            .enumerate()
            .filter(|(_, m)| m.sample_count() > 0)
    }
}

const CHUNK: usize = 256;

/// Builds class models for every sample of a dump.
///
/// Samples are processed in fixed chunks on the rayon pool and merged; counts
/// are integers, so the result does not depend on scheduling.
pub fn accumulate_dump(dump: &ActivationDump, mode: ThresholdMode) -> Result<ClassModels> {
    let (rows, cols) = dump.weights.shape();
    let names = dump.manifest.class_names.clone();
    let chunks: Vec<_> = (0..dump.sample_count()).step_by(CHUNK).collect();
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let mut acc = ClassModels::new(names.clone(), rows, cols);
            for item in sample_masks_in(dump, mode, start..start + CHUNK) {
                let (class, mask) = item?;
                acc.observe(class, &mask)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    partials
        .iter()
        .try_fold(ClassModels::new(names.clone(), rows, cols), |acc, p| acc.merge(p))
}
