use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::class_stats::DEFAULT_ALPHA;
use crate::error::{Error, Result};
use crate::interactions::ThresholdMode;
use crate::sparsity::DEFAULT_BINS;

/// Separation metrics a report can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Bernoulli path KL (always computed; listing it is a no-op).
    PathKl,
    PrototypeKl,
    SoftmaxKl,
    Energy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::PathKl, Metric::PrototypeKl, Metric::SoftmaxKl, Metric::Energy];
}

/// JSON configuration shared by all commands.
///
/// Relative paths in `inputs` and `out` are resolved against the directory
/// holding the config file when loaded with [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Manifest paths. `compare` reads the first as in-distribution and the
    /// second as shifted.
    pub inputs: Vec<PathBuf>,
    /// Keep only manifests whose `layer_id` matches.
    pub layer: Option<String>,
    pub threshold_mode: ThresholdMode,
    pub alpha: f64,
    pub bins: usize,
    pub metrics: Vec<Metric>,
    pub out: PathBuf,
    /// Seeds pair subsampling in the ablation metrics.
    pub seed: u64,
    /// Render an extra heatmap per run on the min-max of all runs.
    pub shared_scale: bool,
    pub lenient_manifest: bool,
    /// Cap on point pairs per class pair for the ablation metrics.
    pub max_pairs: Option<usize>,
    /// Also write every sample's mask as one `S x (m n)` array.
    pub export_masks: bool,
    /// Frequency threshold for the reported tail mass.
    pub tail_threshold: f64,
    pub memorisation: MemorisationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            layer: None,
            threshold_mode: ThresholdMode::Literal,
            alpha: DEFAULT_ALPHA,
            bins: DEFAULT_BINS,
            metrics: Metric::ALL.to_vec(),
            out: PathBuf::from("pathsig-out"),
            seed: 0,
            shared_scale: true,
            lenient_manifest: false,
            max_pairs: None,
            export_masks: false,
            tail_threshold: 0.9,
            memorisation: MemorisationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for input in &mut cfg.inputs {
            if input.is_relative() {
                *input = base.join(&*input);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {} must be >= 0", self.alpha)));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tail_threshold) {
            return Err(Error::InvalidArgument(format!(
                "tail_threshold {} outside [0, 1]",
                self.tail_threshold
            )));
        }
        Ok(())
    }

    pub(crate) fn wants(&self, metric: Metric) -> bool {
        self.metrics.contains(&metric)
    }
}

/// The synthetic blob experiment behind `memorisation`.
///
/// Class means are `mean_offset + N(0, mean_scale^2)` per coordinate. The
/// shifted evaluation set moves every coordinate by `ood_shift_sigmas * sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorisationConfig {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub hidden: usize,
    pub mean_scale: f64,
    pub mean_offset: f64,
    pub sigma: f64,
    pub ood_shift_sigmas: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_per_epoch: f64,
    /// Root seed; data, init, batch order and label shuffling use fixed
    /// offsets from it.
    pub seed: u64,
}

impl Default for MemorisationConfig {
    fn default() -> Self {
        MemorisationConfig {
            classes: 3,
            dims: 8,
            per_class: 200,
            hidden: 32,
            mean_scale: 2.0,
            mean_offset: 8.0,
            sigma: 1.0,
            ood_shift_sigmas: 2.0,
            epochs: 200,
            batch_size: 32,
            lr0: 0.01,
            lr_decay_per_epoch: 0.95,
            seed: 16,
        }
    }
}
