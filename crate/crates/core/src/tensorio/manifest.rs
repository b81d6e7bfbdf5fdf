use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{self, Dtype, NpyArray};
use super::DenseMatrix;
use crate::error::{Error, Result};

/// On-disk description of one analyzable layer.
///
/// File paths are resolved relative to the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model_id: String,
    pub layer_id: String,
    /// `m x n` weight matrix.
    pub weight_file: PathBuf,
    /// Optional length-`m` bias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_file: Option<PathBuf>,
    /// `S x n` layer inputs, one row per sample.
    pub activation_file: PathBuf,
    /// Length-`S` class indices.
    pub label_file: PathBuf,
    pub class_names: Vec<String>,
    pub dtype: Dtype,
    pub sample_count: usize,
}

const MANIFEST_KEYS: [&str; 9] = [
    "model_id",
    "layer_id",
    "weight_file",
    "bias_file",
    "activation_file",
    "label_file",
    "class_names",
    "dtype",
    "sample_count",
];

/// How unknown manifest keys are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown keys are logged and dropped.
    Lenient,
}

impl Manifest {
    pub fn parse(text: &str, strictness: Strictness) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let object = value
            .as_object_mut()
            .ok_or_else(|| Error::Manifest("manifest must be a JSON object".into()))?;
        let unknown: Vec<String> = object
            .keys()
            .filter(|k| !MANIFEST_KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            match strictness {
                Strictness::Strict => {
                    return Err(Error::Manifest(format!("unknown keys: {}", unknown.join(", "))))
                }
                Strictness::Lenient => {
                    for key in &unknown {
                        log::warn!("ignoring unknown manifest key {key:?}");
                        object.remove(key);
                    }
                }
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// A validated manifest together with its loaded arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub manifest: Manifest,
    pub weights: DenseMatrix,
    pub bias: Option<Vec<f64>>,
    pub activations: DenseMatrix,
    pub labels: Vec<usize>,
}

pub fn load_dump(manifest_path: impl AsRef<Path>) -> Result<ActivationDump> {
    load_dump_with(manifest_path, Strictness::Strict)
}

pub fn load_dump_with(manifest_path: impl AsRef<Path>, strictness: Strictness) -> Result<ActivationDump> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(&text, strictness)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    ActivationDump::load(manifest, base)
}

fn read_float(base: &Path, file: &Path, dtype: Dtype, what: &str) -> Result<NpyArray> {
    let array = npy::read_npy(base.join(file))?;
    match array.element.float_dtype() {
        Some(found) if found == dtype => Ok(array),
        _ => Err(Error::Manifest(format!(
            "{what} file {} is {:?}, manifest declares {:?}",
            file.display(),
            array.element,
            dtype
        ))),
    }
}

fn vector_of(array: NpyArray, what: &str) -> Result<Vec<f64>> {
    let vector_like = match array.shape.as_slice() {
        [_] => true,
        [r, c] => *r == 1 || *c == 1,
        _ => false,
    };
    if !vector_like {
        return Err(Error::Shape(format!(
            "{what} must be a vector, got shape {:?}",
            array.shape
        )));
    }
    if let Some(index) = array.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(array.values)
}

impl ActivationDump {
    /// Loads every array referenced by `manifest` (relative to `base`) and
    /// cross-checks shapes and labels.
    pub fn load(manifest: Manifest, base: &Path) -> Result<Self> {
        let weights = read_float(base, &manifest.weight_file, manifest.dtype, "weight")?.into_matrix()?;
        let bias = manifest
            .bias_file
            .as_ref()
            .map(|f| vector_of(read_float(base, f, manifest.dtype, "bias")?, "bias"))
            .transpose()?;
        let activations =
            read_float(base, &manifest.activation_file, manifest.dtype, "activation")?.into_matrix()?;
        let raw_labels = vector_of(npy::read_npy(base.join(&manifest.label_file))?, "labels")?;

        let mut labels = Vec::with_capacity(raw_labels.len());
        for (sample, &v) in raw_labels.iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Manifest(format!(
                    "label {v} at sample {sample} is not a class index"
                )));
            }
            labels.push(v as usize);
        }
        ActivationDump::new(manifest, weights, bias, activations, labels)
    }

    /// Validates an in-memory dump.
    pub fn new(
        manifest: Manifest,
        weights: DenseMatrix,
        bias: Option<Vec<f64>>,
        activations: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let classes = manifest.class_names.len();
        if classes == 0 {
            return Err(Error::Manifest("class_names is empty".into()));
        }
        let mut sorted = manifest.class_names.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Manifest(format!("duplicate class name {:?}", w[0])));
        }
        if weights.cols() != activations.cols() {
            return Err(Error::Shape(format!(
                "weight has {} columns but activations have {}",
                weights.cols(),
                activations.cols()
            )));
        }
        if let Some(bias) = &bias {
            if bias.len() != weights.rows() {
                return Err(Error::Shape(format!(
                    "bias has length {} but weight has {} rows",
                    bias.len(),
                    weights.rows()
                )));
            }
        }
        if labels.len() != activations.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} activation rows",
                labels.len(),
                activations.rows()
            )));
        }
        if manifest.sample_count != activations.rows() {
            return Err(Error::Manifest(format!(
                "sample_count {} disagrees with {} activation rows",
                manifest.sample_count,
                activations.rows()
            )));
        }
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                sample,
                label,
                classes,
            });
        }
        Ok(ActivationDump {
            manifest,
            weights,
            bias,
            activations,
            labels,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }

    pub fn class_count(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn activation(&self, sample: usize) -> &[f64] {
        self.activations.row(sample)
    }

    /// Writes arrays and `manifest.json` into `dir`, overwriting the file
    /// names recorded in the manifest. Returns the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = self.manifest.clone();
        manifest.weight_file = "weights.npy".into();
        manifest.activation_file = "activations.npy".into();
        manifest.label_file = "labels.npy".into();
        manifest.bias_file = self.bias.as_ref().map(|_| "bias.npy".into());
        let dtype = manifest.dtype;

        npy::write_array(&self.weights, dir.join(&manifest.weight_file), dtype)?;
        npy::write_array(&self.activations, dir.join(&manifest.activation_file), dtype)?;
        let labels: Vec<f64> = self.labels.iter().map(|&l| l as f64).collect();
        npy::write_vector(&labels, dir.join(&manifest.label_file), dtype)?;
        if let (Some(bias), Some(file)) = (&self.bias, &manifest.bias_file) {
            npy::write_vector(bias, dir.join(file), dtype)?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
