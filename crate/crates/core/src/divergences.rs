//! Coordinate-wise Bernoulli KL divergences between class models, the
//! pairwise heatmap matrix, and in-distribution vs. shifted comparisons.

use serde::{Deserialize, Serialize};

use crate::class_stats::{class_entropy, BernoulliClassModel, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::tensorio::DenseMatrix;

/// Label used for the class-agnostic row and column.
pub const OVERALL_LABEL: &str = "overall";

fn xlogy_ratio(x: f64, y: f64) -> Result<f64> {
    if x == 0.0 {
        Ok(0.0)
    } else if y == 0.0 {
        Err(Error::InfiniteDivergence { value: y })
    } else {
        Ok(x * (x / y).ln())
    }
}

/// KL of `Bernoulli(p) || Bernoulli(q)` for one coordinate.
pub fn bernoulli_kl_scalar(p: f64, q: f64) -> Result<f64> {
    let kl = xlogy_ratio(p, q)? + xlogy_ratio(1.0 - p, 1.0 - q)?;
    // each coordinate is non-negative; only rounding can push it below zero
    Ok(kl.max(0.0))
}

fn kl_terms(p: &ProbabilityMatrix, q: &ProbabilityMatrix) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "cannot compare {:?} and {:?} probability matrices",
            p.shape(),
            q.shape()
        )));
    }
    p.p.values()
        .iter()
        .zip(q.p.values())
        .try_fold(0.0, |acc, (&a, &b)| Ok(acc + bernoulli_kl_scalar(a, b)?))
}

/// Summed coordinate-wise KL over all paths.
pub fn bernoulli_kl_total(p: &ProbabilityMatrix, q: &ProbabilityMatrix) -> Result<f64> {
    kl_terms(p, q)
}

/// Coordinate-wise KL averaged over paths (the default scalar).
pub fn bernoulli_kl(p: &ProbabilityMatrix, q: &ProbabilityMatrix) -> Result<f64> {
    Ok(kl_terms(p, q)? / p.p.len() as f64)
}

/// How a heatmap's colour range was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Normalisation {
    None,
    SharedScale { lo: f64, hi: f64 },
}

/// Pairwise KL between classes. Entry `(r, c)` is `KL(p_r || p_c)`; the
/// diagonal holds class entropies and, when present, the last row and
/// column compare against the class-agnostic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMatrix {
    pub labels: Vec<String>,
    pub class_count: usize,
    pub has_overall: bool,
    pub kl: DenseMatrix,
    pub alpha: f64,
    pub normalisation: Normalisation,
}

pub fn pairwise_matrix(
    labels: &[String],
    models: &[BernoulliClassModel],
    overall: Option<&BernoulliClassModel>,
    alpha: f64,
) -> Result<DivergenceMatrix> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("need at least one class model".into()));
    }
    if labels.len() != models.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} models",
            labels.len(),
            models.len()
        )));
    }
    let mut probs = models
        .iter()
        .map(|m| m.finalize(alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut all_labels = labels.to_vec();
    if let Some(overall) = overall {
        probs.push(overall.finalize(alpha)?);
        all_labels.push(OVERALL_LABEL.to_string());
    }
    let size = probs.len();
    let mut kl = DenseMatrix::zeros(size, size)?;
    for (r, p) in probs.iter().enumerate() {
        for (c, q) in probs.iter().enumerate() {
            let v = if r == c {
                class_entropy(p)
            } else {
                bernoulli_kl(p, q)?
            };
            kl.set(r, c, v);
        }
    }
    Ok(DivergenceMatrix {
        labels: all_labels,
        class_count: models.len(),
        has_overall: overall.is_some(),
        kl,
        alpha,
        normalisation: Normalisation::None,
    })
}

/// Mean over ordered off-diagonal pairs of the class block.
pub fn mean_inter_class(dm: &DivergenceMatrix) -> Result<f64> {
    let k = dm.class_count;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "mean inter-class divergence needs two classes, have {k}"
        )));
    }
    let mut sum = 0.0;
    for r in 0..k {
        for c in 0..k {
            if r != c {
                sum += dm.kl.get(r, c);
            }
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Unweighted mean of class entropies.
pub fn mean_class_entropy(models: &[BernoulliClassModel], alpha: f64) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("need at least one class model".into()));
    }
    let mut sum = 0.0;
    for m in models {
        sum += class_entropy(&m.finalize(alpha)?);
    }
    Ok(sum / models.len() as f64)
}

/// Divergences from in-distribution class models to their shifted counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdOodDistance {
    /// Shared classes, in in-distribution order.
    pub classes: Vec<String>,
    /// `KL(p_c^ID || p_c^OOD)`.
    pub per_class: Vec<f64>,
    /// `(c, c')` holds `KL(p_c^ID || p_c'^OOD)`.
    pub cross: DenseMatrix,
}

/// Compares models over the classes both sides share (matched by name).
pub fn id_ood_distance(
    id: &[(&str, &BernoulliClassModel)],
    ood: &[(&str, &BernoulliClassModel)],
    alpha: f64,
) -> Result<IdOodDistance> {
    let pairs: Vec<_> = id
        .iter()
        .filter_map(|(name, m)| {
            ood.iter()
                .find(|(other, _)| other == name)
                .map(|(_, o)| (*name, *m, *o))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let id_p = pairs
        .iter()
        .map(|(_, m, _)| m.finalize(alpha))
        .collect::<Result<Vec<_>>>()?;
    let ood_p = pairs
        .iter()
        .map(|(_, _, o)| o.finalize(alpha))
        .collect::<Result<Vec<_>>>()?;
    let k = pairs.len();
    let mut cross = DenseMatrix::zeros(k, k)?;
    for (r, p) in id_p.iter().enumerate() {
        for (c, q) in ood_p.iter().enumerate() {
            cross.set(r, c, bernoulli_kl(p, q)?);
        }
    }
    Ok(IdOodDistance {
        classes: pairs.iter().map(|(n, _, _)| n.to_string()).collect(),
        per_class: (0..k).map(|c| cross.get(c, c)).collect(),
        cross,
    })
}

/// `(min, max)` over the union of all entries.
pub fn shared_scale<'a>(matrices: impl IntoIterator<Item = &'a DenseMatrix>) -> Option<(f64, f64)> {
    matrices
        .into_iter()
        .map(DenseMatrix::min_max)
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
}

/// Maps `x` to `round(255 (x - lo) / (hi - lo))`, clamped; `hi == lo` maps to 0.
pub fn gray_level(x: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    (255.0 * (x - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
}

/// Binary PPM (P6) rendering each entry as a `cell_px` square of gray.
pub fn heatmap_ppm(matrix: &DenseMatrix, lo: f64, hi: f64, cell_px: usize) -> Vec<u8> {
    let cell = cell_px.max(1);
    let (w, h) = (matrix.cols() * cell, matrix.rows() * cell);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for row in matrix.iter_rows() {
        let line: Vec<u8> = row
            .iter()
            .flat_map(|&x| {
                let v = gray_level(x, lo, hi);
                std::iter::repeat_n([v, v, v], cell).flatten()
            })
            .collect();
        for _ in 0..cell {
            out.extend_from_slice(&line);
        }
    }
    out
}

/// CSV with a header row and a leading label column.
pub fn labeled_csv(row_labels: &[String], col_labels: &[String], matrix: &DenseMatrix) -> String {
    let mut out = String::from("label");
    for l in col_labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (label, row) in row_labels.iter().zip(matrix.iter_rows()) {
        out.push_str(&csv_field(label));
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl DivergenceMatrix {
    pub fn to_csv(&self) -> String {
        labeled_csv(&self.labels, &self.labels, &self.kl)
    }

    /// Entropies on the diagonal of the class block.
    pub fn class_entropies(&self) -> Vec<f64> {
        (0..self.class_count).map(|c| self.kl.get(c, c)).collect()
    }
}
