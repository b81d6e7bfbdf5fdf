//! Alternative separation metrics: KL between softmaxed class-mean
//! interaction matrices, KL between softmax outputs, and expected pairwise
//! Euclidean distances between activation clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::interaction_matrix;
use crate::mlp::softmax;
use crate::tensorio::{ActivationDump, DenseMatrix};

/// Probabilities are clamped to at least this before taking logs.
pub const CLAMP_EPS: f64 = 1e-12;

/// Class-by-class summary shared by every ablation metric.
///
/// `matrix[c][c']` is the inter-class value for `c != c'` and the intra-class
/// spread on the diagonal; `None` marks undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSummary {
    pub metric: String,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub inter_mean: Option<f64>,
    pub intra_mean: Option<f64>,
}

impl PairwiseSummary {
    fn from_parts(metric: &str, matrix: Vec<Vec<Option<f64>>>) -> Self {
        let k = matrix.len();
        let inter: Vec<f64> = (0..k)
            .flat_map(|r| (0..k).filter(move |&c| c != r).map(move |c| (r, c)))
            .filter_map(|(r, c)| matrix[r][c])
            .collect();
        let intra: Vec<f64> = (0..k).filter_map(|c| matrix[c][c]).collect();
        PairwiseSummary {
            metric: metric.to_string(),
            inter_mean: mean(&inter),
            intra_mean: mean(&intra),
            matrix,
        }
    }

    pub fn inter(&self, a: usize, b: usize) -> Option<f64> {
        self.matrix[a][b]
    }

    pub fn intra(&self, c: usize) -> Option<f64> {
        self.matrix[c][c]
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Categorical KL with both sides clamped to [`CLAMP_EPS`].
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(CLAMP_EPS);
            let b = b.max(CLAMP_EPS);
            a * (a / b).ln()
        })
        .sum()
}

pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Prototype comparison. Each class-mean interaction matrix is softmaxed row
/// by row; classes are compared by the row-averaged categorical KL and the
/// diagonal carries the row-averaged entropy.
pub fn prototype_interaction_kl(prototypes: &[DenseMatrix]) -> Result<PairwiseSummary> {
    let shape = prototypes
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one prototype".into()))?
        .shape();
    if let Some(p) = prototypes.iter().find(|p| p.shape() != shape) {
        return Err(Error::Shape(format!(
            "prototype shapes differ: {:?} vs {:?}",
            shape,
            p.shape()
        )));
    }
    let softmaxed: Vec<Vec<Vec<f64>>> = prototypes
        .iter()
        .map(|p| p.iter_rows().map(softmax).collect())
        .collect();
    let rows = shape.0 as f64;
    let k = prototypes.len();
    let matrix = (0..k)
        .map(|r| {
            (0..k)
                .map(|c| {
                    let v = if r == c {
                        softmaxed[r].iter().map(|row| categorical_entropy(row)).sum::<f64>()
                    } else {
                        softmaxed[r]
                            .iter()
                            .zip(&softmaxed[c])
                            .map(|(p, q)| categorical_kl(p, q))
                            .sum::<f64>()
                    };
                    Some(v / rows)
                })
                .collect()
        })
        .collect();
    Ok(PairwiseSummary::from_parts("prototype_interaction_kl", matrix))
}

/// Points (softmax outputs or activations) belonging to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPointCloud {
    pub class_id: usize,
    pub points: Vec<Vec<f64>>,
}

impl ClassPointCloud {
    pub fn new(class_id: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("class {class_id} has no points")))?
            .len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape(format!("class {class_id} mixes point dimensions")));
        }
        Ok(ClassPointCloud { class_id, points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Caps the number of point pairs evaluated per class pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairSampling {
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

fn check_dims(clouds: &[ClassPointCloud]) -> Result<()> {
    let dim = clouds
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one point cloud".into()))?
        .dim();
    if clouds.iter().any(|c| c.dim() != dim) {
        return Err(Error::Shape("point clouds differ in dimension".into()));
    }
    Ok(())
}

/// Mean of `f(x, y)` over cross pairs (`same == false`) or distinct ordered
/// within-class pairs (`same == true`). `None` when no pair exists.
fn mean_over_pairs(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    same: bool,
    sampling: PairSampling,
    stream: u64,
    f: impl Fn(&[f64], &[f64]) -> f64,
) -> Option<f64> {
    let total = if same {
        xs.len() * xs.len().saturating_sub(1)
    } else {
        xs.len() * ys.len()
    };
    if total == 0 {
        return None;
    }
    match sampling.max_pairs {
        Some(cap) if cap > 0 && cap < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
            rng.set_stream(stream);
            let sum: f64 = (0..cap)
                .map(|_| {
                    let i = rng.random_range(0..xs.len());
                    let j = if same {
                        let j = rng.random_range(0..xs.len() - 1);
                        if j >= i {
                            j + 1
                        } else {
                            j
                        }
                    } else {
                        rng.random_range(0..ys.len())
                    };
                    f(&xs[i], &ys[j])
                })
                .sum();
            Some(sum / cap as f64)
        }
        _ => {
            let mut sum = 0.0;
            for (i, x) in xs.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    if !(same && i == j) {
                        sum += f(x, y);
                    }
                }
            }
            Some(sum / total as f64)
        }
    }
}

fn class_pair_matrix(
    clouds: &[ClassPointCloud],
    sampling: PairSampling,
    f: impl Fn(&[f64], &[f64]) -> f64 + Copy,
) -> Vec<Vec<Option<f64>>> {
    let k = clouds.len();
    (0..k)
        .map(|r| {
            (0..k)
                .map(|c| {
                    mean_over_pairs(
                        &clouds[r].points,
                        &clouds[c].points,
                        r == c,
                        sampling,
                        (r * k + c) as u64,
                        f,
                    )
                })
                .collect()
        })
        .collect()
}

/// Average categorical KL between softmax outputs of different classes
/// (inter) and between distinct samples of the same class (intra).
pub fn softmax_output_kl(clouds: &[ClassPointCloud], sampling: PairSampling) -> Result<PairwiseSummary> {
    check_dims(clouds)?;
    for cloud in clouds {
        for p in &cloud.points {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "class {} has a point that is not a probability vector (sum {sum})",
                    cloud.class_id
                )));
            }
        }
    }
    Ok(PairwiseSummary::from_parts(
        "softmax_output_kl",
        class_pair_matrix(clouds, sampling, categorical_kl),
    ))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Expected Euclidean distance over cross-class pairs (inter) and distinct
/// within-class pairs (intra). Single-point classes have no intra value.
pub fn energy_distances(clouds: &[ClassPointCloud], sampling: PairSampling) -> Result<PairwiseSummary> {
    check_dims(clouds)?;
    Ok(PairwiseSummary::from_parts(
        "energy_distance",
        class_pair_matrix(clouds, sampling, euclidean),
    ))
}

/// Which per-sample vectors to gather from a dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudSource {
    /// `softmax(W a + b)`.
    SoftmaxOutputs,
    /// The layer inputs `a`.
    Activations,
}

/// Groups a dump's samples into per-class clouds, skipping empty classes.
pub fn clouds_from_dump(dump: &ActivationDump, source: CloudSource) -> Result<Vec<ClassPointCloud>> {
    let mut grouped: Vec<Vec<Vec<f64>>> = vec![Vec::new(); dump.class_count()];
    for (s, &label) in dump.labels.iter().enumerate() {
        let a = dump.activation(s);
        let point = match source {
            CloudSource::Activations => a.to_vec(),
            CloudSource::SoftmaxOutputs => {
                let mut z = dump.weights.mul_vec(a)?;
                if let Some(b) = &dump.bias {
                    z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
                }
                softmax(&z)
            }
        };
        grouped[label].push(point);
    }
    grouped
        .into_iter()
        .enumerate()
        .filter(|(_, pts)| !pts.is_empty())
        .map(|(c, pts)| ClassPointCloud::new(c, pts))
        .collect()
}

/// Class-mean interaction matrices for every non-empty class.
///
/// `N` is linear in `a`, so the class mean of `N` is `W diag(mean a)`.
pub fn class_mean_interactions(dump: &ActivationDump) -> Result<Vec<(usize, DenseMatrix)>> {
    let n = dump.weights.cols();
    let mut sums = vec![vec![0.0; n]; dump.class_count()];
    let mut counts = vec![0usize; dump.class_count()];
    for (s, &label) in dump.labels.iter().enumerate() {
        for (acc, v) in sums[label].iter_mut().zip(dump.activation(s)) {
            *acc += v;
        }
        counts[label] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, count))| *count > 0)
        .map(|(c, (sum, count))| {
            let mean: Vec<f64> = sum.into_iter().map(|v| v / count as f64).collect();
            Ok((c, interaction_matrix(&dump.weights, &mean)?.n))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(class_id: usize, pts: &[&[f64]]) -> ClassPointCloud {
        ClassPointCloud::new(class_id, pts.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn identical_prototypes() {
        let p = DenseMatrix::from_rows(&[[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]]).unwrap();
        let s = prototype_interaction_kl(&[p.clone(), p]).unwrap();
        assert_eq!(s.inter(0, 1), Some(0.0));
        assert_eq!(s.inter_mean, Some(0.0));
    }

    #[test]
    fn saturated_prototype_has_zero_entropy() {
        let p = DenseMatrix::from_rows(&[[1000.0, 0.0, 0.0]]).unwrap();
        let s = prototype_interaction_kl(&[p.clone(), p]).unwrap();
        assert_eq!(s.inter(0, 1), Some(0.0));
        assert!(s.intra(0).unwrap().abs() < 1e-300);
    }

    #[test]
    fn softmaxed_rows_against_closed_form() {
        // KL(softmax(1,0) || softmax(0,1)) = tanh(1/2); entropy of softmax(1,0)
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let s = prototype_interaction_kl(&[a, b]).unwrap();
        let kl = 0.462_117_157_260_009_758_502_318_483_643_672_548_730_3;
        let h = 0.582_203_108_888_217_954_797_836_253_146_019_367_550_1;
        assert!((s.inter(0, 1).unwrap() - kl).abs() < 1e-15);
        assert!((s.inter(1, 0).unwrap() - kl).abs() < 1e-15);
        assert!((s.intra(0).unwrap() - h).abs() < 1e-15);
        assert!(prototype_interaction_kl(&[DenseMatrix::zeros(1, 2).unwrap(), DenseMatrix::zeros(2, 1).unwrap()]).is_err());
    }

    #[test]
    fn softmax_kl_fixtures() {
        let same = [cloud(0, &[&[0.2, 0.8], &[0.2, 0.8]]), cloud(1, &[&[0.2, 0.8]])];
        let s = softmax_output_kl(&same, PairSampling::default()).unwrap();
        assert_eq!(s.inter_mean, Some(0.0));
        assert_eq!(s.intra_mean, Some(0.0));
        assert_eq!(s.intra(1), None);

        let pair = [cloud(0, &[&[1.0, 0.0]]), cloud(1, &[&[0.5, 0.5]])];
        let s = softmax_output_kl(&pair, PairSampling::default()).unwrap();
        // ln 2 + 1e-12 ln(1e-12 / 0.5)
        assert!((s.inter(0, 1).unwrap() - 0.693_147_180_533_007_435_481_863_518_559_377_902_740_8).abs() < 1e-15);

        let single = [cloud(0, &[&[0.5, 0.5], &[0.3, 0.7]])];
        assert_eq!(softmax_output_kl(&single, PairSampling::default()).unwrap().inter_mean, None);

        let bad = [cloud(0, &[&[0.5, 0.6]])];
        assert!(softmax_output_kl(&bad, PairSampling::default()).is_err());
    }

    #[test]
    fn energy_fixtures() {
        let pair = [cloud(0, &[&[0.0, 0.0]]), cloud(1, &[&[3.0, 4.0]])];
        let s = energy_distances(&pair, PairSampling::default()).unwrap();
        assert_eq!(s.inter(0, 1), Some(5.0));
        assert_eq!(s.intra(0), None);
        assert_eq!(s.intra_mean, None);

        let same = [cloud(0, &[&[1.0, 1.0], &[1.0, 1.0]]), cloud(1, &[&[1.0, 1.0]])];
        let s = energy_distances(&same, PairSampling::default()).unwrap();
        assert_eq!(s.inter_mean, Some(0.0));
        assert_eq!(s.intra_mean, Some(0.0));

        let mixed = [cloud(0, &[&[1.0]]), cloud(1, &[&[1.0, 2.0]])];
        assert!(energy_distances(&mixed, PairSampling::default()).is_err());
        assert!(ClassPointCloud::new(0, vec![]).is_err());
    }

    #[test]
    fn subsampling_is_seeded() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i) as f64 * 0.01]).collect();
        let clouds = [
            ClassPointCloud::new(0, pts[..15].to_vec()).unwrap(),
            ClassPointCloud::new(1, pts[15..].to_vec()).unwrap(),
        ];
        let sampling = PairSampling {
            max_pairs: Some(40),
            seed: 7,
        };
        let a = energy_distances(&clouds, sampling).unwrap();
        let b = energy_distances(&clouds, sampling).unwrap();
        assert_eq!(a, b);
        let full = energy_distances(&clouds, PairSampling::default()).unwrap();
        assert!(a.inter(0, 1) != full.inter(0, 1));
        assert!((a.inter(0, 1).unwrap() - full.inter(0, 1).unwrap()).abs() < 0.3 * full.inter(0, 1).unwrap());
    }
}
