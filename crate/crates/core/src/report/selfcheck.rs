use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ablations::{energy_distances, ClassPointCloud, PairSampling};
use crate::class_stats::{binary_entropy, BernoulliClassModel};
use crate::divergences::{bernoulli_kl, bernoulli_kl_scalar};
use crate::interactions::{interaction_matrix, significance_mask, SignificanceMask, ThresholdMode};
use crate::mlp::{gradient_check, Activation, Mlp};
use crate::sparsity::build_histogram;
use crate::tensorio::{npy, DenseMatrix, Dtype};

/// A 3x4 `<f8` array written by numpy's `np.save`.
pub const REFERENCE_NPY: &[u8] = include_bytes!("../../fixtures/reference_f8.npy");

/// Values stored in [`REFERENCE_NPY`]: `0.25 k - 1` for `k = 0..12`, with
/// entry (1, 2) replaced by pi.
fn reference_values() -> Vec<f64> {
    let mut v: Vec<f64> = (0..12).map(|k| k as f64 * 0.25 - 1.0).collect();
    v[6] = std::f64::consts::PI;
    v
}

// 0.5 ln 3 and H(0.75) to 40 digits, evaluated with mpmath.
const HALF_LN3: f64 = 0.549_306_144_334_054_845_697_622_618_461_262_852_3;
const ENTROPY_075: f64 = 0.562_335_144_618_808_350_288_030_315_224_458_857_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Outcome = Result<String, String>;

fn reference_fixture(bytes: &[u8]) -> Outcome {
    let array = npy::decode(bytes).map_err(|e| e.to_string())?;
    let matrix = array.into_matrix().map_err(|e| e.to_string())?;
    let expected = DenseMatrix::new(3, 4, reference_values()).expect("valid");
    if matrix.shape() != (3, 4) {
        return Err(format!("shape {:?}, expected (3, 4)", matrix.shape()));
    }
    if let Some(i) = (0..12).find(|&i| matrix.values()[i].to_bits() != expected.values()[i].to_bits()) {
        return Err(format!("value {i} is {}, expected {}", matrix.values()[i], expected.values()[i]));
    }
    if npy::encode_array(&expected, Dtype::F64) != bytes {
        return Err("re-encoding does not reproduce the fixture bytes".into());
    }
    Ok("decoded and re-encoded bit-exactly".into())
}

fn npy_roundtrip(rng: &mut ChaCha8Rng) -> Outcome {
    for dtype in [Dtype::F64, Dtype::F32] {
        for _ in 0..20 {
            let (r, c) = (rng.random_range(1..9), rng.random_range(1..9));
            let values: Vec<f64> = (0..r * c)
                .map(|_| {
                    let v: f64 = rng.sample::<f64, _>(StandardNormal) * 1e3;
                    if dtype == Dtype::F32 {
                        v as f32 as f64
                    } else {
                        v
                    }
                })
                .collect();
            let m = DenseMatrix::new(r, c, values).expect("finite");
            let back = npy::decode(&npy::encode_array(&m, dtype))
                .and_then(|a| a.into_matrix())
                .map_err(|e| e.to_string())?;
            if back.shape() != m.shape() || back.values().iter().zip(m.values()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("{r}x{c} {dtype:?} array changed on round trip"));
            }
        }
    }
    Ok("40 arrays round-tripped".into())
}

fn kl_closed_form() -> Outcome {
    let kl = bernoulli_kl_scalar(0.75, 0.25).map_err(|e| e.to_string())?;
    let err = (kl - HALF_LN3).abs();
    if err <= 1e-12 {
        Ok(format!("|error| = {err:e}"))
    } else {
        Err(format!("KL = {kl}, expected {HALF_LN3}"))
    }
}

fn entropy_closed_form() -> Outcome {
    let h = binary_entropy(0.75);
    let err = (h - ENTROPY_075).abs();
    if err <= 1e-12 {
        Ok(format!("|error| = {err:e}"))
    } else {
        Err(format!("H(0.75) = {h}, expected {ENTROPY_075}"))
    }
}

fn random_model(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> BernoulliClassModel {
    let n = rng.random_range(1..50u64);
    let counts = (0..rows * cols).map(|_| rng.random_range(0..=n)).collect();
    BernoulliClassModel::from_counts(None, rows, cols, counts, n).expect("consistent")
}

fn kl_axioms(rng: &mut ChaCha8Rng) -> Outcome {
    for i in 0..200 {
        let (r, c) = (rng.random_range(1..17), rng.random_range(1..17));
        let p = random_model(rng, r, c).finalize(0.5).map_err(|e| e.to_string())?;
        let q = random_model(rng, r, c).finalize(0.5).map_err(|e| e.to_string())?;
        let pq = bernoulli_kl(&p, &q).map_err(|e| e.to_string())?;
        let pp = bernoulli_kl(&p, &p).map_err(|e| e.to_string())?;
        if pq < 0.0 || pp.abs() > 1e-12 {
            return Err(format!("pair {i}: KL(p,q) = {pq}, KL(p,p) = {pp}"));
        }
    }
    Ok("200 pairs non-negative with zero self-divergence".into())
}

fn literal_fixture() -> Outcome {
    let w = DenseMatrix::from_rows(&[[1.0, -1.0], [2.0, 0.0]]).expect("valid");
    let n = interaction_matrix(&w, &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let s = significance_mask(&n, ThresholdMode::Literal);
    if s.bits() == [true, true, false, false] {
        Ok("S = [[1,1],[0,0]]".into())
    } else {
        Err(format!("S = {:?}", s.bits()))
    }
}

fn streaming_equals_batch(rng: &mut ChaCha8Rng) -> Outcome {
    let (rows, cols) = (4, 6);
    let masks: Vec<SignificanceMask> = (0..100)
        .map(|_| {
            let bits = (0..rows * cols).map(|_| rng.random_bool(0.5)).collect();
            SignificanceMask::from_bits(rows, cols, bits, ThresholdMode::Literal).expect("shape")
        })
        .collect();
    let mut sequential = BernoulliClassModel::new(Some(0), rows, cols);
    for m in &masks {
        sequential.accumulate(m).map_err(|e| e.to_string())?;
    }
    for parts in [1, 2, 4, 8] {
        let size = masks.len().div_ceil(parts);
        let mut merged = BernoulliClassModel::new(Some(0), rows, cols);
        for chunk in masks.chunks(size) {
            let mut part = BernoulliClassModel::new(Some(0), rows, cols);
            for m in chunk {
                part.accumulate(m).map_err(|e| e.to_string())?;
            }
            merged = merged.merge(&part).map_err(|e| e.to_string())?;
        }
        if merged != sequential {
            return Err(format!("{parts} partitions disagree with sequential accumulation"));
        }
    }
    Ok("1, 2, 4 and 8 partitions match".into())
}

fn gradients(rng: &mut ChaCha8Rng) -> Outcome {
    let net = Mlp::random_classifier(&[10, 16, 16, 4], Activation::Relu, 3).map_err(|e| e.to_string())?;
    let samples = 8;
    let values: Vec<f64> = (0..samples * 10).map(|_| rng.sample(StandardNormal)).collect();
    let inputs = DenseMatrix::new(samples, 10, values).expect("finite");
    let labels: Vec<usize> = (0..samples).map(|s| s % 4).collect();
    let idx: Vec<usize> = (0..samples).collect();
    let check = gradient_check(&net, &inputs, &labels, &idx).map_err(|e| e.to_string())?;
    if check.max_relative_error <= 1e-5 {
        Ok(format!(
            "{} parameters, max relative error {:e}",
            check.parameters, check.max_relative_error
        ))
    } else {
        Err(format!(
            "parameter {} has relative error {:e}",
            check.worst_parameter, check.max_relative_error
        ))
    }
}

fn energy_oracle() -> Outcome {
    let clouds = [
        ClassPointCloud::new(0, vec![vec![0.0, 0.0]]).expect("valid"),
        ClassPointCloud::new(1, vec![vec![3.0, 4.0]]).expect("valid"),
    ];
    let summary = energy_distances(&clouds, PairSampling::default()).map_err(|e| e.to_string())?;
    match summary.inter(0, 1) {
        Some(5.0) => Ok("inter((0,0), (3,4)) = 5".into()),
        other => Err(format!("inter = {other:?}, expected 5")),
    }
}

fn histogram_conservation(rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..20 {
        let freqs: Vec<f64> = (0..rng.random_range(1..200)).map(|_| rng.random_range(0.0..=1.0)).collect();
        for bins in [1, 10, 50] {
            let h = build_histogram(&freqs, bins).map_err(|e| e.to_string())?;
            if h.counts.iter().sum::<u64>() != freqs.len() as u64 {
                return Err(format!("{bins} bins lost paths"));
            }
        }
    }
    Ok("counts sum to the path count".into())
}

/// Runs the bundled oracle suite. `fixture` replaces the reference `.npy`
/// bytes (the default is [`REFERENCE_NPY`]).
pub fn cmd_selfcheck(fixture: Option<&[u8]>) -> SelfcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let outcomes: Vec<(&str, Outcome)> = vec![
        ("npy_reference_fixture", reference_fixture(fixture.unwrap_or(REFERENCE_NPY))),
        ("npy_roundtrip", npy_roundtrip(&mut rng)),
        ("kl_closed_form", kl_closed_form()),
        ("kl_axioms", kl_axioms(&mut rng)),
        ("entropy_closed_form", entropy_closed_form()),
        ("literal_threshold_fixture", literal_fixture()),
        ("streaming_equals_batch", streaming_equals_batch(&mut rng)),
        ("gradient_check", gradients(&mut rng)),
        ("energy_distance_oracle", energy_oracle()),
        ("histogram_conservation", histogram_conservation(&mut rng)),
    ];
    SelfcheckReport {
        checks: outcomes
            .into_iter()
            .map(|(name, outcome)| {
                let (passed, detail) = match outcome {
                    Ok(d) => (true, d),
                    Err(d) => (false, d),
                };
                CheckResult {
                    name: name.to_string(),
                    passed,
                    detail,
                }
            })
            .collect(),
    }
}
