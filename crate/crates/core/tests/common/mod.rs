#![allow(dead_code)]

use pathsig::tensorio::{ActivationDump, DenseMatrix, Dtype, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn manifest(classes: &[&str], samples: usize) -> Manifest {
    Manifest {
        model_id: "toy".into(),
        layer_id: "fc".into(),
        weight_file: "weights.npy".into(),
        bias_file: Some("bias.npy".into()),
        activation_file: "activations.npy".into(),
        label_file: "labels.npy".into(),
        class_names: classes.iter().map(|s| s.to_string()).collect(),
        dtype: Dtype::F64,
        sample_count: samples,
    }
}

/// Random `m x n` layer with ReLU-like (non-negative) inputs whose mean
/// depends on the class, so classes use different paths.
pub fn toy_dump(classes: usize, per_class: usize, m: usize, n: usize, seed: u64) -> ActivationDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    let bias: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let mut acts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            for j in 0..n {
                let centre = if j % classes == c { 2.0 } else { 0.3 };
                let v: f64 = centre + 0.5 * rng.sample::<f64, _>(StandardNormal);
                acts.push(v.max(0.0));
            }
            labels.push(c);
        }
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = classes * per_class;
    ActivationDump::new(
        manifest(&refs, samples),
        DenseMatrix::new(m, n, w).unwrap(),
        Some(bias),
        DenseMatrix::new(samples, n, acts).unwrap(),
        labels,
    )
    .unwrap()
}
