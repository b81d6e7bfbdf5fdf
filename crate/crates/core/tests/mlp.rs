use pathsig::mlp::{
    gen_blobs, gradient_check, shuffle_labels, softmax, train_sgd, Activation, BlobSpec, LabeledDataset, LayerSpec, Mlp,
    TrainConfig,
};
use pathsig::tensorio::DenseMatrix;
use pathsig::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn layer(rows: &[&[f64]], bias: &[f64], act: Activation) -> LayerSpec {
    LayerSpec::new(DenseMatrix::from_rows(rows).unwrap(), bias.to_vec(), act).unwrap()
}

#[test]
fn forward_examples() {
    let relu = Mlp::new(vec![layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Relu)]).unwrap();
    let out = relu.forward(&[1.0, -1.0]).unwrap();
    assert_eq!(out[0].pre_activation, [1.0, -1.0]);
    assert_eq!(out[0].post_activation, [1.0, 0.0]);

    let bias = Mlp::new(vec![layer(&[&[0.0]], &[3.0], Activation::Identity)]).unwrap();
    let out = bias.forward(&[7.0]).unwrap();
    assert_eq!(out[0].pre_activation, [3.0]);
    assert_eq!(out[0].post_activation, [3.0]);

    assert_eq!(softmax(&[0.0, 0.0]), [0.5, 0.5]);
}

#[test]
fn softmax_only_last_and_shapes_checked() {
    let soft = layer(&[&[1.0]], &[0.0], Activation::Softmax);
    let id = layer(&[&[1.0]], &[0.0], Activation::Identity);
    assert!(Mlp::new(vec![soft.clone(), id.clone()]).is_err());
    assert!(Mlp::new(vec![id.clone(), soft]).is_ok());
    assert!(LayerSpec::new(DenseMatrix::zeros(2, 2).unwrap(), vec![0.0], Activation::Relu).is_err());
    let net = Mlp::new(vec![id]).unwrap();
    assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
}

#[test]
fn single_step_matches_hand_gradient() {
    // one linear+softmax layer, one sample: dL/dW = (softmax(z) - onehot) x^T
    let w = [[0.2, -0.1, 0.4], [0.0, 0.3, -0.2]];
    let b = [0.1, -0.1];
    let x = [1.0, 2.0, -0.5];
    let net = Mlp::new(vec![layer(&[&w[0], &w[1]], &b, Activation::Softmax)]).unwrap();
    let data = LabeledDataset::new(DenseMatrix::from_rows(&[x]).unwrap(), vec![1], 2).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 1, lr0: 0.5, lr_decay_per_epoch: 1.0, seed: 0 };
    let (trained, _) = train_sgd(net, &data, &cfg).unwrap();

    let z: Vec<f64> = (0..2).map(|i| w[i].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b[i]).collect();
    let p = softmax(&z);
    let delta = [p[0], p[1] - 1.0];
    let got = &trained.layers()[0];
    for i in 0..2 {
        for j in 0..3 {
            let expected = w[i][j] - 0.5 * delta[i] * x[j];
            assert!((got.weights.get(i, j) - expected).abs() < 1e-15);
        }
        assert!((got.bias[i] - (b[i] - 0.5 * delta[i])).abs() < 1e-15);
    }
}

fn toy_inputs(samples: usize, dims: usize, classes: usize, seed: u64) -> (DenseMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..samples * dims).map(|_| rng.sample(StandardNormal)).collect();
    (DenseMatrix::new(samples, dims, v).unwrap(), (0..samples).map(|s| s % classes).collect())
}

#[test]
fn gradients_match_finite_differences_on_three_layer_net() {
    let net = Mlp::random_classifier(&[10, 16, 16, 4], Activation::Relu, 42).unwrap();
    assert!(net.parameter_count() >= 500);
    let (inputs, labels) = toy_inputs(6, 10, 4, 1);
    let idx: Vec<usize> = (0..6).collect();
    let check = gradient_check(&net, &inputs, &labels, &idx).unwrap();
    assert_eq!(check.parameters, net.parameter_count());
    assert!(check.max_relative_error <= 1e-5, "{check:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn gradients_match_for_random_nets(seed in 0u64..1000, hidden in prop_oneof![Just(Activation::Relu), Just(Activation::Identity)]) {
        let net = Mlp::random_classifier(&[5, 7, 6, 3], hidden, seed).unwrap();
        let (inputs, labels) = toy_inputs(4, 5, 3, seed + 1);
        let check = gradient_check(&net, &inputs, &labels, &[0, 1, 2, 3]).unwrap();
        prop_assert!(check.max_relative_error <= 1e-5, "{:?}", check);
    }

    #[test]
    fn softmax_is_a_positive_distribution(z in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn shuffle_preserves_label_multiset(labels in proptest::collection::vec(0usize..4, 1..40), seed in any::<u64>()) {
        let n = labels.len();
        let data = LabeledDataset::new(DenseMatrix::zeros(n, 1).unwrap(), labels.clone(), 4).unwrap();
        let shuffled = shuffle_labels(&data, seed);
        let (mut a, mut b) = (labels, shuffled.labels.clone());
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert_eq!(&shuffled.inputs, &data.inputs);
        prop_assert_eq!(shuffle_labels(&data, seed), shuffled);
    }
}

#[test]
fn shuffle_single_sample_is_identity() {
    let data = LabeledDataset::new(DenseMatrix::zeros(1, 2).unwrap(), vec![1], 3).unwrap();
    assert_eq!(shuffle_labels(&data, 7), data);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let net = Mlp::random_classifier(&[3, 4, 2], Activation::Relu, 5).unwrap();
    let (inputs, labels) = toy_inputs(10, 3, 2, 2);
    let data = LabeledDataset::new(inputs, labels, 2).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 4, lr0: 0.0, ..TrainConfig::default() };
    let (trained, trace) = train_sgd(net.clone(), &data, &cfg).unwrap();
    assert_eq!(trained, net);
    assert_eq!(trace.len(), 3);
}

#[test]
fn divergent_training_is_reported() {
    let net = Mlp::random_classifier(&[3, 4, 2], Activation::Relu, 5).unwrap();
    let (inputs, labels) = toy_inputs(10, 3, 2, 2);
    let data = LabeledDataset::new(inputs, labels, 2).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 2, lr0: 1e300, ..TrainConfig::default() };
    assert!(matches!(train_sgd(net, &data, &cfg), Err(Error::Training(_))));
}

#[test]
fn blob_examples() {
    let spec = BlobSpec::new(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], 3, 0.0, 4);
    let data = gen_blobs(&spec).unwrap();
    assert_eq!(data.labels, [0, 0, 0, 1, 1, 1]);
    assert_eq!(data.inputs.row(0), [1.0, 2.0]);
    assert_eq!(data.inputs.row(5), [-1.0, 0.5]);
    assert!(gen_blobs(&BlobSpec::new(vec![vec![0.0]], 1, -1.0, 0)).is_err());
}

#[test]
fn shifted_blobs_pair_with_base() {
    let means = BlobSpec::random_means(3, 4, 2.0, 1);
    let base = gen_blobs(&BlobSpec::new(means.clone(), 10, 0.7, 9)).unwrap();
    let delta = [0.5, -1.0, 2.0, 0.0];
    let shifted = gen_blobs(&BlobSpec::new(means, 10, 0.7, 9).with_shift(delta.to_vec())).unwrap();
    for s in 0..base.len() {
        for (j, d) in delta.iter().enumerate() {
            assert_eq!(shifted.inputs.get(s, j), base.inputs.get(s, j) + d);
        }
    }
}

fn blob_task() -> LabeledDataset {
    let means = BlobSpec::random_means(3, 8, 3.0, 21);
    gen_blobs(&BlobSpec::new(means, 200, 1.0, 22)).unwrap()
}

#[test]
fn true_labels_are_learned_and_shuffled_are_not() {
    let data = blob_task();
    let init = Mlp::random_classifier(&[8, 32, 3], Activation::Relu, 23).unwrap();
    let cfg = TrainConfig { epochs: 200, seed: 24, ..TrainConfig::default() };
    let (_, trace) = train_sgd(init.clone(), &data, &cfg).unwrap();
    let true_acc = trace.last().unwrap().accuracy;
    assert!(true_acc >= 0.95, "true-label accuracy {true_acc}");

    let shuffled = shuffle_labels(&data, 25);
    let (_, trace) = train_sgd(init, &shuffled, &cfg).unwrap();
    let shuffled_acc = trace.last().unwrap().accuracy;
    assert!(shuffled_acc < 0.60, "shuffled-label accuracy {shuffled_acc}");
}

#[test]
fn training_is_deterministic() {
    let data = blob_task();
    let init = Mlp::random_classifier(&[8, 32, 3], Activation::Relu, 1).unwrap();
    let cfg = TrainConfig { epochs: 5, seed: 2, ..TrainConfig::default() };
    let (a, ta) = train_sgd(init.clone(), &data, &cfg).unwrap();
    let (b, tb) = train_sgd(init, &data, &cfg).unwrap();
    let bits = |m: &Mlp| -> Vec<u64> {
        m.layers().iter().flat_map(|l| l.weights.values().iter().chain(&l.bias).map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ta, tb);
}
