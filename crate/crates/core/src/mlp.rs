//! A small dense feed-forward network with a cross-entropy SGD trainer, plus
//! the synthetic datasets used for self-contained experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ActivationDump, DenseMatrix, Dtype, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => z.to_vec(),
            Activation::Softmax => softmax(z),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(z: &[f64], index: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z[index] - lse
}

/// One dense layer: `a = f(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("bias must be finite".into()));
        }
        Ok(LayerSpec {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Values recorded for one layer during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub pre_activation: Vec<f64>,
    pub post_activation: Vec<f64>,
}

/// Per-parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
}

impl Mlp {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::InvalidArgument(
                "softmax is only allowed on the final layer".into(),
            ));
        }
        Ok(Mlp { layers })
    }

    /// Builds a classifier with layer widths `sizes` (input first): `hidden`
    /// activations between and softmax on the output.
    ///
    /// Weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at zero.
    pub fn random_classifier(sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need at least input and output widths, all positive; got {sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let activation = if i + 2 == sizes.len() {
                    Activation::Softmax
                } else {
                    hidden
                };
                LayerSpec::new(DenseMatrix::new(fan_out, fan_in, values)?, vec![0.0; fan_out], activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Runs the network, returning `(z, f(z))` for every layer.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<LayerOutput>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, model expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut outputs: Vec<LayerOutput> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = outputs.last().map_or(input, |o| o.post_activation.as_slice());
            let mut z = layer.weights.mul_vec(prev)?;
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let a = layer.activation.apply(&z);
            outputs.push(LayerOutput {
                pre_activation: z,
                post_activation: a,
            });
        }
        Ok(outputs)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.pop().expect("non-empty").post_activation)
    }

    /// The input seen by layer `layer` (the previous layer's output).
    pub fn layer_input(&self, layer: usize, input: &[f64]) -> Result<Vec<f64>> {
        if layer >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("no layer {layer}")));
        }
        if layer == 0 {
            return Ok(input.to_vec());
        }
        let mut outputs = self.forward(input)?;
        outputs.truncate(layer);
        Ok(outputs.pop().expect("layer > 0").post_activation)
    }

    fn require_softmax_output(&self) -> Result<()> {
        if self.layers[self.layers.len() - 1].activation != Activation::Softmax {
            return Err(Error::InvalidArgument(
                "cross-entropy training needs a softmax output layer".into(),
            ));
        }
        Ok(())
    }

    /// Mean cross-entropy over the given samples.
    pub fn loss(&self, inputs: &DenseMatrix, labels: &[usize], samples: &[usize]) -> Result<f64> {
        self.require_softmax_output()?;
        let mut total = 0.0;
        for &s in samples {
            let outputs = self.forward(inputs.row(s))?;
            let z = &outputs.last().expect("non-empty").pre_activation;
            total -= log_softmax_at(z, labels[s]);
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean cross-entropy and its gradient over the given samples.
    pub fn loss_and_gradients(
        &self,
        inputs: &DenseMatrix,
        labels: &[usize],
        samples: &[usize],
    ) -> Result<(f64, Gradients)> {
        self.require_softmax_output()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let mut total = 0.0;
        for &s in samples {
            let input = inputs.row(s);
            let label = labels[s];
            if label >= self.output_dim() {
                return Err(Error::LabelOutOfRange {
                    sample: s,
                    label,
                    classes: self.output_dim(),
                });
            }
            let outputs = self.forward(input)?;
            let last = outputs.last().expect("non-empty");
            total -= log_softmax_at(&last.pre_activation, label);

            // dL/dz for softmax + cross-entropy
            let mut delta = last.post_activation.clone();
            delta[label] -= 1.0;

            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let prev = if l == 0 {
                    input
                } else {
                    outputs[l - 1].post_activation.as_slice()
                };
                let n = layer.inputs();
                for (i, &d) in delta.iter().enumerate() {
                    grads.bias[l][i] += d;
                    let row = &mut grads.weights[l][i * n..(i + 1) * n];
                    for (g, &a) in row.iter_mut().zip(prev) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let below = &self.layers[l - 1];
                let z_below = &outputs[l - 1].pre_activation;
                let mut next = vec![0.0; n];
                for (i, &d) in delta.iter().enumerate() {
                    for (acc, &w) in next.iter_mut().zip(layer.weights.row(i)) {
                        *acc += w * d;
                    }
                }
                for (g, &z) in next.iter_mut().zip(z_below) {
                    *g *= match below.activation {
                        Activation::Relu => {
                            if z > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Identity => 1.0,
                        Activation::Softmax => unreachable!("softmax only on the output layer"),
                    };
                }
                delta = next;
            }
        }
        let scale = 1.0 / samples.len() as f64;
        for g in grads.weights.iter_mut().chain(grads.bias.iter_mut()) {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((total * scale, grads))
    }

    fn apply_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.values_mut().iter_mut().zip(&grads.weights[l]) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                *b -= lr * g;
            }
            if layer.weights.values().iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("layer {l} parameters became non-finite")));
            }
        }
        Ok(())
    }

    /// Mutable flat view over every parameter, in layer order (weights then bias).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.values_mut().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn accuracy(&self, dataset: &LabeledDataset) -> Result<f64> {
        let mut correct = 0usize;
        for (s, &label) in dataset.labels.iter().enumerate() {
            let probs = self.predict(dataset.inputs.row(s))?;
            if argmax(&probs) == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Packages layer `layer` and its inputs over `dataset` as an analyzable dump.
    pub fn export_layer(
        &self,
        layer: usize,
        dataset: &LabeledDataset,
        class_names: Vec<String>,
        model_id: &str,
        layer_id: &str,
        dtype: Dtype,
    ) -> Result<ActivationDump> {
        let spec = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {layer}")))?;
        let rows = (0..dataset.len())
            .map(|s| self.layer_input(layer, dataset.inputs.row(s)))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            model_id: model_id.to_string(),
            layer_id: layer_id.to_string(),
            weight_file: "weights.npy".into(),
            bias_file: Some("bias.npy".into()),
            activation_file: "activations.npy".into(),
            label_file: "labels.npy".into(),
            class_names,
            dtype,
            sample_count: dataset.len(),
        };
        ActivationDump::new(
            manifest,
            spec.weights.clone(),
            Some(spec.bias.clone()),
            DenseMatrix::from_rows(&rows)?,
            dataset.labels.clone(),
        )
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Input samples with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.rows()
            )));
        }
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                sample,
                label,
                classes: num_classes,
            });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Returns a copy of `dataset` whose labels are a seeded uniform permutation
/// of the originals.
pub fn shuffle_labels(dataset: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = dataset.labels.clone();
    labels.shuffle(&mut rng);
    LabeledDataset {
        inputs: dataset.inputs.clone(),
        labels,
        num_classes: dataset.num_classes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_per_epoch: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 32,
            lr0: 0.01,
            lr_decay_per_epoch: 0.95,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, samples: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if self.batch_size > samples {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} exceeds {samples} samples",
                self.batch_size
            )));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid lr0 {}", self.lr0)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_decay_per_epoch {} outside (0, 1]",
                self.lr_decay_per_epoch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mini-batch SGD on mean cross-entropy with `lr = lr0 * decay^epoch`.
///
/// Batches are drawn from a fresh seeded permutation every epoch; the
/// returned trace holds full-dataset loss and accuracy after each epoch.
pub fn train_sgd(
    mut model: Mlp,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<EpochStats>)> {
    model.require_softmax_output()?;
    cfg.validate(dataset.len())?;
    if model.output_dim() != dataset.num_classes {
        return Err(Error::Shape(format!(
            "model emits {} classes, dataset has {}",
            model.output_dim(),
            dataset.num_classes
        )));
    }
    if model.input_dim() != dataset.inputs.cols() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, dataset has {}",
            model.input_dim(),
            dataset.inputs.cols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let all = order.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay_per_epoch.powi(epoch as i32);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.loss_and_gradients(&dataset.inputs, &dataset.labels, batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            model.apply_step(&grads, lr)?;
        }
        let loss = model.loss(&dataset.inputs, &dataset.labels, &all)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss after epoch {epoch}")));
        }
        trace.push(EpochStats {
            epoch,
            lr,
            loss,
            accuracy: model.accuracy(dataset)?,
        });
    }
    Ok((model, trace))
}

/// Worst disagreement between analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub parameters: usize,
    pub max_relative_error: f64,
    /// Flat index (weights then bias, layer by layer) of the worst parameter.
    pub worst_parameter: usize,
}

/// Relative errors below this denominator are measured absolutely.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;

/// Compares backprop against central differences with
/// `h = 1e-5 max(1, |theta|)` for every parameter.
pub fn gradient_check(
    model: &Mlp,
    inputs: &DenseMatrix,
    labels: &[usize],
    samples: &[usize],
) -> Result<GradientCheck> {
    let (_, grads) = model.loss_and_gradients(inputs, labels, samples)?;
    let analytic: Vec<f64> = grads
        .weights
        .iter()
        .zip(&grads.bias)
        .flat_map(|(w, b)| w.iter().chain(b).copied())
        .collect();
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    for (idx, &a) in analytic.iter().enumerate() {
        let theta = *probe.parameters_mut().nth(idx).expect("index within parameter count");
        let h = 1e-5 * theta.abs().max(1.0);
        *probe.parameters_mut().nth(idx).expect("in range") = theta + h;
        let up = probe.loss(inputs, labels, samples)?;
        *probe.parameters_mut().nth(idx).expect("in range") = theta - h;
        let down = probe.loss(inputs, labels, samples)?;
        *probe.parameters_mut().nth(idx).expect("in range") = theta;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        if rel > worst.0 || !rel.is_finite() {
            worst = (rel, idx);
        }
    }
    Ok(GradientCheck {
        parameters: analytic.len(),
        max_relative_error: worst.0,
        worst_parameter: worst.1,
    })
}

/// Gaussian class blobs, optionally shifted or with inflated noise to build
/// an out-of-distribution copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub means: Vec<Vec<f64>>,
    pub per_class: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Added to every sample after noise.
    #[serde(default)]
    pub shift: Option<Vec<f64>>,
    /// Multiplies `sigma`.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl BlobSpec {
    pub fn new(means: Vec<Vec<f64>>, per_class: usize, sigma: f64, seed: u64) -> Self {
        BlobSpec {
            means,
            per_class,
            sigma,
            seed,
            shift: None,
            noise_scale: 1.0,
        }
    }

    /// `K` means of dimension `d` drawn from `N(0, scale^2)` with their own seed.
    pub fn random_means(classes: usize, dims: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..classes)
            .map(|_| {
                (0..dims)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    pub fn with_shift(mut self, shift: Vec<f64>) -> Self {
        self.shift = Some(shift);
        self
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }
}

/// Samples `per_class` points around each mean, class by class.
///
/// With matching seeds, a shifted spec yields exactly the base samples plus
/// the shift.
pub fn gen_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    if spec.sigma < 0.0 || !spec.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma {} must be >= 0", spec.sigma)));
    }
    if spec.noise_scale < 0.0 || !spec.noise_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_scale {} must be >= 0",
            spec.noise_scale
        )));
    }
    let classes = spec.means.len();
    let dims = spec.means.first().map_or(0, Vec::len);
    if classes == 0 || dims == 0 || spec.per_class == 0 {
        return Err(Error::InvalidArgument(
            "need at least one class, dimension and sample".into(),
        ));
    }
    if spec.means.iter().any(|m| m.len() != dims) {
        return Err(Error::Shape("class means differ in dimension".into()));
    }
    if let Some(shift) = &spec.shift {
        if shift.len() != dims {
            return Err(Error::Shape(format!(
                "shift has length {}, means have {dims}",
                shift.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.sigma * spec.noise_scale;
    let mut values = Vec::with_capacity(classes * spec.per_class * dims);
    let mut labels = Vec::with_capacity(classes * spec.per_class);
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for (k, &mu) in mean.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let mut x = mu + noise * z;
                if let Some(shift) = &spec.shift {
                    x += shift[k];
                }
                values.push(x);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        DenseMatrix::new(classes * spec.per_class, dims, values)?,
        labels,
        classes,
    )
}
