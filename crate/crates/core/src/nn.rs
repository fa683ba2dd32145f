//! A small feedforward network with per-layer output taps.
//!
//! The same type serves as the audited target model and as the shadow model.
//! Layer index 0 is the input itself; index `l` in `1..=L` is the
//! post-activation output of the `l`-th dense layer, so the last index is the
//! model output (softmax probabilities for classifiers).

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    SoftmaxClassifier,
    LinearRegressor,
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Units per layer, input first and output last.
    pub layer_sizes: Vec<usize>,
    /// One activation per hidden layer (`layer_sizes.len() - 2` entries).
    pub activations: Vec<Activation>,
    pub output_kind: OutputKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// A classifier with the same activation on every hidden layer and
    /// conservative default hyperparameters.
    pub fn classifier(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        let hidden = layer_sizes.len().saturating_sub(2);
        ModelConfig {
            layer_sizes,
            activations: vec![activation; hidden],
            output_kind: OutputKind::SoftmaxClassifier,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }

    pub fn regressor(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        ModelConfig {
            output_kind: OutputKind::LinearRegressor,
            ..Self::classifier(layer_sizes, activation)
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes.first().copied().unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.layer_sizes.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_architecture()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return config(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return config("epochs must be >= 1");
        }
        Ok(())
    }

    /// Checks everything that constrains the stored weights, but not the
    /// optimizer schedule.
    pub(crate) fn validate_architecture(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return config("layer_sizes needs at least an input and an output layer");
        }
        if self.layer_sizes.contains(&0) {
            return config("layer sizes must be positive");
        }
        if self.activations.len() != self.layer_sizes.len() - 2 {
            return config(format!(
                "expected {} hidden activations, got {}",
                self.layer_sizes.len() - 2,
                self.activations.len()
            ));
        }
        match self.output_kind {
            OutputKind::SoftmaxClassifier if self.output_width() < 2 => {
                return config("a softmax classifier needs at least 2 output units")
            }
            OutputKind::LinearRegressor if self.output_width() != 1 => {
                return config("a linear regressor has exactly 1 output unit")
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return config("batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Weights of one dense layer; `weights` is `fan_in x fan_out`, so a layer
/// computes `x · W + b` for row-vector samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "base")]
pub enum Provenance {
    Scratch,
    /// Initialized from the model with this id and trained further.
    IncrementalFrom(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerType {
    Input,
    Dense,
    Activation,
    Output,
}

/// One referenced layer's outputs for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAccessMatrix {
    pub layer_index: usize,
    pub layer_depth: usize,
    pub param_count: usize,
    pub layer_type: LayerType,
    /// `num_samples x layer_width`.
    pub values: Array2<f64>,
}

/// Inputs and labels for supervised training. Labels are class indices
/// (stored as `f64`) for classifiers and real targets for regressors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
}

impl LabeledData {
    pub fn new(inputs: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return config(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            ));
        }
        Ok(LabeledData { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Optimizer settings that may be changed when continuing training.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
}

/// A trained (or freshly initialized) network.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteBoxModel {
    config: ModelConfig,
    layers: Vec<DenseLayer>,
    trained_epochs: usize,
    provenance: Provenance,
}

impl WhiteBoxModel {
    /// Random initialization, uniform in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate_architecture()?;
        let mut rng = seed::rng(seed::derive(config.seed, "init"));
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(WhiteBoxModel {
            config,
            layers,
            trained_epochs: 0,
            provenance: Provenance::Scratch,
        })
    }

    /// Assemble a model from explicit weights; shapes must agree with the config.
    pub fn from_parts(
        config: ModelConfig,
        layers: Vec<DenseLayer>,
        trained_epochs: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        config.validate_architecture()?;
        if layers.len() != config.num_layers() {
            return crate::error::config(format!(
                "config describes {} layers, got {}",
                config.num_layers(),
                layers.len()
            ));
        }
        for (i, (layer, w)) in layers.iter().zip(config.layer_sizes.windows(2)).enumerate() {
            if layer.weights.dim() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return crate::error::config(format!(
                    "layer {} has weights {:?} and bias {}, expected ({}, {}) and {}",
                    i + 1,
                    layer.weights.dim(),
                    layer.bias.len(),
                    w[0],
                    w[1],
                    w[1]
                ));
            }
        }
        Ok(WhiteBoxModel {
            config,
            layers,
            trained_epochs,
            provenance,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.config.input_width()
    }

    /// Width of the output at `layer_index` (0 is the input).
    pub fn layer_width(&self, layer_index: usize) -> Option<usize> {
        self.config.layer_sizes.get(layer_index).copied()
    }

    /// Content hash of the model (config, provenance, counters and weights).
    pub fn model_id(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = crate::checkpoint::save(self);
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Metadata for a layer without running the network.
    pub fn layer_info(&self, layer_index: usize) -> Result<(usize, LayerType)> {
        let max = self.num_layers();
        if layer_index > max {
            return Err(Error::Access {
                index: layer_index,
                max,
            });
        }
        if layer_index == 0 {
            return Ok((0, LayerType::Input));
        }
        let ty = if layer_index == max {
            LayerType::Output
        } else if self.config.activations[layer_index - 1] == Activation::Identity {
            LayerType::Dense
        } else {
            LayerType::Activation
        };
        Ok((self.layers[layer_index - 1].param_count(), ty))
    }

    /// h_i(f, X): outputs of layer `layer_index` for every row of `inputs`.
    pub fn layer_access(
        &self,
        layer_index: usize,
        inputs: ArrayView2<'_, f64>,
    ) -> Result<LayerAccessMatrix> {
        let (param_count, layer_type) = self.layer_info(layer_index)?;
        self.check_width(inputs.ncols())?;
        let mut a = inputs.to_owned();
        for l in 1..=layer_index {
            a = self.layer_forward(l, &a);
        }
        Ok(LayerAccessMatrix {
            layer_index,
            layer_depth: layer_index,
            param_count,
            layer_type,
            values: a,
        })
    }

    /// Final-layer outputs.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.layer_access(self.num_layers(), inputs)?.values)
    }

    /// Fraction of rows whose argmax output equals the label (classifiers only).
    pub fn accuracy(&self, data: &LabeledData) -> Result<f64> {
        if self.config.output_kind != OutputKind::SoftmaxClassifier {
            return config("accuracy is defined for classifiers only");
        }
        if data.is_empty() {
            return crate::error::input("accuracy over an empty dataset");
        }
        let out = self.predict(data.inputs.view())?;
        let correct = out
            .outer_iter()
            .zip(&data.labels)
            .filter(|(row, &y)| argmax(row.iter().copied()) == y as usize)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean training loss over `data`, including the weight-decay penalty
    /// `0.5 * weight_decay * Σ‖W‖²`.
    pub fn loss(&self, data: &LabeledData) -> Result<f64> {
        self.check_data(data)?;
        let out = self.predict(data.inputs.view())?;
        Ok(self.data_loss(&out, &data.labels) + self.decay_penalty(self.config.weight_decay))
    }

    /// Analytic gradient of [`loss`](Self::loss) with respect to every layer's parameters.
    pub fn gradients(&self, data: &LabeledData) -> Result<Vec<DenseLayer>> {
        self.check_data(data)?;
        let (grads, _) = self.backprop(data.inputs.view(), &data.labels, self.config.weight_decay);
        Ok(grads)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return config(format!(
                "input width {} does not match model input width {}",
                width,
                self.input_width()
            ));
        }
        Ok(())
    }

    fn check_data(&self, data: &LabeledData) -> Result<()> {
        self.check_width(data.inputs.ncols())?;
        if data.inputs.nrows() != data.labels.len() {
            return config("input rows and labels differ in length");
        }
        if data.is_empty() {
            return config("training data is empty");
        }
        match self.config.output_kind {
            OutputKind::SoftmaxClassifier => {
                let classes = self.config.output_width();
                if let Some(bad) = data
                    .labels
                    .iter()
                    .find(|&&y| !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes))
                {
                    return config(format!(
                        "label {bad} is not a class index in 0..{classes}"
                    ));
                }
            }
            OutputKind::LinearRegressor => {
                if data.labels.iter().any(|y| !y.is_finite()) {
                    return config("regression labels must be finite");
                }
            }
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, input: &Array2<f64>) -> Array2<f64> {
        let layer = &self.layers[l - 1];
        let mut z = input.dot(&layer.weights) + &layer.bias;
        if l == self.num_layers() {
            if self.config.output_kind == OutputKind::SoftmaxClassifier {
                softmax_rows(&mut z);
            }
        } else {
            self.config.activations[l - 1].apply(&mut z);
        }
        z
    }

    fn data_loss(&self, out: &Array2<f64>, labels: &[f64]) -> f64 {
        let n = labels.len() as f64;
        match self.config.output_kind {
            OutputKind::SoftmaxClassifier => {
                out.outer_iter()
                    .zip(labels)
                    .map(|(row, &y)| -row[y as usize].max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>()
                    / n
            }
            OutputKind::LinearRegressor => {
                out.column(0)
                    .iter()
                    .zip(labels)
                    .map(|(p, y)| (p - y).powi(2))
                    .sum::<f64>()
                    / n
            }
        }
    }

    fn decay_penalty(&self, weight_decay: f64) -> f64 {
        if weight_decay == 0.0 {
            return 0.0;
        }
        0.5 * weight_decay
            * self
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
                .sum::<f64>()
    }

    /// Returns per-layer gradients and the batch data loss.
    fn backprop(
        &self,
        inputs: ArrayView2<'_, f64>,
        labels: &[f64],
        weight_decay: f64,
    ) -> (Vec<DenseLayer>, f64) {
        let n = labels.len() as f64;
        let big_l = self.num_layers();
        let mut acts = Vec::with_capacity(big_l + 1);
        acts.push(inputs.to_owned());
        for l in 1..=big_l {
            let next = self.layer_forward(l, &acts[l - 1]);
            acts.push(next);
        }
        let out = &acts[big_l];
        let batch_loss = self.data_loss(out, labels);

        // dLoss/dZ at the output layer.
        let mut delta = out.clone();
        match self.config.output_kind {
            OutputKind::SoftmaxClassifier => {
                for (mut row, &y) in delta.outer_iter_mut().zip(labels) {
                    row[y as usize] -= 1.0;
                }
                delta /= n;
            }
            OutputKind::LinearRegressor => {
                for (mut row, &y) in delta.outer_iter_mut().zip(labels) {
                    row[0] = 2.0 * (row[0] - y) / n;
                }
            }
        }

        let mut grads = Vec::with_capacity(big_l);
        for l in (1..=big_l).rev() {
            let layer = &self.layers[l - 1];
            let mut gw = acts[l - 1].t().dot(&delta);
            if weight_decay != 0.0 {
                gw.scaled_add(weight_decay, &layer.weights);
            }
            let gb = delta.sum_axis(Axis(0));
            if l > 1 {
                let mut prev = delta.dot(&layer.weights.t());
                let act = self.config.activations[l - 2];
                Zip::from(&mut prev)
                    .and(&acts[l - 1])
                    .for_each(|d, &a| *d *= act.derivative_from_output(a));
                delta = prev;
            }
            grads.push(DenseLayer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (grads, batch_loss)
    }

    /// Minibatch SGD for `epochs` epochs, continuing the epoch counter.
    fn fit(
        &mut self,
        data: &LabeledData,
        epochs: usize,
        learning_rate: f64,
        weight_decay: f64,
        batch_size: usize,
    ) -> Result<()> {
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            let epoch = self.trained_epochs + 1;
            let mut rng = seed::rng(seed::derive(self.config.seed, &format!("epoch-{epoch}")));
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(batch_size) {
                let x = data.inputs.select(Axis(0), chunk);
                let y: Vec<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
                let (grads, batch_loss) = self.backprop(x.view(), &y, weight_decay);
                loss_sum += batch_loss * chunk.len() as f64;
                for (layer, g) in self.layers.iter_mut().zip(&grads) {
                    layer.weights.scaled_add(-learning_rate, &g.weights);
                    layer.bias.scaled_add(-learning_rate, &g.bias);
                }
            }
            let epoch_loss = loss_sum / n as f64 + self.decay_penalty(weight_decay);
            let params_finite = self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
            if !epoch_loss.is_finite() || !params_finite {
                return Err(Error::Divergence {
                    epoch,
                    loss: epoch_loss,
                });
            }
            self.trained_epochs = epoch;
        }
        Ok(())
    }
}

/// Train a fresh model from the config's seed.
pub fn train(config: &ModelConfig, data: &LabeledData) -> Result<WhiteBoxModel> {
    config.validate()?;
    let mut model = WhiteBoxModel::init(config.clone())?;
    model.check_data(data)?;
    model.fit(
        data,
        config.epochs,
        config.learning_rate,
        config.weight_decay,
        config.batch_size,
    )?;
    Ok(model)
}

/// Continue training a copy of `base` for exactly `epochs` epochs.
pub fn incremental_train(
    base: &WhiteBoxModel,
    data: &LabeledData,
    epochs: usize,
) -> Result<WhiteBoxModel> {
    incremental_train_with(base, data, epochs, &TrainOverrides::default())
}

/// [`incremental_train`] with optimizer overrides. A learning rate of 0 is
/// accepted here and leaves the weights unchanged.
pub fn incremental_train_with(
    base: &WhiteBoxModel,
    data: &LabeledData,
    epochs: usize,
    overrides: &TrainOverrides,
) -> Result<WhiteBoxModel> {
    if epochs == 0 {
        return config("incremental training needs epochs >= 1");
    }
    if base.trained_epochs == 0 {
        return config("incremental training needs a trained base model");
    }
    let lr = overrides.learning_rate.unwrap_or(base.config.learning_rate);
    let wd = overrides.weight_decay.unwrap_or(base.config.weight_decay);
    let bs = overrides.batch_size.unwrap_or(base.config.batch_size);
    if !(lr >= 0.0 && lr.is_finite()) {
        return config(format!("learning_rate override must be >= 0, got {lr}"));
    }
    if !(wd >= 0.0 && wd.is_finite()) {
        return config(format!("weight_decay override must be >= 0, got {wd}"));
    }
    if bs == 0 {
        return config("batch_size must be >= 1");
    }
    base.check_data(data)?;
    let mut model = base.clone();
    model.provenance = Provenance::IncrementalFrom(base.model_id());
    model.fit(data, epochs, lr, wd, bs)?;
    Ok(model)
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn xor() -> LabeledData {
        LabeledData::new(
            array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap()
    }

    fn xor_config() -> ModelConfig {
        ModelConfig {
            learning_rate: 0.5,
            epochs: 500,
            batch_size: 4,
            seed: 3,
            ..ModelConfig::classifier(vec![2, 4, 2], Activation::Tanh)
        }
    }

    #[test]
    fn learns_xor() {
        let model = train(&xor_config(), &xor()).unwrap();
        assert_eq!(model.accuracy(&xor()).unwrap(), 1.0);
        assert_eq!(model.trained_epochs(), 500);
    }

    #[test]
    fn training_lowers_loss() {
        let cfg = xor_config();
        let init = WhiteBoxModel::init(cfg.clone()).unwrap();
        let trained = train(&cfg, &xor()).unwrap();
        let (l0, l1) = (init.loss(&xor()).unwrap(), trained.loss(&xor()).unwrap());
        assert!(l1.is_finite() && l1 < l0, "{l1} !< {l0}");
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = ModelConfig {
            epochs: 0,
            ..xor_config()
        };
        assert!(matches!(train(&cfg, &xor()), Err(Error::Config(_))));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let a = train(&xor_config(), &xor()).unwrap();
        let b = train(&xor_config(), &xor()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let data = LabeledData::new(array![[1.0, 2.0, 3.0]], vec![0.0]).unwrap();
        assert!(matches!(train(&xor_config(), &data), Err(Error::Config(_))));
        let bad_label = LabeledData::new(array![[1.0, 2.0]], vec![2.0]).unwrap();
        assert!(matches!(train(&xor_config(), &bad_label), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_names_epoch() {
        let data = LabeledData::new(array![[1e200, -1e200], [-1e200, 1e200]], vec![1.0, -1.0])
            .unwrap();
        let cfg = ModelConfig {
            learning_rate: 10.0,
            epochs: 5,
            batch_size: 2,
            ..ModelConfig::regressor(vec![2, 3, 1], Activation::Identity)
        };
        match train(&cfg, &data) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn hand_computed_linear_layer() {
        let cfg = ModelConfig::regressor(vec![2, 2, 1], Activation::Identity);
        let layers = vec![
            DenseLayer {
                weights: array![[2.0, 0.0], [0.0, 3.0]],
                bias: array![0.0, 0.0],
            },
            DenseLayer {
                weights: array![[1.0], [1.0]],
                bias: array![0.0],
            },
        ];
        let m = WhiteBoxModel::from_parts(cfg, layers, 0, Provenance::Scratch).unwrap();
        let acc = m.layer_access(1, array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(acc.values, array![[2.0, 3.0]]);
        assert_eq!(acc.param_count, 6);
        assert_eq!(acc.layer_type, LayerType::Dense);
    }

    #[test]
    fn layer_zero_is_identity_and_out_of_range_fails() {
        let m = train(&xor_config(), &xor()).unwrap();
        let x = xor().inputs;
        let acc = m.layer_access(0, x.view()).unwrap();
        assert_eq!(acc.values, x);
        assert_eq!(acc.param_count, 0);
        assert_eq!(acc.layer_type, LayerType::Input);
        assert!(matches!(
            m.layer_access(m.num_layers() + 1, x.view()),
            Err(Error::Access { .. })
        ));
        let out = m.layer_access(m.num_layers(), x.view()).unwrap();
        assert_eq!(out.layer_type, LayerType::Output);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let m = WhiteBoxModel::init(ModelConfig::classifier(vec![3, 5, 4], Activation::Relu))
            .unwrap();
        let x = Array2::from_shape_fn((20, 3), |(i, j)| (i as f64 - 10.0) * (j as f64 + 0.5));
        let out = m.predict(x.view()).unwrap();
        for row in out.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn param_count_matches_layer_sizes() {
        let sizes = vec![5, 7, 3, 2];
        let m = WhiteBoxModel::init(ModelConfig::classifier(sizes.clone(), Activation::Relu))
            .unwrap();
        for l in 1..sizes.len() {
            let (pc, _) = m.layer_info(l).unwrap();
            assert_eq!(pc, sizes[l - 1] * sizes[l] + sizes[l]);
        }
    }

    #[test]
    fn incremental_bookkeeping() {
        let base = train(&xor_config(), &xor()).unwrap();
        assert!(matches!(
            incremental_train(&base, &xor(), 0),
            Err(Error::Config(_))
        ));
        let inc = incremental_train(&base, &xor(), 5).unwrap();
        assert_eq!(inc.provenance(), &Provenance::IncrementalFrom(base.model_id()));
        assert_eq!(inc.trained_epochs(), 505);
        assert_eq!(base.trained_epochs(), 500);
        assert_eq!(base.provenance(), &Provenance::Scratch);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let base = train(&xor_config(), &xor()).unwrap();
        let over = TrainOverrides {
            learning_rate: Some(0.0),
            weight_decay: Some(0.1),
            ..Default::default()
        };
        let inc = incremental_train_with(&base, &xor(), 3, &over).unwrap();
        assert_eq!(inc.layers(), base.layers());
    }

    #[test]
    fn incremental_requires_trained_base() {
        let fresh = WhiteBoxModel::init(xor_config()).unwrap();
        assert!(incremental_train(&fresh, &xor(), 1).is_err());
    }
}
