//! The meta-model g: a binary classifier from bag embeddings to membership probability.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Error, Result};
use crate::featurize::BagEmbedding;
use crate::linalg::cholesky_solve;
use crate::nn::{self, Activation, LabeledData, ModelConfig, WhiteBoxModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaKind {
    Logistic,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaTrainConfig {
    pub kind: MetaKind,
    /// L2 penalty on the (standardized) logistic weights.
    pub l2: f64,
    pub max_iterations: usize,
    /// Hidden units of the MLP meta-model.
    pub hidden: usize,
    pub mlp_epochs: usize,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            kind: MetaKind::Logistic,
            l2: 1e-2,
            max_iterations: 50,
            hidden: 32,
            mlp_epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Params {
    Logistic { weights: Vec<f64>, bias: f64 },
    Mlp {
        #[serde(with = "hex_checkpoint")]
        network: WhiteBoxModel,
    },
}

/// Stores a network as hex-encoded checkpoint bytes.
mod hex_checkpoint {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::nn::WhiteBoxModel;

    pub fn serialize<S: Serializer>(m: &WhiteBoxModel, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(crate::checkpoint::save(m)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<WhiteBoxModel, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(D::Error::custom)?;
        crate::checkpoint::load(&bytes).map_err(D::Error::custom)
    }
}

/// A trained meta-model. Inputs are standardized with the training-set
/// column means and standard deviations before scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    input_width: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    params: Params,
    training_seed: u64,
}

impl MetaModel {
    pub fn kind(&self) -> MetaKind {
        match self.params {
            Params::Logistic { .. } => MetaKind::Logistic,
            Params::Mlp { .. } => MetaKind::Mlp,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// Probability that the bag comes from a member origin.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&[features.to_vec()])?[0])
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_width) {
            return config(format!(
                "embedding width {} does not match meta-model input width {}",
                r.len(),
                self.input_width
            ));
        }
        let x = self.standardize(rows);
        match &self.params {
            Params::Logistic { weights, bias } => {
                let w = Array1::from(weights.clone());
                Ok((x.dot(&w) + *bias).iter().map(|&z| sigmoid(z)).collect())
            }
            Params::Mlp { network } => Ok(network.predict(x.view())?.column(1).to_vec()),
        }
    }

    fn standardize(&self, rows: &[Vec<f64>]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), self.input_width), |(i, j)| {
            (rows[i][j] - self.mean[j]) / self.scale[j]
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("meta-model is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MetaModel =
            serde_json::from_str(s).map_err(|e| Error::Deserialize(e.to_string()))?;
        let ok = m.mean.len() == m.input_width
            && m.scale.len() == m.input_width
            && m.scale.iter().all(|s| *s > 0.0)
            && match &m.params {
                Params::Logistic { weights, .. } => weights.len() == m.input_width,
                Params::Mlp { network } => {
                    network.input_width() == m.input_width && network.config().output_width() == 2
                }
            };
        if !ok {
            return Err(Error::Deserialize("meta-model shapes are inconsistent".into()));
        }
        Ok(m)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Train g on the embedding set S. Classes are weighted so each contributes
/// half of the loss, whatever their bag counts.
pub fn train_meta(set: &[BagEmbedding], cfg: &MetaTrainConfig) -> Result<MetaModel> {
    if set.is_empty() {
        return input("meta-model training set is empty");
    }
    let positives = set.iter().filter(|e| e.membership).count();
    if positives == 0 || positives == set.len() {
        return input("meta-model training set needs both member and non-member embeddings");
    }
    let width = set[0].features.len();
    if width == 0 || set.iter().any(|e| e.features.len() != width) {
        return input("embeddings must share one non-zero width");
    }
    let raw = Array2::from_shape_fn((set.len(), width), |(i, j)| set[i].features[j]);
    if raw.iter().any(|v| !v.is_finite()) {
        return input("embeddings contain non-finite values");
    }
    let mean = raw.mean_axis(Axis(0)).expect("non-empty");
    let scale: Vec<f64> = raw
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let x = Array2::from_shape_fn(raw.dim(), |(i, j)| (raw[[i, j]] - mean[j]) / scale[j]);
    let y: Vec<f64> = set.iter().map(|e| f64::from(u8::from(e.membership))).collect();
    let n = set.len() as f64;
    let w_pos = 0.5 * n / positives as f64;
    let w_neg = 0.5 * n / (set.len() - positives) as f64;
    let sample_w: Vec<f64> = y.iter().map(|&t| if t > 0.5 { w_pos } else { w_neg }).collect();

    let params = match cfg.kind {
        MetaKind::Logistic => fit_logistic(&x, &y, &sample_w, cfg)?,
        MetaKind::Mlp => {
            let net_cfg = ModelConfig {
                learning_rate: 0.05,
                epochs: cfg.mlp_epochs.max(1),
                batch_size: 32,
                weight_decay: 1e-4,
                seed: cfg.seed,
                ..ModelConfig::classifier(vec![width, cfg.hidden.max(1), 2], Activation::Relu)
            };
            // Balance classes by repeating minority rows.
            let (minority, majority) = if positives * 2 < set.len() {
                (true, set.len() - positives)
            } else {
                (false, positives)
            };
            let minority_count = set.len() - majority;
            let mut rows = Vec::new();
            for (i, t) in y.iter().enumerate() {
                let is_min = (*t > 0.5) == minority;
                let reps = if is_min {
                    (majority as f64 / minority_count as f64).round().max(1.0) as usize
                } else {
                    1
                };
                rows.extend(std::iter::repeat_n(i, reps));
            }
            let data = LabeledData::new(
                x.select(Axis(0), &rows),
                rows.iter().map(|&i| y[i]).collect(),
            )?;
            let net = nn::train(&net_cfg, &data)?;
            Params::Mlp { network: net }
        }
    };
    Ok(MetaModel {
        input_width: width,
        mean: mean.to_vec(),
        scale,
        params,
        training_seed: cfg.seed,
    })
}

/// Weighted, L2-regularized logistic regression by damped Newton iterations.
fn fit_logistic(
    x: &Array2<f64>,
    y: &[f64],
    sw: &[f64],
    cfg: &MetaTrainConfig,
) -> Result<Params> {
    let (n, d) = x.dim();
    let nf = n as f64;
    // Augmented design with a trailing intercept column; the intercept is not penalized.
    let mut xa = Array2::<f64>::ones((n, d + 1));
    xa.slice_mut(ndarray::s![.., ..d]).assign(x);
    let l2 = cfg.l2.max(1e-8);
    let objective = |beta: &Array1<f64>| {
        let z = xa.dot(beta);
        let mut loss = 0.0;
        for i in 0..n {
            // log(1 + e^z) - y z, computed stably
            let zi = z[i];
            let softplus = if zi > 0.0 {
                zi + (-zi).exp().ln_1p()
            } else {
                zi.exp().ln_1p()
            };
            loss += sw[i] * (softplus - y[i] * zi);
        }
        loss / nf + 0.5 * l2 * beta.slice(ndarray::s![..d]).mapv(|b| b * b).sum()
    };
    let mut beta = Array1::<f64>::zeros(d + 1);
    let mut current = objective(&beta);
    for _ in 0..cfg.max_iterations.max(1) {
        let z = xa.dot(&beta);
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = Array1::from_shape_fn(n, |i| sw[i] * (p[i] - y[i]) / nf);
        let mut grad = xa.t().dot(&resid);
        let curv = Array1::from_shape_fn(n, |i| sw[i] * p[i] * (1.0 - p[i]) / nf);
        let weighted = &xa * &curv.view().insert_axis(Axis(1));
        let mut hess = xa.t().dot(&weighted);
        for j in 0..d {
            grad[j] += l2 * beta[j];
            hess[[j, j]] += l2;
        }
        hess[[d, d]] += 1e-10;
        let step = cholesky_solve(&hess, &grad)?;
        let mut t = 1.0;
        let mut improvement = None;
        while t >= 1e-6 {
            let cand = &beta - &step.mapv(|s| s * t);
            let obj = objective(&cand);
            if obj <= current {
                improvement = Some(current - obj);
                beta = cand;
                current = obj;
                break;
            }
            t *= 0.5;
        }
        match improvement {
            Some(gain) if gain > 1e-13 * (1.0 + current) => {}
            _ => break,
        }
    }
    Ok(logistic_params(&beta, d))
}

fn logistic_params(beta: &Array1<f64>, d: usize) -> Params {
    Params::Logistic {
        weights: beta.slice(ndarray::s![..d]).to_vec(),
        bias: beta[d],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OriginId;
    use rand::Rng as _;

    fn emb(features: Vec<f64>, membership: bool) -> BagEmbedding {
        BagEmbedding {
            features,
            membership,
            origin: OriginId::new("o").unwrap(),
            bag_index: 0,
        }
    }

    fn separable() -> Vec<BagEmbedding> {
        (0..20)
            .map(|i| emb(vec![if i % 2 == 0 { 1.0 } else { -1.0 }], i % 2 == 0))
            .collect()
    }

    fn train_acc(m: &MetaModel, s: &[BagEmbedding]) -> f64 {
        s.iter()
            .filter(|e| (m.predict(&e.features).unwrap() >= 0.5) == e.membership)
            .count() as f64
            / s.len() as f64
    }

    #[test]
    fn separable_is_learned() {
        for kind in [MetaKind::Logistic, MetaKind::Mlp] {
            let cfg = MetaTrainConfig {
                kind,
                ..Default::default()
            };
            let m = train_meta(&separable(), &cfg).unwrap();
            assert_eq!(train_acc(&m, &separable()), 1.0, "{kind:?}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = MetaTrainConfig::default();
        assert_eq!(
            train_meta(&separable(), &cfg).unwrap(),
            train_meta(&separable(), &cfg).unwrap()
        );
    }

    #[test]
    fn single_class_rejected() {
        let s: Vec<_> = (0..5).map(|i| emb(vec![i as f64], true)).collect();
        assert!(matches!(
            train_meta(&s, &MetaTrainConfig::default()),
            Err(Error::Input(_))
        ));
        assert!(train_meta(&[], &MetaTrainConfig::default()).is_err());
    }

    #[test]
    fn random_labels_do_not_overfit() {
        let mut rng = crate::seed::rng(17);
        let s: Vec<_> = (0..100)
            .map(|i| emb((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), i < 50))
            .collect();
        let m = train_meta(&s, &MetaTrainConfig::default()).unwrap();
        assert!(train_acc(&m, &s) < 0.75);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let m = train_meta(&separable(), &MetaTrainConfig::default()).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = train_meta(&separable(), &MetaTrainConfig::default()).unwrap();
        assert_eq!(MetaModel::from_json(&m.to_json()).unwrap(), m);
    }
}
