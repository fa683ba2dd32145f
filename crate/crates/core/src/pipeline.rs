//! Shadow training, meta-model fitting and origin-membership inference.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{
    feature_matrix, inter_split, intra_split, labeled, quotient, split_target, OriginDataset,
    OriginId, PartitionFractions, PartitionPlan, Sample,
};
use crate::error::{config, input, Result};
use crate::featurize::{gen_data, shuffled_rows, BagEmbedding, FeatKind, FeatSpec, TextAux};
use crate::meta::{train_meta, MetaModel, MetaTrainConfig};
use crate::nn::{self, LayerAccessMatrix, LayerType, ModelConfig, OutputKind, WhiteBoxModel};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ShadowMode {
    Scratch,
    /// Initialize from the target model's weights and train for `epochs` more epochs.
    Incremental { epochs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    #[serde(flatten)]
    pub mode: ShadowMode,
    /// Architecture override for scratch shadows; defaults to the target's config.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Number of independently seeded shadows whose embedding sets are pooled.
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            mode: ShadowMode::Scratch,
            model: None,
            count: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Bag the auxiliary set and average the per-bag probabilities.
    Mean,
    /// Featurize the whole auxiliary set as one bag.
    SingleBag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub target: ModelConfig,
    #[serde(default)]
    pub shadow: ShadowConfig,
    pub layer_index: usize,
    pub feat: FeatSpec,
    pub bag_size: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub partition: PartitionFractions,
    #[serde(default)]
    pub meta: MetaTrainConfig,
    #[serde(default = "default_min_samples")]
    pub min_samples_per_origin: usize,
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_aggregation() -> Aggregation {
    Aggregation::Mean
}

fn default_min_samples() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        self.feat.validate()?;
        let fracs = [
            ("partition.target", self.partition.target),
            ("partition.proxy", self.partition.proxy),
            ("partition.member", self.partition.member),
            ("partition.intra_train", self.partition.intra_train),
            ("threshold", self.threshold),
        ];
        for (name, f) in fracs {
            if !(f > 0.0 && f < 1.0) {
                return config(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        if self.bag_size == 0 {
            return config("bag_size must be >= 1");
        }
        if self.layer_index > self.target.num_layers() {
            return config(format!(
                "layer_index {} exceeds the target's {} layers",
                self.layer_index,
                self.target.num_layers()
            ));
        }
        if self.shadow.count == 0 {
            return config("shadow.count must be >= 1");
        }
        if let ShadowMode::Incremental { epochs: 0 } = self.shadow.mode {
            return config("incremental shadow epochs must be >= 1");
        }
        if let Some(m) = &self.shadow.model {
            m.validate()?;
            if m.input_width() != self.target.input_width()
                || m.layer_sizes.get(self.layer_index)
                    != self.target.layer_sizes.get(self.layer_index)
            {
                return config(
                    "shadow architecture must match the target's input width and referenced layer width",
                );
            }
        }
        if self.feat.kind == FeatKind::TextStats
            && (self.layer_index != self.target.num_layers()
                || self.target.output_kind != OutputKind::SoftmaxClassifier)
        {
            return config("text_stats applies only to the last layer of a classifier");
        }
        Ok(())
    }

    /// Embedding width the meta-model will see.
    pub fn embedding_width(&self, with_text: bool) -> usize {
        self.feat
            .embedding_width(self.target.layer_sizes[self.layer_index], with_text)
    }
}

/// Everything produced by shadow training, including the bookkeeping needed
/// to audit the data flow.
#[derive(Clone, Debug)]
pub struct ShadowBuild {
    pub shadows: Vec<WhiteBoxModel>,
    /// The meta-model training set S.
    pub embeddings: Vec<BagEmbedding>,
    /// Featurization with any histogram range frozen from shadow-side outputs.
    pub feat: FeatSpec,
    pub member_origins: Vec<BTreeSet<OriginId>>,
    pub nonmember_origins: Vec<BTreeSet<OriginId>>,
    /// Ids of samples used to train any shadow.
    pub shadow_train_ids: BTreeSet<usize>,
    /// Ids of samples that ended up in member-labeled bags.
    pub positive_ids: BTreeSet<usize>,
}

fn text_aux(cfg: &ExperimentConfig, access: &LayerAccessMatrix, samples: &[Sample]) -> Option<TextAux> {
    let applicable = matches!(cfg.feat.kind, FeatKind::TextStats | FeatKind::Compound)
        && access.layer_type == LayerType::Output
        && cfg.target.output_kind == OutputKind::SoftmaxClassifier;
    if !applicable {
        return None;
    }
    let lengths: Option<Vec<u32>> = samples.iter().map(|s| s.length).collect();
    Some(TextAux {
        lengths: lengths?,
        labels: samples.iter().map(|s| s.label).collect(),
    })
}

/// Layer outputs and text metadata for one origin's samples, rows permuted
/// with the origin's bag-assignment seed.
fn origin_access(
    model: &WhiteBoxModel,
    samples: &[Sample],
    origin: &OriginId,
    cfg: &ExperimentConfig,
    tag: &str,
) -> Result<(LayerAccessMatrix, Option<TextAux>)> {
    let order = shuffled_rows(samples.len(), seed::derive(cfg.seed, &format!("bags/{tag}/{origin}")));
    let shuffled: Vec<Sample> = order.iter().map(|&i| samples[i].clone()).collect();
    let access = model.layer_access(cfg.layer_index, feature_matrix(&shuffled).view())?;
    let text = text_aux(cfg, &access, &shuffled);
    if cfg.feat.kind == FeatKind::TextStats && text.is_none() {
        return input("text_stats needs a length for every sample");
    }
    Ok((access, text))
}

/// Train shadow model(s) on the proxy data and build the meta-model training set.
pub fn build_shadow(
    proxy: &OriginDataset,
    cfg: &ExperimentConfig,
    target: Option<&WhiteBoxModel>,
) -> Result<ShadowBuild> {
    cfg.validate()?;
    let groups = quotient(proxy)?;
    if groups.len() < 4 {
        return input(format!("proxy data needs at least 4 origins, got {}", groups.len()));
    }
    if proxy.feature_width() != cfg.target.input_width() {
        return config(format!(
            "proxy feature width {} does not match model input width {}",
            proxy.feature_width(),
            cfg.target.input_width()
        ));
    }
    if matches!(cfg.shadow.mode, ShadowMode::Incremental { .. }) && target.is_none() {
        return config("incremental shadow training needs the target model");
    }
    let origins: BTreeSet<OriginId> = groups.keys().cloned().collect();

    let mut build = ShadowBuild {
        shadows: Vec::new(),
        embeddings: Vec::new(),
        feat: cfg.feat.clone(),
        member_origins: Vec::new(),
        nonmember_origins: Vec::new(),
        shadow_train_ids: BTreeSet::new(),
        positive_ids: BTreeSet::new(),
    };
    // (membership, origin, access, text) for every origin of every shadow.
    let mut pending = Vec::new();

    for k in 0..cfg.shadow.count {
        let tag = if k == 0 { String::new() } else { format!("/{k}") };
        let (members, nonmembers) = inter_split(
            &origins,
            cfg.partition.member,
            seed::derive(cfg.seed, &format!("proxy-inter{tag}")),
        )?;
        let mut train = Vec::new();
        let mut held: Vec<(OriginId, Vec<Sample>)> = Vec::new();
        for origin in &members {
            let (t, h) = intra_split(
                &groups[origin],
                cfg.partition.intra_train,
                seed::derive(cfg.seed, &format!("proxy-intra{tag}/{origin}")),
            )?;
            train.extend(t);
            held.push((origin.clone(), h));
        }
        build.shadow_train_ids.extend(train.iter().map(|s| s.id));

        let data = labeled(&train);
        let shadow = match (&cfg.shadow.mode, target) {
            (ShadowMode::Incremental { epochs }, Some(t)) => nn::incremental_train(t, &data, *epochs)?,
            _ => {
                let mut mc = cfg.shadow.model.clone().unwrap_or_else(|| cfg.target.clone());
                mc.seed = seed::derive(cfg.seed, &format!("shadow{tag}"));
                nn::train(&mc, &data)?
            }
        };

        let shadow_tag = format!("shadow{k}");
        for (origin, h) in &held {
            build.positive_ids.extend(h.iter().map(|s| s.id));
            let (access, text) = origin_access(&shadow, h, origin, cfg, &shadow_tag)?;
            pending.push((true, origin.clone(), access, text));
        }
        for origin in &nonmembers {
            let (access, text) = origin_access(&shadow, &groups[origin], origin, cfg, &shadow_tag)?;
            pending.push((false, origin.clone(), access, text));
        }
        build.member_origins.push(members);
        build.nonmember_origins.push(nonmembers);
        build.shadows.push(shadow);
    }

    if build.feat.kind.uses_histogram() && build.feat.histogram_range.is_none() {
        let width = pending[0].2.values.ncols();
        let rows: usize = pending.iter().map(|p| p.2.values.nrows()).sum();
        let mut all = ndarray::Array2::<f64>::zeros((rows, width));
        let mut r = 0;
        for p in &pending {
            let n = p.2.values.nrows();
            all.slice_mut(ndarray::s![r..r + n, ..]).assign(&p.2.values);
            r += n;
        }
        build.feat = build.feat.with_range_from(all.view());
    }
    for (membership, origin, access, text) in &pending {
        build.embeddings.extend(gen_data(
            &build.feat,
            access,
            cfg.bag_size,
            *membership,
            origin,
            text.as_ref(),
        )?);
    }
    Ok(build)
}

/// A fitted attack: frozen featurization plus the meta-model g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attack {
    pub feat: FeatSpec,
    pub meta: MetaModel,
}

/// `build_shadow` followed by meta-model training.
pub fn fit_attack(
    proxy: &OriginDataset,
    cfg: &ExperimentConfig,
    target: Option<&WhiteBoxModel>,
) -> Result<(Attack, ShadowBuild)> {
    let build = build_shadow(proxy, cfg, target)?;
    let meta_cfg = MetaTrainConfig {
        seed: seed::derive(cfg.seed, "meta"),
        ..cfg.meta.clone()
    };
    let meta = train_meta(&build.embeddings, &meta_cfg)?;
    Ok((
        Attack {
            feat: build.feat.clone(),
            meta,
        },
        build,
    ))
}

/// Membership decision for one origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceVerdict {
    pub origin: OriginId,
    /// Aggregated membership probability (vote fraction for the sample-level baseline).
    pub probability: f64,
    pub per_bag_probabilities: Vec<f64>,
    pub threshold: f64,
    pub member: bool,
    pub num_samples: usize,
}

/// Score the auxiliary samples of one origin against the target model.
pub fn infer_origin(
    target: &WhiteBoxModel,
    origin: &OriginId,
    aux: &[Sample],
    cfg: &ExperimentConfig,
    attack: &Attack,
) -> Result<InferenceVerdict> {
    if aux.is_empty() {
        return input(format!("origin {origin} has no auxiliary samples"));
    }
    if aux[0].features.len() != target.input_width() {
        return config(format!(
            "auxiliary feature width {} does not match model input width {}",
            aux[0].features.len(),
            target.input_width()
        ));
    }
    let (access, text) = origin_access(target, aux, origin, cfg, "target")?;
    let bag_size = match cfg.aggregation {
        Aggregation::Mean => cfg.bag_size,
        Aggregation::SingleBag => aux.len(),
    };
    let bags = gen_data(&attack.feat, &access, bag_size, false, origin, text.as_ref())?;
    let rows: Vec<Vec<f64>> = bags.into_iter().map(|b| b.features).collect();
    let per_bag = attack.meta.predict_batch(&rows)?;
    let probability = per_bag.iter().sum::<f64>() / per_bag.len() as f64;
    Ok(InferenceVerdict {
        origin: origin.clone(),
        probability,
        member: probability >= cfg.threshold,
        per_bag_probabilities: per_bag,
        threshold: cfg.threshold,
        num_samples: aux.len(),
    })
}

/// Sample-level membership inference: bag size 1, and the origin is a member
/// when the fraction of samples predicted as members reaches the threshold.
/// `attack` is expected to have been fitted with bag size 1.
pub fn baseline_sample_mi(
    target: &WhiteBoxModel,
    origin: &OriginId,
    aux: &[Sample],
    cfg: &ExperimentConfig,
    attack: &Attack,
) -> Result<InferenceVerdict> {
    let single = ExperimentConfig {
        bag_size: 1,
        aggregation: Aggregation::Mean,
        ..cfg.clone()
    };
    let mut v = infer_origin(target, origin, aux, &single, attack)?;
    let votes = v
        .per_bag_probabilities
        .iter()
        .filter(|&&p| p >= cfg.threshold)
        .count();
    v.probability = votes as f64 / v.per_bag_probabilities.len() as f64;
    v.member = v.probability >= cfg.threshold;
    Ok(v)
}

/// Fair coin per origin.
pub fn baseline_random(origins: &[OriginId], seed: u64) -> Vec<InferenceVerdict> {
    let mut rng = seed::rng(seed::derive(seed, "random-baseline"));
    origins
        .iter()
        .map(|o| {
            let member = rng.random_bool(0.5);
            InferenceVerdict {
                origin: o.clone(),
                probability: if member { 1.0 } else { 0.0 },
                per_bag_probabilities: Vec::new(),
                threshold: 0.5,
                member,
                num_samples: 0,
            }
        })
        .collect()
}

/// Data for an end-to-end run, split at the origin level into target,
/// proxy and extra origins.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub plan: PartitionPlan,
    /// Training data of the target model.
    pub target_train: OriginDataset,
    /// Proxy data for shadow and meta-model training.
    pub proxy: OriginDataset,
    /// Test origins: held-out samples of target origins plus all samples of extra origins.
    pub aux: OriginDataset,
    /// Ground-truth membership of every test origin.
    pub truth: BTreeMap<OriginId, bool>,
}

pub fn prepare(
    dataset: &OriginDataset,
    fractions: &PartitionFractions,
    min_samples_per_origin: usize,
    seed: u64,
) -> Result<PreparedData> {
    let (dataset, _) = dataset.filter_min_samples(min_samples_per_origin.max(2));
    let plan = PartitionPlan::new(&dataset.origins(), fractions, seed)?;
    let target = split_target(&dataset, &plan)?;
    let proxy = dataset.restrict(&plan.proxy_origins());
    let mut aux_samples = target.member_aux.samples().to_vec();
    aux_samples.extend(dataset.restrict(&plan.extra_origins).samples().iter().cloned());
    aux_samples.sort_by_key(|s| s.id);
    let truth = plan
        .target_origins
        .iter()
        .map(|o| (o.clone(), true))
        .chain(plan.extra_origins.iter().map(|o| (o.clone(), false)))
        .collect();
    Ok(PreparedData {
        aux: OriginDataset::new(aux_samples, dataset.feature_width())?,
        target_train: target.train,
        proxy,
        truth,
        plan,
    })
}

pub fn train_target(train: &OriginDataset, cfg: &ModelConfig) -> Result<WhiteBoxModel> {
    if train.feature_width() != cfg.input_width() {
        return config(format!(
            "dataset feature width {} does not match model input width {}",
            train.feature_width(),
            cfg.input_width()
        ));
    }
    nn::train(cfg, &labeled(train.samples()))
}

/// Run inference for every origin of `aux`, in origin order.
pub fn infer_all(
    target: &WhiteBoxModel,
    aux: &OriginDataset,
    cfg: &ExperimentConfig,
    attack: &Attack,
) -> Result<Vec<InferenceVerdict>> {
    quotient(aux)?
        .iter()
        .map(|(origin, samples)| infer_origin(target, origin, samples, cfg, attack))
        .collect()
}

pub fn infer_all_sample_mi(
    target: &WhiteBoxModel,
    aux: &OriginDataset,
    cfg: &ExperimentConfig,
    attack: &Attack,
) -> Result<Vec<InferenceVerdict>> {
    quotient(aux)?
        .iter()
        .map(|(origin, samples)| baseline_sample_mi(target, origin, samples, cfg, attack))
        .collect()
}

/// Accuracy of verdicts against ground truth; origins without truth are skipped.
pub fn verdict_accuracy(
    verdicts: &[InferenceVerdict],
    truth: &BTreeMap<OriginId, bool>,
) -> Result<f64> {
    let (pred, gt): (Vec<bool>, Vec<bool>) = verdicts
        .iter()
        .filter_map(|v| truth.get(&v.origin).map(|&t| (v.member, t)))
        .unzip();
    crate::metrics::accuracy(&pred, &gt)
}
