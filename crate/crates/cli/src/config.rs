//! The declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use origin_audit::data::PartitionFractions;
use origin_audit::featurize::{FeatKind, FeatSpec};
use origin_audit::ingest::DatasetSchema;
use origin_audit::meta::MetaTrainConfig;
use origin_audit::nn::ModelConfig;
use origin_audit::pipeline::{Aggregation, ExperimentConfig, ShadowConfig};
use origin_audit::seed;
use origin_audit::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub dataset: Option<PathBuf>,
    pub target_checkpoint: Option<PathBuf>,
    pub proxy: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Inputs {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.dataset,
            &mut self.target_checkpoint,
            &mut self.proxy,
            &mut self.aux,
            &mut self.truth,
            &mut self.manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub layer_index: usize,
    pub feat: FeatSpec,
    pub bag_size: usize,
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default = "mean")]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub shadow: ShadowConfig,
    #[serde(default)]
    pub meta: MetaTrainConfig,
    /// Also score the sample-level and random baselines.
    #[serde(default)]
    pub baselines: bool,
}

fn half() -> f64 {
    0.5
}

fn mean() -> Aggregation {
    Aggregation::Mean
}

fn ten() -> usize {
    10
}

/// Grid axes of a sweep. Absent axes take the `[inference]` value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub layer_index: Option<Vec<usize>>,
    pub bag_size: Option<Vec<usize>>,
    pub feat: Option<Vec<FeatKind>>,
    /// Incremental shadow epochs; absent means the `[inference.shadow]` mode.
    pub shadow_epochs: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub schema: DatasetSchema,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub partition: PartitionFractions,
    #[serde(default = "ten")]
    pub min_samples_per_origin: usize,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub target: Option<ModelConfig>,
    #[serde(default)]
    pub inference: Option<InferenceSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load a config file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.inputs.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn synth_spec(&self) -> CliResult<SynthSpec> {
        let spec = self
            .synth
            .clone()
            .ok_or_else(|| CliError::Config("missing [synth] section".into()))?;
        Ok(SynthSpec {
            seed: seed::derive(self.seed, "synth"),
            ..spec
        })
    }

    pub fn target_model(&self) -> CliResult<ModelConfig> {
        let m = self
            .target
            .clone()
            .ok_or_else(|| CliError::Config("missing [target] section".into()))?;
        Ok(ModelConfig {
            seed: seed::derive(self.seed, "target"),
            ..m
        })
    }

    pub fn inference(&self) -> CliResult<&InferenceSection> {
        self.inference
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [inference] section".into()))
    }

    /// Experiment config for a target model with configuration `target`.
    pub fn experiment(&self, target: &ModelConfig) -> CliResult<ExperimentConfig> {
        let inf = self.inference()?;
        let cfg = ExperimentConfig {
            target: target.clone(),
            shadow: inf.shadow.clone(),
            layer_index: inf.layer_index,
            feat: inf.feat.clone(),
            bag_size: inf.bag_size,
            threshold: inf.threshold,
            aggregation: inf.aggregation,
            partition: self.partition.clone(),
            meta: inf.meta.clone(),
            min_samples_per_origin: self.min_samples_per_origin,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON form stored next to every run's outputs.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
