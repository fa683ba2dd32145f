//! The five commands. Each writes into a fresh run directory and returns it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use origin_audit::checkpoint;
use origin_audit::data::{labeled, quotient, OriginDataset, OriginId};
use origin_audit::ingest::{load_delimited, write_delimited};
use origin_audit::metrics::LayerAccuracyRecord;
use origin_audit::nn::{incremental_train, OutputKind, WhiteBoxModel};
use origin_audit::pipeline::{
    baseline_random, baseline_sample_mi, fit_attack, infer_origin, prepare, train_target, Attack,
    ExperimentConfig, InferenceVerdict, ShadowMode,
};
use origin_audit::report::{
    evaluate_run, load_truth, write_coverage_csv, write_records_csv, write_truth, Method,
    VerdictReport,
};
use origin_audit::synth::synth_generate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{output_root, Run, RunManifest, CONFIG_FILE};

/// Command-line values that override config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub proxy: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Continue training from this checkpoint (train-target only).
    pub resume: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        let i = &mut cfg.inputs;
        for (dst, src) in [
            (&mut i.dataset, &self.dataset),
            (&mut i.target_checkpoint, &self.target),
            (&mut i.proxy, &self.proxy),
            (&mut i.aux, &self.aux),
            (&mut i.truth, &self.truth),
            (&mut i.manifest, &self.manifest),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
    }
}

pub fn load_config(path: &Path, ov: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    ov.apply(&mut cfg);
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> CliResult<&'a Path> {
    let p = p.as_deref().ok_or_else(|| {
        CliError::Config(format!("no {what}: set inputs.{what} or pass --{flag}"))
    })?;
    if !p.is_file() {
        return Err(CliError::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        ));
    }
    Ok(p)
}

fn pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

fn csv_bytes(dataset: &OriginDataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_delimited(dataset, &mut buf)?;
    Ok(buf)
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> CliResult<OriginDataset> {
    load_delimited(path, &cfg.schema).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

fn load_truth_at(path: &Path) -> CliResult<BTreeMap<OriginId, bool>> {
    load_truth(path).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Generate a synthetic dataset and its target / proxy / test split.
pub fn cmd_synth(cfg: &RunConfig, out_dir: Option<&Path>) -> CliResult<PathBuf> {
    let spec = cfg.synth_spec()?;
    let data = synth_generate(&spec)?;
    let prep = prepare(&data, &cfg.partition, cfg.min_samples_per_origin, cfg.seed)?;
    let mut run = Run::create(&output_root(out_dir), "synth", &cfg.to_canonical_json(), cfg.seed)?;
    run.seed("synth", spec.seed);
    run.write("dataset", "dataset.csv", &csv_bytes(&data)?)?;
    run.write("target_train", "target_train.csv", &csv_bytes(&prep.target_train)?)?;
    run.write("proxy", "proxy.csv", &csv_bytes(&prep.proxy)?)?;
    run.write("aux", "aux.csv", &csv_bytes(&prep.aux)?)?;
    let mut truth = Vec::new();
    write_truth(&prep.truth, &mut truth)?;
    run.write("truth", "truth.csv", &truth)?;
    run.write("plan", "plan.json", &json(&prep.plan))?;
    info!(
        "synthesized {} samples over {} origins",
        data.len(),
        data.origins().len()
    );
    run.finish()
}

/// Train (or continue training) the target model.
pub fn cmd_train_target(
    cfg: &RunConfig,
    resume: Option<&Path>,
    out_dir: Option<&Path>,
) -> CliResult<PathBuf> {
    let dataset_path = require(&cfg.inputs.dataset, "dataset", "dataset")?;
    let model_cfg = cfg.target_model()?;
    model_cfg.validate()?;
    let data = load_dataset(dataset_path, cfg)?;
    let base = match resume {
        Some(p) => Some(checkpoint::load_file(p).map_err(|e| match e {
            origin_audit::Error::Io(io) => CliError::io(p, io),
            other => other.into(),
        })?),
        None => None,
    };
    let width = base.as_ref().map_or(model_cfg.input_width(), |b| b.input_width());
    if data.feature_width() != width {
        return Err(CliError::Config(format!(
            "shape mismatch: dataset {} has {} feature columns but the model expects {}",
            dataset_path.display(),
            data.feature_width(),
            width
        )));
    }

    let mut run = Run::create(&output_root(out_dir), "train-target", &cfg.to_canonical_json(), cfg.seed)?;
    run.seed("target", model_cfg.seed);
    run.input("dataset", dataset_path)?;
    let model = match (&base, resume) {
        (Some(b), Some(p)) => {
            run.input("resume", p)?;
            incremental_train(b, &labeled(data.samples()), model_cfg.epochs)?
        }
        _ => train_target(&data, &model_cfg)?,
    };
    if model.config().output_kind == OutputKind::SoftmaxClassifier {
        info!(
            "target training accuracy {:.4}",
            model.accuracy(&labeled(data.samples()))?
        );
    }
    run.set_trained_epochs(model.trained_epochs());
    run.write("target_checkpoint", "target.ckpt", &checkpoint::save(&model))?;
    run.finish()
}

/// Inputs shared by `infer` and `sweep`, loaded and checked before any training.
struct InferInputs {
    target: WhiteBoxModel,
    proxy: OriginDataset,
    aux: BTreeMap<OriginId, Vec<origin_audit::data::Sample>>,
    truth: Option<BTreeMap<OriginId, bool>>,
}

fn load_infer_inputs(cfg: &RunConfig, need_truth: bool) -> CliResult<(InferInputs, Vec<(&'static str, PathBuf)>)> {
    let ckpt = require(&cfg.inputs.target_checkpoint, "target_checkpoint", "target")?;
    let proxy_path = require(&cfg.inputs.proxy, "proxy", "proxy")?;
    let aux_path = require(&cfg.inputs.aux, "aux", "aux")?;
    let truth_path = match (&cfg.inputs.truth, need_truth) {
        (None, false) => None,
        (t, _) => Some(require(t, "truth", "truth")?),
    };
    let target = checkpoint::load_file(ckpt)?;
    let proxy = load_dataset(proxy_path, cfg)?;
    let aux = load_dataset(aux_path, cfg)?;
    for (name, d) in [("proxy", &proxy), ("aux", &aux)] {
        if d.feature_width() != target.input_width() {
            return Err(CliError::Config(format!(
                "{name} data has {} feature columns but the target model expects {}",
                d.feature_width(),
                target.input_width()
            )));
        }
    }
    let truth = truth_path.map(load_truth_at).transpose()?;
    let mut used = vec![
        ("target_checkpoint", ckpt.to_path_buf()),
        ("proxy", proxy_path.to_path_buf()),
        ("aux", aux_path.to_path_buf()),
    ];
    if let Some(t) = truth_path {
        used.push(("truth", t.to_path_buf()));
    }
    let inputs = InferInputs {
        aux: quotient(&aux)?,
        target,
        proxy,
        truth,
    };
    Ok((inputs, used))
}

fn register(run: &mut Run, used: &[(&str, PathBuf)]) -> CliResult<()> {
    used.iter().try_for_each(|(name, path)| run.input(name, path))
}

fn infer_many(
    inputs: &InferInputs,
    exp: &ExperimentConfig,
    attack: &Attack,
    sample_level: bool,
) -> CliResult<Vec<InferenceVerdict>> {
    let origins: Vec<_> = inputs.aux.iter().collect();
    origins
        .par_iter()
        .map(|(origin, samples)| {
            if sample_level {
                baseline_sample_mi(&inputs.target, origin, samples, exp, attack)
            } else {
                infer_origin(&inputs.target, origin, samples, exp, attack)
            }
        })
        .collect::<origin_audit::Result<Vec<_>>>()
        .map_err(Into::into)
}

/// Shadow training, meta-model training and per-origin inference.
pub fn cmd_infer(cfg: &RunConfig, out_dir: Option<&Path>) -> CliResult<PathBuf> {
    let pool = pool(cfg.workers)?;
    // Everything is validated before the run directory exists or any training starts.
    let (inputs, used) = load_infer_inputs(cfg, false)?;
    let exp = cfg.experiment(inputs.target.config())?;
    let mut run = Run::create(&output_root(out_dir), "infer", &cfg.to_canonical_json(), cfg.seed)?;
    register(&mut run, &used)?;
    run.seed("meta", origin_audit::seed::derive(cfg.seed, "meta"));

    let (attack, build) = fit_attack(&inputs.proxy, &exp, Some(&inputs.target))?;
    info!(
        "trained {} shadow model(s); meta-model fitted on {} bag embeddings",
        build.shadows.len(),
        build.embeddings.len()
    );
    for (k, shadow) in build.shadows.iter().enumerate() {
        run.write(
            &format!("shadow_checkpoint_{k}"),
            format!("shadow-{k}.ckpt"),
            &checkpoint::save(shadow),
        )?;
    }
    run.write("meta_model", "attack.json", &json(&attack))?;
    let verdicts = pool.install(|| infer_many(&inputs, &exp, &attack, false))?;
    let report = VerdictReport::new(
        Method::Bagged,
        exp.layer_index,
        exp.bag_size,
        exp.feat.kind,
        exp.threshold,
        &verdicts,
        inputs.truth.as_ref(),
    );
    run.write("verdict_report", "verdicts.json", report.to_json().as_bytes())?;

    if cfg.inference()?.baselines {
        let single = ExperimentConfig {
            bag_size: 1,
            ..exp.clone()
        };
        let (attack1, _) = fit_attack(&inputs.proxy, &single, Some(&inputs.target))?;
        let mi = pool.install(|| infer_many(&inputs, &single, &attack1, true))?;
        let mi = VerdictReport::new(Method::SampleMi, exp.layer_index, 1, exp.feat.kind, exp.threshold, &mi, inputs.truth.as_ref());
        run.write("sample_mi_report", "verdicts-sample-mi.json", mi.to_json().as_bytes())?;
        let origins: Vec<OriginId> = inputs.aux.keys().cloned().collect();
        let random = baseline_random(&origins, cfg.seed);
        let random = VerdictReport::new(Method::Random, exp.layer_index, exp.bag_size, exp.feat.kind, 0.5, &random, inputs.truth.as_ref());
        run.write("random_report", "verdicts-random.json", random.to_json().as_bytes())?;
    }
    run.finish()
}

/// Consolidate a finished `infer` or `sweep` run into an evaluation report.
pub fn cmd_evaluate(cfg: &RunConfig, out_dir: Option<&Path>) -> CliResult<PathBuf> {
    let manifest_path = require(&cfg.inputs.manifest, "manifest", "manifest")?;
    let truth_path = cfg.inputs.truth.as_deref();
    let truth = match truth_path {
        Some(p) => Some(load_truth_at(p)?),
        None => None,
    };
    let (m, dir) = RunManifest::load(manifest_path)?;
    let run_cfg = RunConfig::from_toml_or_json(&dir.join(CONFIG_FILE))?;
    let (report_name, records) = match m.command.as_str() {
        "infer" => ("verdict_report", Vec::new()),
        "sweep" => {
            let text = read(&m.artifact(&dir, "records")?)?;
            let records: Vec<LayerAccuracyRecord> = serde_json::from_str(&text)
                .map_err(|e| CliError::Manifest(format!("records: {e}")))?;
            ("reference_verdicts", records)
        }
        other => {
            return Err(CliError::Manifest(format!(
                "cannot evaluate a {other} run; expected infer or sweep"
            )))
        }
    };
    let report = VerdictReport::from_json(&read(&m.artifact(&dir, report_name)?)?)?;
    let input = |name: &str| {
        m.inputs
            .get(name)
            .map(|r| r.path.clone())
            .ok_or_else(|| CliError::Manifest(format!("run lists no {name} input")))
    };
    let target = checkpoint::load_file(&input("target_checkpoint")?)?;
    let aux = load_dataset(&input("aux")?, &run_cfg)?;
    let classes = match target.config().output_kind {
        OutputKind::SoftmaxClassifier => Some(target.config().output_width()),
        OutputKind::LinearRegressor => None,
    };
    let layer_meta = target.layer_info(report.layer_index)?;
    let eval = evaluate_run(&report, truth.as_ref(), Some(layer_meta), &records, Some((&aux, classes)))?;

    let mut run = Run::create(&output_root(out_dir), "evaluate", &cfg.to_canonical_json(), cfg.seed)?;
    run.input("manifest", manifest_path)?;
    if let Some(p) = truth_path {
        run.input("truth", p)?;
    }
    run.write("evaluation_report", "evaluation.json", eval.to_json().as_bytes())?;
    let mut buf = Vec::new();
    write_coverage_csv(&eval.coverage, &mut buf)?;
    run.write("coverage_table", "coverage.csv", &buf)?;
    let mut buf = Vec::new();
    write_records_csv(&eval.layers.records, &mut buf)?;
    run.write("records_table", "records.csv", &buf)?;
    run.finish()
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl RunConfig {
    /// Read the canonical JSON config stored in a run directory.
    pub fn from_toml_or_json(path: &Path) -> CliResult<RunConfig> {
        let text = read(path)?;
        serde_json::from_str(&text)
            .or_else(|_| RunConfig::from_toml(&text))
            .map_err(|_| CliError::Manifest(format!("{}: unreadable config", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layer_index: usize,
    pub bag_size: usize,
    pub feat: origin_audit::featurize::FeatKind,
    pub shadow_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: SweepCell,
    pub error: String,
}

/// Cartesian grid of the sweep section; absent axes take the inference values.
pub fn sweep_cells(cfg: &RunConfig) -> CliResult<Vec<SweepCell>> {
    let inf = cfg.inference()?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    fn axis<T: Clone>(name: &str, v: Option<Vec<T>>, default: T) -> CliResult<Vec<T>> {
        match v {
            Some(v) if v.is_empty() => Err(CliError::Config(format!("sweep.{name} is empty"))),
            Some(v) => Ok(v),
            None => Ok(vec![default]),
        }
    }
    let default_epochs = match inf.shadow.mode {
        ShadowMode::Scratch => None,
        ShadowMode::Incremental { epochs } => Some(epochs),
    };
    let layers = axis("layer_index", sweep.layer_index, inf.layer_index)?;
    let bags = axis("bag_size", sweep.bag_size, inf.bag_size)?;
    let feats = axis("feat", sweep.feat, inf.feat.kind)?;
    let epochs = axis(
        "shadow_epochs",
        sweep.shadow_epochs.map(|v| v.into_iter().map(Some).collect()),
        default_epochs,
    )?;
    let mut cells = Vec::new();
    for &layer_index in &layers {
        for &bag_size in &bags {
            for &feat in &feats {
                for &shadow_epochs in &epochs {
                    cells.push(SweepCell {
                        layer_index,
                        bag_size,
                        feat,
                        shadow_epochs,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(
    inputs: &InferInputs,
    base: &ExperimentConfig,
    cell: &SweepCell,
) -> origin_audit::Result<(LayerAccuracyRecord, VerdictReport)> {
    let mut exp = base.clone();
    exp.layer_index = cell.layer_index;
    exp.bag_size = cell.bag_size;
    exp.feat.kind = cell.feat;
    if let Some(epochs) = cell.shadow_epochs {
        exp.shadow.mode = ShadowMode::Incremental { epochs };
    }
    exp.validate()?;
    let (attack, _) = fit_attack(&inputs.proxy, &exp, Some(&inputs.target))?;
    let verdicts = inputs
        .aux
        .iter()
        .map(|(o, s)| infer_origin(&inputs.target, o, s, &exp, &attack))
        .collect::<origin_audit::Result<Vec<_>>>()?;
    let truth = inputs.truth.as_ref().expect("sweep requires truth");
    let accuracy = origin_audit::pipeline::verdict_accuracy(&verdicts, truth)?;
    let (param_count, layer_type) = inputs.target.layer_info(cell.layer_index)?;
    let record = LayerAccuracyRecord {
        layer_index: cell.layer_index,
        layer_depth: cell.layer_index,
        param_count,
        layer_type,
        bag_size: cell.bag_size,
        feat: cell.feat,
        shadow_epochs: cell.shadow_epochs,
        accuracy,
    };
    let report = VerdictReport::new(
        Method::Bagged,
        exp.layer_index,
        exp.bag_size,
        exp.feat.kind,
        exp.threshold,
        &verdicts,
        Some(truth),
    );
    Ok((record, report))
}

/// Grid sweep reusing the target checkpoint; shadows and meta-models are
/// retrained per cell. Failed cells are recorded and the sweep continues.
pub fn cmd_sweep(cfg: &RunConfig, out_dir: Option<&Path>) -> CliResult<PathBuf> {
    let pool = pool(cfg.workers)?;
    let cells = sweep_cells(cfg)?;
    let (inputs, used) = load_infer_inputs(cfg, true)?;
    let base = cfg.experiment(inputs.target.config())?;
    let mut run = Run::create(&output_root(out_dir), "sweep", &cfg.to_canonical_json(), cfg.seed)?;
    register(&mut run, &used)?;

    let results: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(&inputs, &base, cell))
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut reference = None;
    for (i, (cell, result)) in cells.iter().zip(results).enumerate() {
        match result {
            Ok((record, report)) => {
                run.write(
                    &format!("cell_{i:04}_verdicts"),
                    format!("cells/{i:04}/verdicts.json"),
                    report.to_json().as_bytes(),
                )?;
                reference.get_or_insert(report);
                records.push(record);
            }
            Err(e) => {
                warn!("sweep cell {i} failed: {e}");
                failures.push(CellFailure {
                    cell: cell.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    run.write("records", "records.json", &json(&records))?;
    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf)?;
    run.write("records_table", "records.csv", &buf)?;
    run.write("failures", "failures.json", &json(&failures))?;
    if let Some(r) = reference {
        run.write("reference_verdicts", "reference-verdicts.json", r.to_json().as_bytes())?;
    }
    info!("sweep finished: {} cells ok, {} failed", records.len(), failures.len());
    run.finish()
}
