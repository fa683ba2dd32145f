//! Desk-scale synthetic benchmark: origin-inference accuracy by bag size.
//!
//! Knobs come from environment variables, e.g.
//! `BENCH_STRENGTH=0 cargo run --release --example benchmark`.

use std::env;
use std::time::Instant;

use origin_audit::data::PartitionFractions;
use origin_audit::featurize::{FeatKind, FeatSpec};
use origin_audit::meta::MetaTrainConfig;
use origin_audit::metrics::binomial_interval;
use origin_audit::nn::{Activation, ModelConfig};
use origin_audit::pipeline::{
    baseline_random, fit_attack, infer_all, infer_all_sample_mi, prepare, train_target,
    verdict_accuracy, Aggregation, ExperimentConfig, ShadowConfig,
};
use origin_audit::synth::{synth_generate, LabelRule, SynthSpec};

fn knob<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> origin_audit::Result<()> {
    let start = Instant::now();
    let width: usize = knob("BENCH_WIDTH", 16);
    let hidden: usize = knob("BENCH_HIDDEN", 64);
    let spec = SynthSpec {
        num_origins: knob("BENCH_ORIGINS", 400),
        samples_min: knob("BENCH_MIN", 40),
        samples_max: knob("BENCH_MAX", 80),
        feature_width: width,
        origin_signal_strength: knob("BENCH_STRENGTH", 0.6),
        label_rule: LabelRule::OriginClass {
            num_classes: knob("BENCH_CLASSES", 2),
            origin_dependence: knob("BENCH_DEP", 0.9),
        },
        noise_std: knob("BENCH_NOISE", 0.3),
        seed: knob("BENCH_SEED", 7),
    };
    let dataset = synth_generate(&spec)?;
    let classes = match spec.label_rule {
        LabelRule::OriginClass { num_classes, .. } => num_classes,
        LabelRule::Regression { .. } => 1,
    };
    let target = ModelConfig {
        learning_rate: knob("BENCH_LR", 0.05),
        epochs: knob("BENCH_EPOCHS", 60),
        batch_size: 32,
        seed: 11,
        ..ModelConfig::classifier(
            vec![width, hidden, hidden, hidden / 2, classes],
            Activation::Relu,
        )
    };
    let mut cfg = ExperimentConfig {
        target,
        shadow: ShadowConfig {
            count: knob("BENCH_SHADOWS", 1),
            ..ShadowConfig::default()
        },
        layer_index: knob("BENCH_LAYER", 4),
        feat: FeatSpec::new(FeatKind::Statistics),
        bag_size: 32,
        threshold: 0.5,
        aggregation: Aggregation::Mean,
        partition: PartitionFractions::default(),
        meta: MetaTrainConfig {
            l2: knob("BENCH_L2", 1e-2),
            ..MetaTrainConfig::default()
        },
        min_samples_per_origin: 10,
        seed: knob("BENCH_SEED", 7),
    };
    let prep = prepare(&dataset, &cfg.partition, cfg.min_samples_per_origin, cfg.seed)?;
    let model = train_target(&prep.target_train, &cfg.target)?;
    println!(
        "origins {} test origins {} target train acc {:.3} ({:.1}s)",
        spec.num_origins,
        prep.truth.len(),
        model.accuracy(&origin_audit::data::labeled(prep.target_train.samples()))?,
        start.elapsed().as_secs_f64()
    );
    let n = prep.truth.len();
    let (lo, hi) = binomial_interval(n, 0.5, 0.99);
    println!("99% chance band: [{:.3}, {:.3}]", lo as f64 / n as f64, hi as f64 / n as f64);

    let bags: Vec<usize> = env::var("BENCH_BAGS")
        .unwrap_or_else(|_| "32,16,8,4,2,1".into())
        .split(',')
        .filter_map(|b| b.parse().ok())
        .collect();
    for b in bags {
        cfg.bag_size = b;
        let (attack, build) = fit_attack(&prep.proxy, &cfg, None)?;
        let verdicts = infer_all(&model, &prep.aux, &cfg, &attack)?;
        let acc = verdict_accuracy(&verdicts, &prep.truth)?;
        print!("b={b:>2} |S|={:>5} acc {acc:.3}", build.embeddings.len());
        if b == 1 {
            let mi = infer_all_sample_mi(&model, &prep.aux, &cfg, &attack)?;
            print!(" sample-mi {:.3}", verdict_accuracy(&mi, &prep.truth)?);
        }
        println!(" ({:.1}s)", start.elapsed().as_secs_f64());
    }
    let origins: Vec<_> = prep.truth.keys().cloned().collect();
    let random = baseline_random(&origins, cfg.seed);
    println!("random {:.3}", verdict_accuracy(&random, &prep.truth)?);
    Ok(())
}
