use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_origin-audit");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn quickstart() -> PathBuf {
    configs().join("quickstart.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ORIGIN_AUDIT_OUTPUT_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Run a command that must succeed and return the run directory it printed.
fn ok(args: &[&str]) -> PathBuf {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn fail(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    tmp: TempDir,
    synth: PathBuf,
    target: PathBuf,
}

impl Fixture {
    fn new(config: &Path) -> Fixture {
        let tmp = TempDir::new().unwrap();
        let out = s(tmp.path()).to_string();
        let synth = ok(&["synth", s(config), "--out-dir", &out]);
        let train = ok(&[
            "train-target",
            s(config),
            "--out-dir",
            &out,
            "--dataset",
            s(&synth.join("target_train.csv")),
        ]);
        Fixture {
            target: train.join("target.ckpt"),
            synth,
            tmp,
        }
    }

    fn out(&self) -> &str {
        s(self.tmp.path())
    }

    fn infer_args<'a>(&'a self, cmd: &'a str, config: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![
            cmd,
            s(config),
            "--out-dir",
            self.out(),
            "--target",
            s(&self.target),
        ];
        v.extend(extra);
        v
    }
}

fn paths(f: &Fixture) -> (String, String, String) {
    (
        s(&f.synth.join("proxy.csv")).to_string(),
        s(&f.synth.join("aux.csv")).to_string(),
        s(&f.synth.join("truth.csv")).to_string(),
    )
}

#[test]
fn synth_is_seeded_and_covers_every_origin() {
    let tmp = TempDir::new().unwrap();
    let a = ok(&["synth", s(&quickstart()), "--out-dir", s(tmp.path())]);
    let b = ok(&["synth", s(&quickstart()), "--out-dir", s(tmp.path())]);
    assert_ne!(a, b, "each invocation gets a fresh run directory");
    let data = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(data, std::fs::read_to_string(b.join("dataset.csv")).unwrap());

    let mut rdr = csv::Reader::from_reader(data.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "origin").unwrap();
    let origins: std::collections::BTreeSet<String> =
        rdr.records().map(|r| r.unwrap()[col].to_string()).collect();
    assert_eq!(origins.len(), 40);

    let c = ok(&["synth", s(&quickstart()), "--out-dir", s(tmp.path()), "--seed", "2"]);
    assert_ne!(data, std::fs::read_to_string(c.join("dataset.csv")).unwrap());

    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert!(m["artifacts"]["truth"].is_string());
}

#[test]
fn missing_config_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(quickstart()).unwrap();
    let cfg = tmp.path().join("broken.toml");
    std::fs::write(&cfg, text.replace("feature_width = 8\n", "")).unwrap();
    let err = fail(&["synth", s(&cfg), "--out-dir", s(tmp.path())]);
    assert!(err.contains("feature_width"), "{err}");
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .args(["synth", s(&quickstart())])
        .env("ORIGIN_AUDIT_OUTPUT_ROOT", tmp.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert!(dir.starts_with(tmp.path()));
    assert!(dir.join("manifest.json").is_file());
}

#[test]
fn train_target_checkpoint_resume_and_shape_errors() {
    let f = Fixture::new(&quickstart());
    let ckpt = std::fs::read(&f.target).unwrap();
    let model = origin_audit::checkpoint::load(&ckpt).unwrap();
    assert_eq!(model.input_width(), 8);
    assert_eq!(model.trained_epochs(), 40);

    let resumed = ok(&[
        "train-target",
        s(&quickstart()),
        "--out-dir",
        f.out(),
        "--dataset",
        s(&f.synth.join("target_train.csv")),
        "--resume",
        s(&f.target),
    ]);
    let m = read_json(&resumed.join("manifest.json"));
    assert_eq!(m["trained_epochs"], 80);
    assert!(m["inputs"]["resume"]["sha256"].is_string());

    // A dataset with a different number of feature columns.
    let text = std::fs::read_to_string(quickstart()).unwrap();
    let wide = f.tmp.path().join("wide.toml");
    std::fs::write(&wide, text.replace("feature_width = 8", "feature_width = 5")).unwrap();
    let other = ok(&["synth", s(&wide), "--out-dir", f.out()]);
    let err = fail(&[
        "train-target",
        s(&quickstart()),
        "--out-dir",
        f.out(),
        "--dataset",
        s(&other.join("dataset.csv")),
    ]);
    assert!(err.contains("shape mismatch"), "{err}");
    assert!(err.contains("5") && err.contains("8"), "{err}");
}

#[test]
fn infer_scores_every_aux_origin_reproducibly() {
    let f = Fixture::new(&quickstart());
    let (proxy, aux, truth) = paths(&f);
    let extra = ["--proxy", &proxy, "--aux", &aux, "--truth", &truth];
    let a = ok(&f.infer_args("infer", &quickstart(), &extra));
    let b = ok(&f.infer_args("infer", &quickstart(), &extra));
    let va = std::fs::read_to_string(a.join("verdicts.json")).unwrap();
    assert_eq!(va, std::fs::read_to_string(b.join("verdicts.json")).unwrap());

    let report = origin_audit::report::VerdictReport::from_json(&va).unwrap();
    let aux_data = std::fs::read_to_string(&aux).unwrap();
    let mut rdr = csv::Reader::from_reader(aux_data.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "origin").unwrap();
    let origins: std::collections::BTreeSet<String> =
        rdr.records().map(|r| r.unwrap()[col].to_string()).collect();
    assert_eq!(report.records.len(), origins.len());
    assert!(report.records.iter().all(|r| r.ground_truth.is_some()));
    for name in ["verdicts-sample-mi.json", "verdicts-random.json", "attack.json", "shadow-0.ckpt"] {
        assert!(a.join(name).is_file(), "{name}");
    }
}

#[test]
fn infer_names_a_missing_checkpoint_before_creating_a_run() {
    let f = Fixture::new(&quickstart());
    let (proxy, aux, _) = paths(&f);
    let missing = f.tmp.path().join("nope.ckpt");
    let root = f.tmp.path().join("fresh");
    let err = fail(&[
        "infer",
        s(&quickstart()),
        "--out-dir",
        s(&root),
        "--target",
        s(&missing),
        "--proxy",
        &proxy,
        "--aux",
        &aux,
    ]);
    assert!(err.contains("nope.ckpt"), "{err}");
    assert!(!root.exists());
}

#[test]
fn evaluate_infer_and_sweep_runs() {
    let f = Fixture::new(&quickstart());
    let (proxy, aux, truth) = paths(&f);
    let inf = ok(&f.infer_args("infer", &quickstart(), &["--proxy", &proxy, "--aux", &aux]));
    let manifest = inf.join("manifest.json");
    let ev = ok(&[
        "evaluate",
        s(&quickstart()),
        "--out-dir",
        f.out(),
        "--manifest",
        s(&manifest),
        "--truth",
        &truth,
    ]);
    let e = read_json(&ev.join("evaluation.json"));
    for key in ["probabilities", "accuracy", "coverage", "layers", "correlations"] {
        assert!(!e[key].is_null(), "{key}");
    }
    assert_eq!(e["accuracy"]["available"], true);
    assert!(ev.join("coverage.csv").is_file());

    // Without truth the accuracy section says so instead of failing.
    let ev = ok(&["evaluate", s(&quickstart()), "--out-dir", f.out(), "--manifest", s(&manifest)]);
    assert_eq!(read_json(&ev.join("evaluation.json"))["accuracy"]["available"], false);

    // Malformed ground truth is an ingestion error naming the file.
    let bad = f.tmp.path().join("bad-truth.csv");
    std::fs::write(&bad, "origin,member\na,maybe\n").unwrap();
    let err = fail(&[
        "evaluate",
        s(&quickstart()),
        "--out-dir",
        f.out(),
        "--manifest",
        s(&manifest),
        "--truth",
        s(&bad),
    ]);
    assert!(err.contains("bad-truth.csv"), "{err}");

    // Two layers by three bag sizes: one record per cell.
    let text = std::fs::read_to_string(quickstart()).unwrap();
    let grid = f.tmp.path().join("grid.toml");
    std::fs::write(&grid, text.replace("layer_index = [1, 2, 3]", "layer_index = [2, 3]")).unwrap();
    let sw = ok(&f.infer_args("sweep", &grid, &["--proxy", &proxy, "--aux", &aux, "--truth", &truth]));
    let ev = ok(&["evaluate", s(&grid), "--out-dir", f.out(), "--manifest", s(&sw.join("manifest.json"))]);
    let e = read_json(&ev.join("evaluation.json"));
    assert_eq!(e["layers"]["records"].as_array().unwrap().len(), 6);
    let csv = std::fs::read_to_string(ev.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn empty_sweep_axis_is_a_diagnostic() {
    let f = Fixture::new(&quickstart());
    let (proxy, aux, truth) = paths(&f);
    let text = std::fs::read_to_string(quickstart()).unwrap();
    let grid = f.tmp.path().join("empty.toml");
    std::fs::write(&grid, text.replace("bag_size = [1, 4, 8]", "bag_size = []")).unwrap();
    let err = fail(&f.infer_args("sweep", &grid, &["--proxy", &proxy, "--aux", &aux, "--truth", &truth]));
    assert!(err.contains("sweep.bag_size is empty"), "{err}");
}

/// One-sided two-proportion z statistic for `a > b` with `n` trials each.
fn z_greater(a: f64, b: f64, n: f64) -> f64 {
    let p = (a + b) / 2.0;
    (a - b) / (p * (1.0 - p) * 2.0 / n).sqrt()
}

/// Incremental shadows trained too briefly do not imitate the target and
/// trained too long they overfit the proxy members, so accuracy peaks in
/// between.
#[test]
fn shadow_epochs_rise_then_decline() {
    let config = configs().join("benchmark.toml");
    let f = Fixture::new(&config);
    let (proxy, aux, truth) = paths(&f);
    let text = std::fs::read_to_string(&config).unwrap();
    let grid = f.tmp.path().join("epochs.toml");
    let sweep_at = text.find("[sweep]").unwrap();
    std::fs::write(
        &grid,
        format!(
            "{}[sweep]\nbag_size = [32]\nshadow_epochs = [1, 5, 20, 80]\n",
            &text[..sweep_at]
        ),
    )
    .unwrap();
    let sw = ok(&f.infer_args("sweep", &grid, &["--proxy", &proxy, "--aux", &aux, "--truth", &truth]));
    let records = read_json(&sw.join("records.json"));
    let acc: Vec<f64> = records
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["accuracy"].as_f64().unwrap())
        .collect();
    assert_eq!(acc.len(), 4);
    let n = 200.0;
    let (peak, &best) = acc
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert!(peak > 0 && peak < acc.len() - 1, "no interior peak: {acc:?}");
    for &end in [acc[0], acc[acc.len() - 1]].iter() {
        assert!(z_greater(best, end, n) >= 1.645, "peak not significant: {acc:?}");
    }
}
