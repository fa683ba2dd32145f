//! Replays the checked-in fuzz corpus through each parser on stable.

use std::path::{Path, PathBuf};

use origin_audit::checkpoint;
use origin_audit::ingest::{load_delimited_from_reader, DatasetSchema};
use origin_audit::report::{load_truth_from_reader, write_truth, VerdictReport};
use origin_audit_cli::config::RunConfig;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn ok_count<T, E>(results: impl Iterator<Item = Result<T, E>>) -> usize {
    results.filter(Result::is_ok).count()
}

#[test]
fn checkpoint_seeds() {
    let s = seeds("checkpoint_load");
    let n = ok_count(s.iter().map(|(_, b)| checkpoint::load(b)));
    assert_eq!(n, 2, "the two full checkpoints load, the truncated one does not");
    for (_, b) in &s {
        if let Ok(m) = checkpoint::load(b) {
            assert_eq!(&checkpoint::save(&m), b);
        }
    }
}

#[test]
fn delimited_seeds() {
    let schema = DatasetSchema::default();
    for (p, b) in seeds("delimited_ingest") {
        if let Ok(ds) = load_delimited_from_reader(&b[..], &schema) {
            assert!(ds.origins().len() <= ds.len(), "{}", p.display());
        }
    }
}

#[test]
fn ground_truth_seeds() {
    let s = seeds("ground_truth");
    let n = ok_count(s.iter().map(|(_, b)| load_truth_from_reader(&b[..])));
    assert_eq!(n, 2, "duplicate and origin-less tables are rejected");
    for (_, b) in &s {
        if let Ok(t) = load_truth_from_reader(&b[..]) {
            let mut buf = Vec::new();
            write_truth(&t, &mut buf).unwrap();
            assert_eq!(load_truth_from_reader(&buf[..]).unwrap(), t);
        }
    }
}

#[test]
fn run_config_seeds() {
    for (p, b) in seeds("run_config") {
        let text = String::from_utf8(b).unwrap();
        assert!(RunConfig::from_toml(&text).is_ok(), "{}", p.display());
    }
}

#[test]
fn verdict_seeds() {
    let s = seeds("verdict_report");
    let parsed: Vec<_> = s
        .iter()
        .map(|(_, b)| VerdictReport::from_json(std::str::from_utf8(b).unwrap()))
        .collect();
    assert_eq!(parsed.iter().filter(|r| r.is_ok()).count(), 2);
    for r in parsed.into_iter().flatten() {
        assert_eq!(VerdictReport::from_json(&r.to_json()).unwrap(), r);
    }
}
