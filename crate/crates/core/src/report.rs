//! Verdict reports, ground-truth tables and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{OriginDataset, OriginId};
use crate::error::{Error, Result};
use crate::featurize::FeatKind;
use crate::metrics::{
    accuracy, coverage_curve, default_bag_grid, linfit_layer, membership_label_correlation,
    pearson, CoverageCurve, LabelCorrelation, LayerAccuracyRecord, LinearFit,
};
use crate::pipeline::InferenceVerdict;

pub const VERDICT_FORMAT: &str = "origin-audit/verdicts";
pub const EVALUATION_FORMAT: &str = "origin-audit/evaluation";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bagged,
    SampleMi,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub origin: OriginId,
    pub probability: f64,
    pub per_bag_probabilities: Vec<f64>,
    pub member: bool,
    pub ground_truth: Option<bool>,
    pub num_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub layer_index: usize,
    pub bag_size: usize,
    pub feat: FeatKind,
    pub threshold: f64,
    pub records: Vec<VerdictRecord>,
}

impl VerdictReport {
    pub fn new(
        method: Method,
        layer_index: usize,
        bag_size: usize,
        feat: FeatKind,
        threshold: f64,
        verdicts: &[InferenceVerdict],
        truth: Option<&BTreeMap<OriginId, bool>>,
    ) -> Self {
        VerdictReport {
            format: VERDICT_FORMAT.into(),
            version: REPORT_VERSION,
            method,
            layer_index,
            bag_size,
            feat,
            threshold,
            records: verdicts
                .iter()
                .map(|v| VerdictRecord {
                    origin: v.origin.clone(),
                    probability: v.probability,
                    per_bag_probabilities: v.per_bag_probabilities.clone(),
                    member: v.member,
                    ground_truth: truth.and_then(|t| t.get(&v.origin).copied()),
                    num_samples: v.num_samples,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("verdict report serializes");
        s.push('\n');
        s
    }

    /// Parse and validate a verdict report.
    pub fn from_json(s: &str) -> Result<Self> {
        let report: VerdictReport =
            serde_json::from_str(s).map_err(|e| Error::Deserialize(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Deserialize(m));
        if self.format != VERDICT_FORMAT {
            return bad(format!("unexpected report format {:?}", self.format));
        }
        if self.version != REPORT_VERSION {
            return bad(format!("unsupported report version {}", self.version));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(&r.origin) {
                return bad(format!("origin {} reported twice", r.origin));
            }
            let unit = |p: f64| (0.0..=1.0).contains(&p);
            if !unit(r.probability) || !r.per_bag_probabilities.iter().all(|&p| unit(p)) {
                return bad(format!("origin {}: probability outside [0, 1]", r.origin));
            }
            if r.member != (r.probability >= self.threshold) {
                return bad(format!(
                    "origin {}: verdict disagrees with probability and threshold",
                    r.origin
                ));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> BTreeMap<OriginId, bool> {
        self.records
            .iter()
            .filter_map(|r| r.ground_truth.map(|t| (r.origin.clone(), t)))
            .collect()
    }
}

/// Read a ground-truth table: a header row with `origin` and `member`
/// columns; `member` is one of `1`, `0`, `true`, `false`.
pub fn load_truth_from_reader<R: Read>(reader: R) -> Result<BTreeMap<OriginId, bool>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let ingest = |row: usize, column: &str, message: String| Error::Ingest {
        row,
        column: column.into(),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| ingest(0, "", e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest(0, name, "missing column".into()))
    };
    let (oi, mi) = (find("origin")?, find("member")?);
    let mut truth = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ingest(row, "", e.to_string()))?;
        let origin = OriginId::new(rec.get(oi).unwrap_or(""))
            .map_err(|e| ingest(row, "origin", e.to_string()))?;
        let member = match rec.get(mi).unwrap_or("") {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(ingest(row, "member", format!("expected 0/1/true/false, got {other:?}"))),
        };
        if truth.insert(origin.clone(), member).is_some() {
            return Err(ingest(row, "origin", format!("origin {origin} listed twice")));
        }
    }
    if truth.is_empty() {
        return Err(ingest(0, "", "ground-truth table has no rows".into()));
    }
    Ok(truth)
}

pub fn load_truth(path: &Path) -> Result<BTreeMap<OriginId, bool>> {
    load_truth_from_reader(std::fs::File::open(path)?)
}

pub fn write_truth<W: Write>(truth: &BTreeMap<OriginId, bool>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["origin", "member"]).map_err(err)?;
    for (o, &m) in truth {
        w.write_record([o.as_str(), if m { "1" } else { "0" }])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySummary {
    pub origins: usize,
    pub members_predicted: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySection {
    pub available: bool,
    pub accuracy: Option<f64>,
    pub labeled_origins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSection {
    pub records: Vec<LayerAccuracyRecord>,
    /// `None` when there are too few records or the predictors are degenerate.
    pub fit: Option<LinearFit>,
    pub pearson_depth: Option<f64>,
    pub pearson_params: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub probabilities: ProbabilitySummary,
    pub accuracy: AccuracySection,
    pub coverage: CoverageCurve,
    pub layers: LayerSection,
    /// Membership vs task-label correlation over the test samples.
    pub correlations: Vec<LabelCorrelation>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("evaluation report serializes");
        s.push('\n');
        s
    }
}

/// Consolidate a finished run. `truth` overrides any ground truth stored in
/// the report; `extra_records` are per-layer records from a sweep (when empty
/// the run contributes its own record if accuracy is known). `test_data`
/// enables the label-correlation section.
pub fn evaluate_run(
    report: &VerdictReport,
    truth: Option<&BTreeMap<OriginId, bool>>,
    layer_meta: Option<(usize, crate::nn::LayerType)>,
    extra_records: &[LayerAccuracyRecord],
    test_data: Option<(&OriginDataset, Option<usize>)>,
) -> Result<EvaluationReport> {
    if report.records.is_empty() {
        return crate::error::input("verdict report has no records");
    }
    let probs: Vec<f64> = report.records.iter().map(|r| r.probability).collect();
    let probabilities = ProbabilitySummary {
        origins: probs.len(),
        members_predicted: report.records.iter().filter(|r| r.member).count(),
        mean: probs.iter().sum::<f64>() / probs.len() as f64,
        min: probs.iter().copied().fold(f64::INFINITY, f64::min),
        max: probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };

    let truth = truth.cloned().unwrap_or_else(|| report.truth());
    let (pred, gt): (Vec<bool>, Vec<bool>) = report
        .records
        .iter()
        .filter_map(|r| truth.get(&r.origin).map(|&t| (r.member, t)))
        .unzip();
    let acc = if pred.is_empty() {
        None
    } else {
        Some(accuracy(&pred, &gt)?)
    };

    let sizes: BTreeMap<OriginId, usize> = report
        .records
        .iter()
        .map(|r| (r.origin.clone(), r.num_samples))
        .collect();
    let coverage = coverage_curve(&sizes, &default_bag_grid(&sizes))?;

    let mut records = extra_records.to_vec();
    if records.is_empty() {
        if let (Some(a), Some((param_count, layer_type))) = (acc, layer_meta) {
            records.push(LayerAccuracyRecord {
                layer_index: report.layer_index,
                layer_depth: report.layer_index,
                param_count,
                layer_type,
                bag_size: report.bag_size,
                feat: report.feat,
                shadow_epochs: None,
                accuracy: a,
            });
        }
    }
    let series = |f: fn(&LayerAccuracyRecord) -> f64| -> Option<f64> {
        let x: Vec<f64> = records.iter().map(f).collect();
        let y: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
        pearson(&x, &y).ok()
    };
    let layers = LayerSection {
        fit: linfit_layer(&records).ok(),
        pearson_depth: series(|r| r.layer_depth as f64),
        pearson_params: series(|r| r.param_count as f64),
        records,
    };

    let correlations = match test_data {
        Some((data, classes)) if !truth.is_empty() => {
            let (labels, membership): (Vec<f64>, Vec<bool>) = data
                .samples()
                .iter()
                .filter_map(|s| truth.get(&s.origin).map(|&t| (s.label, t)))
                .unzip();
            if labels.len() < 2 {
                Vec::new()
            } else {
                membership_label_correlation(&labels, &membership, classes)?
            }
        }
        _ => Vec::new(),
    };

    Ok(EvaluationReport {
        format: EVALUATION_FORMAT.into(),
        version: REPORT_VERSION,
        probabilities,
        accuracy: AccuracySection {
            available: acc.is_some(),
            accuracy: acc,
            labeled_origins: pred.len(),
        },
        coverage,
        layers,
        correlations,
    })
}

/// Flat table of layer records for plotting.
pub fn write_records_csv<W: Write>(records: &[LayerAccuracyRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "layer_index",
        "layer_depth",
        "param_count",
        "layer_type",
        "bag_size",
        "feat",
        "shadow_epochs",
        "accuracy",
    ])
    .map_err(err)?;
    for r in records {
        let kind = |v: &dyn erased::Named| v.name();
        w.write_record([
            r.layer_index.to_string(),
            r.layer_depth.to_string(),
            r.param_count.to_string(),
            kind(&r.layer_type),
            r.bag_size.to_string(),
            kind(&r.feat),
            r.shadow_epochs.map(|e| e.to_string()).unwrap_or_default(),
            r.accuracy.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coverage_csv<W: Write>(curve: &CoverageCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["bag_size", "coverage"]).map_err(err)?;
    for (b, xi) in &curve.points {
        w.write_record([b.to_string(), xi.to_string()]).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

mod erased {
    use serde::Serialize;

    /// Serialized name of a unit enum variant.
    pub trait Named {
        fn name(&self) -> String;
    }

    impl<T: Serialize> Named for T {
        fn name(&self) -> String {
            match serde_json::to_value(self) {
                Ok(serde_json::Value::String(s)) => s,
                Ok(v) => v.to_string(),
                Err(_) => String::new(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerType;

    fn oid(s: &str) -> OriginId {
        OriginId::new(s).unwrap()
    }

    fn verdict(o: &str, p: f64, n: usize) -> InferenceVerdict {
        InferenceVerdict {
            origin: oid(o),
            probability: p,
            per_bag_probabilities: vec![p],
            threshold: 0.5,
            member: p >= 0.5,
            num_samples: n,
        }
    }

    fn report(truth: Option<&BTreeMap<OriginId, bool>>) -> VerdictReport {
        let v = [verdict("a", 0.9, 3), verdict("b", 0.2, 5), verdict("c", 0.6, 10)];
        VerdictReport::new(Method::Bagged, 2, 4, FeatKind::Statistics, 0.5, &v, truth)
    }

    #[test]
    fn verdict_report_round_trip() {
        let r = report(None);
        let back = VerdictReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), r.to_json());
    }

    #[test]
    fn verdict_report_rejects_inconsistency() {
        let mut r = report(None);
        r.records[1].member = true;
        assert!(VerdictReport::from_json(&r.to_json()).is_err());
        let mut r = report(None);
        r.records[0].probability = 1.5;
        assert!(VerdictReport::from_json(&r.to_json()).is_err());
        assert!(VerdictReport::from_json("{}").is_err());
    }

    #[test]
    fn truth_table() {
        let t = load_truth_from_reader("origin,member\na,1\nb,false\n c , true\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t[&oid("a")] && !t[&oid("b")] && t[&oid("c")]);
        let mut buf = Vec::new();
        write_truth(&t, &mut buf).unwrap();
        assert_eq!(load_truth_from_reader(buf.as_slice()).unwrap(), t);

        let err = load_truth_from_reader("origin,member\na,yes\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingest { row: 1, .. }), "{err}");
        assert!(load_truth_from_reader("origin\na\n".as_bytes()).is_err());
        assert!(load_truth_from_reader("origin,member\na,1\na,0\n".as_bytes()).is_err());
        assert!(load_truth_from_reader("".as_bytes()).is_err());
    }

    #[test]
    fn evaluation_with_and_without_labels() {
        let truth: BTreeMap<_, _> = [(oid("a"), true), (oid("b"), false), (oid("c"), false)].into();
        let labeled = evaluate_run(&report(Some(&truth)), None, Some((10, LayerType::Output)), &[], None).unwrap();
        assert!(labeled.accuracy.available);
        assert!((labeled.accuracy.accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(labeled.coverage.points.last().unwrap(), &(10, 1.0));
        assert_eq!(labeled.layers.records.len(), 1);

        let unlabeled = evaluate_run(&report(None), None, None, &[], None).unwrap();
        assert!(!unlabeled.accuracy.available);
        assert_eq!(unlabeled.accuracy.accuracy, None);
        assert_eq!(unlabeled.probabilities.members_predicted, 2);

        let again = evaluate_run(&report(Some(&truth)), None, Some((10, LayerType::Output)), &[], None).unwrap();
        assert_eq!(again.to_json(), labeled.to_json());
    }

    #[test]
    fn records_table() {
        let r = LayerAccuracyRecord {
            layer_index: 1,
            layer_depth: 1,
            param_count: 40,
            layer_type: LayerType::Activation,
            bag_size: 8,
            feat: FeatKind::MeanMedian,
            shadow_epochs: Some(5),
            accuracy: 0.75,
        };
        let mut buf = Vec::new();
        write_records_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,1,40,activation,8,mean_median,5,0.75");
    }
}
