//! Accuracy, the data-coverage coefficient, Pearson correlation and the
//! layer-accuracy regression used in the analyses.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::OriginId;
use crate::error::{input, Error, Result};
use crate::featurize::FeatKind;
use crate::linalg::lstsq_qr;
use crate::nn::LayerType;

/// Fraction of matching member / non-member decisions.
pub fn accuracy(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return input(format!(
            "{} predictions but {} ground-truth labels",
            predicted.len(),
            truth.len()
        ));
    }
    if predicted.is_empty() {
        return input("accuracy over zero origins");
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Coverage coefficient ξ(b): the share of origins whose whole auxiliary set
/// fits into one bag of size `b`.
pub fn coverage(bag_size: usize, origin_sizes: &BTreeMap<OriginId, usize>) -> Result<f64> {
    if origin_sizes.is_empty() {
        return input("coverage of an empty partition");
    }
    if bag_size == 0 {
        return input("bag size must be >= 1");
    }
    let covered = origin_sizes.values().filter(|&&n| n <= bag_size).count();
    Ok(covered as f64 / origin_sizes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    /// `(bag_size, ξ)` pairs in increasing bag size.
    pub points: Vec<(usize, f64)>,
}

pub fn coverage_curve(
    origin_sizes: &BTreeMap<OriginId, usize>,
    bag_sizes: &[usize],
) -> Result<CoverageCurve> {
    let mut sizes = bag_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let points = sizes
        .into_iter()
        .map(|b| Ok((b, coverage(b, origin_sizes)?)))
        .collect::<Result<_>>()?;
    Ok(CoverageCurve { points })
}

/// Powers of two up to the largest origin, plus the largest origin size itself.
pub fn default_bag_grid(origin_sizes: &BTreeMap<OriginId, usize>) -> Vec<usize> {
    let max = origin_sizes.values().copied().max().unwrap_or(1).max(1);
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |b| b.checked_mul(2))
        .take_while(|&b| b < max)
        .collect();
    grid.push(max);
    grid
}

/// Product-moment correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return input(format!("pearson inputs differ in length: {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return input("pearson needs at least 2 points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "correlation is undefined for a constant series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Accuracy of one (layer, bag size, featurization, shadow) configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracyRecord {
    pub layer_index: usize,
    pub layer_depth: usize,
    pub param_count: usize,
    pub layer_type: LayerType,
    pub bag_size: usize,
    pub feat: FeatKind,
    /// Incremental shadow epochs; `None` for shadows trained from scratch.
    pub shadow_epochs: Option<usize>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coef_depth: f64,
    pub coef_params: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
}

/// Least-squares fit `accuracy ≈ intercept + coef_depth·l + coef_params·|W_l|`.
pub fn linfit_layer(records: &[LayerAccuracyRecord]) -> Result<LinearFit> {
    if records.len() < 3 {
        return Err(Error::Degenerate(format!(
            "a 3-coefficient fit needs at least 3 records, got {}",
            records.len()
        )));
    }
    let x = Array2::from_shape_fn((records.len(), 3), |(i, j)| match j {
        0 => 1.0,
        1 => records[i].layer_depth as f64,
        _ => records[i].param_count as f64,
    });
    let y = Array1::from_iter(records.iter().map(|r| r.accuracy));
    let beta = lstsq_qr(&x, &y)?;
    let residuals: Vec<f64> = (&y - &x.dot(&beta)).to_vec();
    let residual_norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(LinearFit {
        intercept: beta[0],
        coef_depth: beta[1],
        coef_params: beta[2],
        residuals,
        residual_norm,
    })
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Central binomial acceptance region `[lo, hi]` (as success counts) holding
/// at least `confidence` of the mass of Binomial(n, p): each tail outside it
/// has probability at most `(1 - confidence) / 2`.
pub fn binomial_interval(n: usize, p: f64, confidence: f64) -> (usize, usize) {
    let alpha = (1.0 - confidence) / 2.0;
    let pmf: Vec<f64> = (0..=n)
        .map(|k| {
            if p <= 0.0 {
                f64::from(u8::from(k == 0))
            } else if p >= 1.0 {
                f64::from(u8::from(k == n))
            } else {
                (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
            }
        })
        .collect();
    let mut lo = 0;
    let mut tail = 0.0;
    while lo < n && tail + pmf[lo] <= alpha {
        tail += pmf[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut tail = 0.0;
    while hi > 0 && tail + pmf[hi] <= alpha {
        tail += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

/// Whether `accuracy` over `n` trials is inside the `confidence` interval of a fair coin.
pub fn within_chance(accuracy: f64, n: usize, confidence: f64) -> bool {
    let (lo, hi) = binomial_interval(n, 0.5, confidence);
    let hits = (accuracy * n as f64).round() as usize;
    (lo..=hi).contains(&hits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCorrelation {
    /// Class index, or `"value"` for a scalar task label.
    pub label: String,
    /// `None` when undefined (one of the series is constant).
    pub pearson: Option<f64>,
}

/// Pearson correlation between each sample's origin membership and its task
/// label: one entry per class (one-vs-rest indicator) for classification, or
/// a single entry against the raw label for scalar tasks.
pub fn membership_label_correlation(
    labels: &[f64],
    membership: &[bool],
    num_classes: Option<usize>,
) -> Result<Vec<LabelCorrelation>> {
    let m: Vec<f64> = membership.iter().map(|&b| f64::from(u8::from(b))).collect();
    let corr = |y: &[f64]| match pearson(y, &m) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    };
    match num_classes {
        Some(k) => (0..k)
            .map(|c| {
                let ind: Vec<f64> = labels
                    .iter()
                    .map(|&y| f64::from(u8::from(y as usize == c)))
                    .collect();
                Ok(LabelCorrelation {
                    label: c.to_string(),
                    pearson: corr(&ind)?,
                })
            })
            .collect(),
        None => Ok(vec![LabelCorrelation {
            label: "value".into(),
            pearson: corr(labels)?,
        }]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(v: &[usize]) -> BTreeMap<OriginId, usize> {
        v.iter()
            .enumerate()
            .map(|(i, &n)| (OriginId::new(format!("o{i}")).unwrap(), n))
            .collect()
    }

    fn record(depth: usize, params: usize, accuracy: f64) -> LayerAccuracyRecord {
        LayerAccuracyRecord {
            layer_index: depth,
            layer_depth: depth,
            param_count: params,
            layer_type: LayerType::Activation,
            bag_size: 8,
            feat: FeatKind::Statistics,
            shadow_epochs: None,
            accuracy,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(accuracy(&[true, false], &[false, true]).unwrap(), 0.0);
        assert!(accuracy(&[true], &[true, false]).is_err());
    }

    #[test]
    fn coverage_examples() {
        let s = sizes(&[3, 5, 10]);
        assert!((coverage(5, &s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(coverage(10, &s).unwrap(), 1.0);
        assert_eq!(coverage(100, &s).unwrap(), 1.0);
        assert_eq!(coverage(2, &s).unwrap(), 0.0);
        assert!(coverage(3, &BTreeMap::new()).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn planted_fit() {
        let recs: Vec<_> = [(1, 100), (2, 50), (3, 300), (4, 80), (5, 20)]
            .iter()
            .map(|&(d, p)| record(d, p, 0.01 * p as f64))
            .collect();
        let fit = linfit_layer(&recs).unwrap();
        assert!((fit.coef_params - 0.01).abs() < 1e-12);
        assert!(fit.coef_depth.abs() < 1e-12);
        assert!(fit.residual_norm < 1e-10);
        assert!(matches!(linfit_layer(&recs[..2]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn collinear_predictors_are_degenerate() {
        let recs: Vec<_> = (1..6).map(|d| record(d, 10 * d, 0.1 * d as f64)).collect();
        assert!(matches!(linfit_layer(&recs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn binomial_interval_is_symmetric_and_tight() {
        let (lo, hi) = binomial_interval(500, 0.5, 0.99);
        assert_eq!(lo + hi, 500);
        // normal approximation: 250 ± 2.576 * 11.18 ≈ [221, 279]
        assert!((219..=223).contains(&lo), "{lo}");
        assert!(within_chance(0.5, 500, 0.99));
        assert!(!within_chance(0.7, 500, 0.99));
    }

    #[test]
    fn label_correlation_per_class() {
        let labels = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let members = [true, false, false, true, false, false];
        let c = membership_label_correlation(&labels, &members, Some(3)).unwrap();
        assert_eq!(c.len(), 3);
        assert!((c[0].pearson.unwrap() - 1.0).abs() < 1e-12);
        let c = membership_label_correlation(&[1.0; 6], &members, None).unwrap();
        assert_eq!(c[0].pearson, None);
    }

    proptest! {
        #[test]
        fn coverage_monotone(v in prop::collection::vec(1usize..200, 1..40)) {
            let s = sizes(&v);
            let max = *v.iter().max().unwrap();
            let mut prev = 0.0;
            for b in 1..=max + 3 {
                let xi = coverage(b, &s).unwrap();
                prop_assert!(xi >= prev);
                prev = xi;
            }
            prop_assert_eq!(coverage(max, &s).unwrap(), 1.0);
        }

        #[test]
        fn pearson_affine_invariance(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            a in prop::sample::select(vec![-3.5, -0.2, 0.7, 12.0]),
            b in -10.0f64..10.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let r2 = pearson(&ax, &y).unwrap();
                prop_assert!((r2 - a.signum() * r).abs() < 1e-9);
            }
        }
    }
}
