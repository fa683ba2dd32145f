//! Learning-free bag featurizers and bag generation.
//!
//! All statistics are taken per column (per neuron of the referenced layer)
//! across the rows of a bag.
//!
//! Conventions:
//! - Percentiles interpolate linearly between closest ranks: for sorted
//!   values `x[0..n]` the p-th percentile sits at rank `p/100 * (n-1)`.
//!   The median is the 50th percentile under the same rule.
//! - Variance uses the population convention (divide by `n`).
//! - Histogram bins are equal-width over a fixed range; values outside the
//!   range are counted in the edge bins.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::OriginId;
use crate::error::{input, Result};
use crate::nn::{argmax, LayerAccessMatrix, LayerType};
use crate::seed;

pub const STATISTICS_PERCENTILES: [f64; 7] = [20.0, 25.0, 40.0, 50.0, 60.0, 75.0, 80.0];
/// max, min, mean, seven percentiles, variance, standard deviation.
pub const STATISTICS_PER_COLUMN: usize = 12;
pub const TEXT_STATS_WIDTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatKind {
    MeanMedian,
    Statistics,
    TextStats,
    Histogram,
    /// mean_median ∥ statistics ∥ histogram (∥ text_stats when available).
    Compound,
}

impl FeatKind {
    pub fn uses_histogram(self) -> bool {
        matches!(self, FeatKind::Histogram | FeatKind::Compound)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatSpec {
    pub kind: FeatKind,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Fixed bin range. When absent it is frozen from shadow-side layer
    /// outputs before meta-model training.
    #[serde(default)]
    pub histogram_range: Option<(f64, f64)>,
}

fn default_bins() -> usize {
    10
}

impl FeatSpec {
    pub fn new(kind: FeatKind) -> Self {
        FeatSpec {
            kind,
            histogram_bins: default_bins(),
            histogram_range: None,
        }
    }

    pub fn histogram(bins: usize, low: f64, high: f64) -> Self {
        FeatSpec {
            kind: FeatKind::Histogram,
            histogram_bins: bins,
            histogram_range: Some((low, high)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.uses_histogram() {
            if self.histogram_bins < 2 {
                return input("histogram needs at least 2 bins");
            }
            if let Some((lo, hi)) = self.histogram_range {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return input(format!("histogram range [{lo}, {hi}) is empty"));
                }
            }
        }
        Ok(())
    }

    /// Freeze the histogram range from reference layer outputs if it is not set.
    pub fn with_range_from(&self, reference: ArrayView2<'_, f64>) -> FeatSpec {
        let mut out = self.clone();
        if self.kind.uses_histogram() && self.histogram_range.is_none() {
            let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.histogram_range = Some(if lo.is_finite() && hi.is_finite() && lo < hi {
                (lo, hi)
            } else if lo.is_finite() {
                (lo - 0.5, lo + 0.5)
            } else {
                (0.0, 1.0)
            });
        }
        out
    }

    /// Embedding length for a layer of the given width.
    pub fn embedding_width(&self, layer_width: usize, with_text: bool) -> usize {
        match self.kind {
            FeatKind::MeanMedian => 2 * layer_width,
            FeatKind::Statistics => STATISTICS_PER_COLUMN * layer_width,
            FeatKind::TextStats => TEXT_STATS_WIDTH,
            FeatKind::Histogram => self.histogram_bins,
            FeatKind::Compound => {
                (2 + STATISTICS_PER_COLUMN) * layer_width
                    + self.histogram_bins
                    + if with_text { TEXT_STATS_WIDTH } else { 0 }
            }
        }
    }
}

/// One featurized bag with its origin-membership label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagEmbedding {
    pub features: Vec<f64>,
    pub membership: bool,
    pub origin: OriginId,
    pub bag_index: usize,
}

/// Per-row text metadata aligned with the rows of a layer-access matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TextAux {
    pub lengths: Vec<u32>,
    pub labels: Vec<f64>,
}

/// Row ranges of `n` contiguous groups whose sizes differ by at most one,
/// larger groups first.
pub fn even_ranges(len: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 {
        return input("cannot split into 0 groups");
    }
    if n > len {
        return input(format!("cannot split {len} rows into {n} non-empty groups"));
    }
    let (base, extra) = (len / n, len % n);
    let mut start = 0;
    Ok((0..n)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect())
}

/// Partition rows evenly into `n` groups, keeping row order.
pub fn split_even(rows: ArrayView2<'_, f64>, n: usize) -> Result<Vec<Array2<f64>>> {
    Ok(even_ranges(rows.nrows(), n)?
        .into_iter()
        .map(|r| rows.slice(ndarray::s![r, ..]).to_owned())
        .collect())
}

/// A seeded permutation of `0..n`, used to assign rows to bags.
pub fn shuffled_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

fn non_empty(bag: &ArrayView2<'_, f64>) -> Result<()> {
    if bag.nrows() == 0 || bag.ncols() == 0 {
        return input("bag is empty");
    }
    Ok(())
}

fn sorted(col: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Percentile of already-sorted values by linear interpolation between closest ranks.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
    }
}

fn mean(col: ArrayView1<'_, f64>) -> f64 {
    col.sum() / col.len() as f64
}

/// Per-column means followed by per-column medians.
pub fn feat_mean_median(bag: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    non_empty(&bag)?;
    let cols = bag.ncols();
    let mut out = Vec::with_capacity(2 * cols);
    out.extend(bag.axis_iter(Axis(1)).map(mean));
    out.extend(
        bag.axis_iter(Axis(1))
            .map(|c| percentile_sorted(&sorted(c), 50.0)),
    );
    Ok(out)
}

/// Twelve statistics per column, column by column.
pub fn feat_statistics(bag: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    non_empty(&bag)?;
    let mut out = Vec::with_capacity(STATISTICS_PER_COLUMN * bag.ncols());
    for col in bag.axis_iter(Axis(1)) {
        let s = sorted(col);
        let m = mean(col);
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        out.push(s[s.len() - 1]);
        out.push(s[0]);
        out.push(m);
        out.extend(STATISTICS_PERCENTILES.iter().map(|&p| percentile_sorted(&s, p)));
        out.push(var);
        out.push(var.sqrt());
    }
    Ok(out)
}

/// `[mean length, max length, min length, mean |prediction - label|]`.
pub fn feat_text_stats(lengths: &[u32], predictions: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return input("text statistics over an empty bag");
    }
    if lengths.len() != predictions.len() || lengths.len() != labels.len() {
        return input(format!(
            "text statistics inputs differ in length: {} lengths, {} predictions, {} labels",
            lengths.len(),
            predictions.len(),
            labels.len()
        ));
    }
    let n = lengths.len() as f64;
    let mean_len = lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let min_len = lengths.iter().copied().min().unwrap_or(0);
    let err = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / n;
    Ok(vec![mean_len, f64::from(max_len), f64::from(min_len), err])
}

/// Relative frequencies of all bag entries over fixed equal-width bins.
pub fn feat_histogram(bag: ArrayView2<'_, f64>, spec: &FeatSpec) -> Result<Vec<f64>> {
    non_empty(&bag)?;
    spec.validate()?;
    if !spec.kind.uses_histogram() {
        return input("feat_histogram needs a histogram spec");
    }
    let (lo, hi) = spec
        .histogram_range
        .ok_or_else(|| crate::error::Error::Input("histogram range is not fixed".into()))?;
    let bins = spec.histogram_bins;
    let mut counts = vec![0usize; bins];
    for &v in bag.iter() {
        let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
        let b = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    let total = bag.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Text fields for the rows of one bag.
#[derive(Clone, Copy, Debug)]
pub struct TextBag<'a> {
    pub lengths: &'a [u32],
    pub predictions: &'a [f64],
    pub labels: &'a [f64],
}

/// Featurize one bag under `spec`.
pub fn featurize(
    spec: &FeatSpec,
    bag: ArrayView2<'_, f64>,
    text: Option<TextBag<'_>>,
) -> Result<Vec<f64>> {
    let text_stats = |t: TextBag<'_>| feat_text_stats(t.lengths, t.predictions, t.labels);
    match spec.kind {
        FeatKind::MeanMedian => feat_mean_median(bag),
        FeatKind::Statistics => feat_statistics(bag),
        FeatKind::Histogram => feat_histogram(bag, spec),
        FeatKind::TextStats => match text {
            Some(t) => text_stats(t),
            None => input("text_stats needs text lengths and labels"),
        },
        FeatKind::Compound => {
            let mut out = feat_mean_median(bag)?;
            out.extend(feat_statistics(bag)?);
            out.extend(feat_histogram(bag, spec)?);
            if let Some(t) = text {
                out.extend(text_stats(t)?);
            }
            Ok(out)
        }
    }
}

/// Split layer outputs into bags of at most `bag_size` rows (in the given
/// row order) and featurize each, labelling every embedding with `membership`.
///
/// If there are at most `bag_size` rows, a single embedding covers all of
/// them; otherwise `ceil(rows / bag_size)` even groups are formed.
pub fn gen_data(
    spec: &FeatSpec,
    access: &LayerAccessMatrix,
    bag_size: usize,
    membership: bool,
    origin: &OriginId,
    text: Option<&TextAux>,
) -> Result<Vec<BagEmbedding>> {
    if bag_size == 0 {
        return input("bag size must be >= 1");
    }
    let rows = access.values.nrows();
    if rows == 0 {
        return input("no layer outputs to featurize");
    }
    let text_rows = match (spec.kind, text) {
        (FeatKind::TextStats, None) => {
            return input("text_stats needs text lengths and labels");
        }
        (FeatKind::TextStats | FeatKind::Compound, Some(t)) => {
            if access.layer_type != LayerType::Output {
                return input("text statistics apply only to the last layer");
            }
            if t.lengths.len() != rows || t.labels.len() != rows {
                return input("text metadata is not aligned with layer rows");
            }
            let preds: Vec<f64> = access
                .values
                .outer_iter()
                .map(|r| argmax(r.iter().copied()) as f64)
                .collect();
            Some((t, preds))
        }
        _ => None,
    };
    let n = if rows <= bag_size {
        1
    } else {
        rows.div_ceil(bag_size)
    };
    even_ranges(rows, n)?
        .into_iter()
        .enumerate()
        .map(|(bag_index, r)| {
            let bag = access.values.slice(ndarray::s![r.clone(), ..]);
            let tb = text_rows.as_ref().map(|(t, preds)| TextBag {
                lengths: &t.lengths[r.clone()],
                predictions: &preds[r.clone()],
                labels: &t.labels[r.clone()],
            });
            Ok(BagEmbedding {
                features: featurize(spec, bag, tb)?,
                membership,
                origin: origin.clone(),
                bag_index,
            })
        })
        .collect()
}
