//! Origin-labeled datasets and the origin-level / sample-level splits used to
//! build target, shadow and evaluation sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::nn::LabeledData;
use crate::seed;

/// Identity of a data origin (a data generator or a data subject). Two
/// samples share an origin exactly when their ids are equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OriginId(String);

impl OriginId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return input("origin id must be non-empty");
        }
        Ok(OriginId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for OriginId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        OriginId::new(s)
    }
}

impl From<OriginId> for String {
    fn from(o: OriginId) -> String {
        o.0
    }
}

impl fmt::Display for OriginId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Stable row id within the dataset it was loaded or generated into.
    pub id: usize,
    pub features: Vec<f64>,
    /// Class index for classification tasks, real target for regression.
    pub label: f64,
    pub origin: OriginId,
    /// Token length of the underlying text, when the modality has one.
    pub length: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OriginDataset {
    samples: Vec<Sample>,
    feature_width: usize,
}

impl OriginDataset {
    pub fn new(samples: Vec<Sample>, feature_width: usize) -> Result<Self> {
        if feature_width == 0 {
            return input("feature_width must be positive");
        }
        if let Some(s) = samples.iter().find(|s| s.features.len() != feature_width) {
            return input(format!(
                "sample {} has {} features, expected {feature_width}",
                s.id,
                s.features.len()
            ));
        }
        Ok(OriginDataset {
            samples,
            feature_width,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn origins(&self) -> BTreeSet<OriginId> {
        self.samples.iter().map(|s| s.origin.clone()).collect()
    }

    /// Samples whose origin is in `origins`, order preserved.
    pub fn restrict(&self, origins: &BTreeSet<OriginId>) -> OriginDataset {
        OriginDataset {
            samples: self
                .samples
                .iter()
                .filter(|s| origins.contains(&s.origin))
                .cloned()
                .collect(),
            feature_width: self.feature_width,
        }
    }

    /// Drop origins with fewer than `min` samples. Returns the kept dataset
    /// and the dropped origin ids.
    pub fn filter_min_samples(&self, min: usize) -> (OriginDataset, Vec<OriginId>) {
        let mut counts: BTreeMap<&OriginId, usize> = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(&s.origin).or_default() += 1;
        }
        let dropped: Vec<OriginId> = counts
            .iter()
            .filter(|(_, &c)| c < min)
            .map(|(o, _)| (*o).clone())
            .collect();
        if !dropped.is_empty() {
            log::warn!(
                "dropping {} origins with fewer than {min} samples",
                dropped.len()
            );
        }
        let keep: BTreeSet<OriginId> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min)
            .map(|(o, _)| o.clone())
            .collect();
        (self.restrict(&keep), dropped)
    }
}

/// Stack sample features into a `rows x feature_width` matrix.
pub fn feature_matrix(samples: &[Sample]) -> Array2<f64> {
    let width = samples.first().map_or(0, |s| s.features.len());
    Array2::from_shape_fn((samples.len(), width), |(i, j)| samples[i].features[j])
}

pub fn labeled(samples: &[Sample]) -> LabeledData {
    LabeledData {
        inputs: feature_matrix(samples),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

/// The quotient set X/∼: samples grouped by origin. Groups keep dataset order.
pub fn quotient(dataset: &OriginDataset) -> Result<BTreeMap<OriginId, Vec<Sample>>> {
    if dataset.is_empty() {
        return input("cannot partition an empty dataset");
    }
    let mut groups: BTreeMap<OriginId, Vec<Sample>> = BTreeMap::new();
    for s in dataset.samples() {
        groups.entry(s.origin.clone()).or_default().push(s.clone());
    }
    Ok(groups)
}

/// Round half up, then clamp so both sides of a split of `n` are non-empty.
pub fn split_count(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 + 0.5).floor() as usize;
    k.clamp(1, n.saturating_sub(1).max(1))
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return input(format!("{name} must lie in (0, 1), got {f}"));
    }
    Ok(())
}

/// Split origins into member and non-member sets.
pub fn inter_split(
    origins: &BTreeSet<OriginId>,
    member_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<OriginId>, BTreeSet<OriginId>)> {
    check_fraction("member_fraction", member_fraction)?;
    if origins.len() < 2 {
        return input(format!(
            "inter-origin split needs at least 2 origins, got {}",
            origins.len()
        ));
    }
    let mut order: Vec<&OriginId> = origins.iter().collect();
    order.shuffle(&mut seed::rng(seed));
    let k = split_count(member_fraction, order.len());
    let members = order[..k].iter().map(|o| (*o).clone()).collect();
    let others = order[k..].iter().map(|o| (*o).clone()).collect();
    Ok((members, others))
}

/// Split one origin's samples into a training part and a disjoint held-out
/// part. Both parts keep the group's order.
pub fn intra_split(
    group: &[Sample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    check_fraction("train_fraction", train_fraction)?;
    if group.len() < 2 {
        return input(format!(
            "intra-origin split needs at least 2 samples, got {}",
            group.len()
        ));
    }
    let mut idx: Vec<usize> = (0..group.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    let k = split_count(train_fraction, group.len());
    let mut in_train = vec![false; group.len()];
    for &i in &idx[..k] {
        in_train[i] = true;
    }
    let (train, held): (Vec<_>, Vec<_>) = group
        .iter()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        held.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

/// Origin-level partition of a whole dataset into target, proxy (split into
/// shadow members and non-members) and extra origins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub target_origins: BTreeSet<OriginId>,
    pub proxy_member_origins: BTreeSet<OriginId>,
    pub proxy_nonmember_origins: BTreeSet<OriginId>,
    pub extra_origins: BTreeSet<OriginId>,
    pub intra_ratio: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFractions {
    /// Share of origins assigned to the target model.
    pub target: f64,
    /// Share of origins assigned to the proxy pool; the rest are extra origins.
    pub proxy: f64,
    /// Share of proxy origins used as shadow-model members.
    pub member: f64,
    /// Share of each member origin's samples used for training.
    pub intra_train: f64,
}

impl Default for PartitionFractions {
    fn default() -> Self {
        PartitionFractions {
            target: 0.25,
            proxy: 0.5,
            member: 0.5,
            intra_train: 0.5,
        }
    }
}

impl PartitionPlan {
    pub fn new(
        origins: &BTreeSet<OriginId>,
        fractions: &PartitionFractions,
        seed: u64,
    ) -> Result<Self> {
        check_fraction("target fraction", fractions.target)?;
        check_fraction("proxy fraction", fractions.proxy)?;
        check_fraction("intra_train fraction", fractions.intra_train)?;
        if fractions.target + fractions.proxy >= 1.0 {
            return input("target + proxy fractions must leave room for extra origins");
        }
        let n = origins.len();
        let mut order: Vec<&OriginId> = origins.iter().collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, "origin-partition")));
        let n_target = (fractions.target * n as f64 + 0.5).floor() as usize;
        let n_proxy = (fractions.proxy * n as f64 + 0.5).floor() as usize;
        if n_target == 0 || n_proxy < 2 || n_target + n_proxy >= n {
            return input(format!(
                "{n} origins cannot be split into {n_target} target, {n_proxy} proxy and a non-empty extra set"
            ));
        }
        let take = |r: &[&OriginId]| r.iter().map(|o| (*o).clone()).collect::<BTreeSet<_>>();
        let target_origins = take(&order[..n_target]);
        let proxy = take(&order[n_target..n_target + n_proxy]);
        let extra_origins = take(&order[n_target + n_proxy..]);
        let (proxy_member_origins, proxy_nonmember_origins) =
            inter_split(&proxy, fractions.member, seed::derive(seed, "proxy-inter"))?;
        Ok(PartitionPlan {
            target_origins,
            proxy_member_origins,
            proxy_nonmember_origins,
            extra_origins,
            intra_ratio: fractions.intra_train,
            seed,
        })
    }

    pub fn proxy_origins(&self) -> BTreeSet<OriginId> {
        self.proxy_member_origins
            .union(&self.proxy_nonmember_origins)
            .cloned()
            .collect()
    }

    pub fn is_disjoint(&self) -> bool {
        let sets = [
            &self.target_origins,
            &self.proxy_member_origins,
            &self.proxy_nonmember_origins,
            &self.extra_origins,
        ];
        sets.iter().enumerate().all(|(i, a)| {
            sets[i + 1..].iter().all(|b| a.is_disjoint(b))
        })
    }
}

/// Target-side data after the target intra-origin split.
#[derive(Clone, Debug)]
pub struct TargetSplit {
    /// Training data of the target model.
    pub train: OriginDataset,
    /// Held-out samples of target origins: positive test data.
    pub member_aux: OriginDataset,
}

/// Split each target origin's samples into target training data and held-out
/// auxiliary data.
pub fn split_target(dataset: &OriginDataset, plan: &PartitionPlan) -> Result<TargetSplit> {
    let groups = quotient(&dataset.restrict(&plan.target_origins))?;
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (origin, group) in &groups {
        let (t, h) = intra_split(
            group,
            plan.intra_ratio,
            seed::derive(plan.seed, &format!("target-intra/{origin}")),
        )?;
        train.extend(t);
        held.extend(h);
    }
    Ok(TargetSplit {
        train: OriginDataset::new(train, dataset.feature_width())?,
        member_aux: OriginDataset::new(held, dataset.feature_width())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn toy(origins: &[&str]) -> OriginDataset {
        let samples = origins
            .iter()
            .enumerate()
            .map(|(i, o)| Sample {
                id: i,
                features: vec![i as f64, -(i as f64)],
                label: (i % 2) as f64,
                origin: OriginId::new(*o).unwrap(),
                length: None,
            })
            .collect();
        OriginDataset::new(samples, 2).unwrap()
    }

    fn ids(n: usize) -> BTreeSet<OriginId> {
        (0..n).map(|i| OriginId::new(format!("o{i:02}")).unwrap()).collect()
    }

    #[test]
    fn quotient_groups() {
        let q = quotient(&toy(&["a", "a", "b", "b", "c", "c"])).unwrap();
        assert_eq!(q.len(), 3);
        assert!(q.values().all(|g| g.len() == 2));
        let single = quotient(&toy(&["z", "z", "z"])).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.values().next().unwrap().as_slice(), toy(&["z", "z", "z"]).samples());
        assert!(quotient(&toy(&[])).is_err());
    }

    #[test]
    fn empty_origin_rejected() {
        assert!(OriginId::new("").is_err());
        assert!(serde_json::from_str::<OriginId>("\"\"").is_err());
    }

    #[test]
    fn inter_split_counts() {
        let (m, n) = inter_split(&ids(10), 0.5, 1).unwrap();
        assert_eq!((m.len(), n.len()), (5, 5));
        assert!(m.is_disjoint(&n));
        let (m, n) = inter_split(&ids(10), 0.01, 1).unwrap();
        assert_eq!((m.len(), n.len()), (1, 9));
        assert!(inter_split(&ids(1), 0.5, 1).is_err());
        assert!(inter_split(&ids(4), 1.0, 1).is_err());
    }

    #[test]
    fn inter_split_seeding() {
        let a = inter_split(&ids(40), 0.5, 7).unwrap();
        assert_eq!(a, inter_split(&ids(40), 0.5, 7).unwrap());
        assert_ne!(a, inter_split(&ids(40), 0.5, 8).unwrap());
    }

    #[test]
    fn intra_split_counts() {
        let g = toy(&["a"; 10]).samples().to_vec();
        let (t, h) = intra_split(&g, 0.5, 3).unwrap();
        assert_eq!((t.len(), h.len()), (5, 5));
        let two = toy(&["a"; 2]).samples().to_vec();
        let (t, h) = intra_split(&two, 0.9, 3).unwrap();
        assert_eq!((t.len(), h.len()), (1, 1));
        let one = toy(&["a"]).samples().to_vec();
        assert!(matches!(intra_split(&one, 0.5, 3), Err(Error::Input(_))));
    }

    #[test]
    fn min_sample_filter() {
        let d = toy(&["a", "a", "a", "b", "c", "c"]);
        let (kept, dropped) = d.filter_min_samples(2);
        assert_eq!(dropped, vec![OriginId::new("b").unwrap()]);
        assert_eq!(kept.len(), 5);
    }

    #[test]
    fn plan_is_disjoint_and_covering() {
        let plan = PartitionPlan::new(&ids(40), &PartitionFractions::default(), 5).unwrap();
        assert!(plan.is_disjoint());
        assert_eq!(plan.target_origins.len(), 10);
        assert_eq!(plan.proxy_origins().len(), 20);
        assert_eq!(plan.extra_origins.len(), 10);
        assert_eq!(plan.proxy_member_origins.len(), 10);
    }

    proptest! {
        #[test]
        fn quotient_is_a_partition(origins in prop::collection::vec(0u8..6, 1..60)) {
            let names: Vec<String> = origins.iter().map(|o| format!("v{o}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let d = toy(&refs);
            let q = quotient(&d).unwrap();
            // counting oracle
            let distinct: BTreeSet<&u8> = origins.iter().collect();
            prop_assert_eq!(q.len(), distinct.len());
            prop_assert_eq!(q.values().map(Vec::len).sum::<usize>(), d.len());
            let mut flat: Vec<usize> = q.values().flatten().map(|s| s.id).collect();
            flat.sort_unstable();
            prop_assert_eq!(flat, (0..d.len()).collect::<Vec<_>>());
            for (k, g) in &q {
                prop_assert!(!g.is_empty());
                prop_assert!(g.iter().all(|s| &s.origin == k));
            }
        }

        #[test]
        fn intra_split_is_disjoint_cover(n in 2usize..80, f in 0.01f64..0.99, seed in any::<u64>()) {
            let names = vec!["a"; n];
            let g = toy(&names).samples().to_vec();
            let (t, h) = intra_split(&g, f, seed).unwrap();
            prop_assert!(!t.is_empty() && !h.is_empty());
            prop_assert_eq!(t.len() + h.len(), n);
            let ti: BTreeSet<usize> = t.iter().map(|s| s.id).collect();
            prop_assert!(h.iter().all(|s| !ti.contains(&s.id)));
        }

        #[test]
        fn plans_are_always_disjoint(n in 8usize..120, seed in any::<u64>()) {
            let plan = PartitionPlan::new(&ids(n), &PartitionFractions::default(), seed).unwrap();
            prop_assert!(plan.is_disjoint());
            let total = plan.target_origins.len() + plan.proxy_origins().len() + plan.extra_origins.len();
            prop_assert_eq!(total, n);
        }
    }
}
