use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Shuffles tried before giving up on class presence on both sides.
const SPLIT_ATTEMPTS: usize = 1000;

/// Train/test partition of a manifest's binary-labeled records, as indices
/// into `Manifest::records`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Class index of every usable record (BI-RADS 0 and 3 are dropped).
pub fn labeled_indices(manifest: &Manifest) -> Vec<(usize, usize)> {
    manifest
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.binary_label().class_index().map(|c| (i, c)))
        .collect()
}

fn has_both(indices: &[usize], class_of: &BTreeMap<usize, usize>) -> bool {
    let mut seen = [false; 2];
    for i in indices {
        seen[class_of[i]] = true;
    }
    seen[0] && seen[1]
}

/// Assign shuffled patients to the training side until it holds at least
/// `train_fraction` of the images; everyone else is test. When at least two
/// patients carry each class, shuffles are retried until both sides hold both
/// classes; a data error is returned if none does.
pub fn patient_disjoint_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let usable = labeled_indices(manifest);
    let class_of: BTreeMap<usize, usize> = usable.iter().copied().collect();
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &(i, _) in &usable {
        by_patient
            .entry(manifest.records[i].patient_id.as_str())
            .or_default()
            .push(i);
    }
    if by_patient.len() < 2 {
        return Err(Error::data("a patient-disjoint split needs at least two patients"));
    }
    let patients_with = |c: usize| {
        by_patient
            .values()
            .filter(|imgs| imgs.iter().any(|i| class_of[i] == c))
            .count()
    };
    let enforce_classes = patients_with(0) >= 2 && patients_with(1) >= 2;

    let total = usable.len() as f64;
    let mut rng = stream(seed, Stream::Split);
    let mut groups: Vec<&Vec<usize>> = by_patient.values().collect();
    for _ in 0..SPLIT_ATTEMPTS {
        groups.shuffle(&mut rng);
        let mut train = Vec::new();
        let mut taken = 0;
        for g in &groups {
            if train.len() as f64 >= train_fraction * total || taken == groups.len() - 1 {
                break;
            }
            train.extend_from_slice(g);
            taken += 1;
        }
        let mut test: Vec<usize> = groups[taken..].iter().flat_map(|g| g.iter().copied()).collect();
        if enforce_classes && !(has_both(&train, &class_of) && has_both(&test, &class_of)) {
            continue;
        }
        train.sort_unstable();
        test.sort_unstable();
        return Ok(SplitSpec { train, test, seed });
    }
    Err(Error::data(format!(
        "no patient-disjoint split with both classes on each side found in {SPLIT_ATTEMPTS} shuffles"
    )))
}

/// Labeled budget and the unlabeled remainder of a training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBudget {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Number of positives in a budget of `n_labeled`.
pub fn budget_positives(n_labeled: usize, negative_fraction: f64) -> usize {
    ((n_labeled as f64 * (1.0 - negative_fraction)).round() as usize).max(1)
}

/// Draw `n_labeled` records from `train` (pairs of record index and class):
/// `max(1, round(n·(1−negative_fraction)))` positives, the rest negatives.
/// Everything not drawn is unlabeled.
pub fn sample_label_budget(
    train: &[(usize, usize)],
    n_labeled: usize,
    negative_fraction: f64,
    seed: u64,
) -> Result<LabelBudget> {
    if !(0.0..1.0).contains(&negative_fraction) {
        return Err(Error::config(format!("negative fraction {negative_fraction} outside [0, 1)")));
    }
    if n_labeled < 2 {
        return Err(Error::config("a label budget needs at least two images"));
    }
    let positives = budget_positives(n_labeled, negative_fraction);
    let negatives = n_labeled - positives;
    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &(i, c) in train {
        if c > 1 {
            return Err(Error::contract(format!("class {c} is not binary")));
        }
        pools[c].push(i);
    }
    for (name, need, have) in [
        ("negative", negatives, pools[0].len()),
        ("positive", positives, pools[1].len()),
    ] {
        if have < need {
            return Err(Error::data(format!(
                "label budget of {n_labeled} needs {need} {name} images but the training set has {have} (short by {})",
                need - have
            )));
        }
    }
    let mut rng = stream(seed, Stream::Budget);
    let mut labeled = Vec::with_capacity(n_labeled);
    for (pool, need) in pools.iter_mut().zip([negatives, positives]) {
        pool.shuffle(&mut rng);
        labeled.extend_from_slice(&pool[..need]);
    }
    labeled.sort_unstable();
    let unlabeled = train
        .iter()
        .map(|&(i, _)| i)
        .filter(|i| labeled.binary_search(i).is_err())
        .collect();
    Ok(LabelBudget { labeled, unlabeled })
}

/// Pairs of record index and class.
pub type IndexedLabels = Vec<(usize, usize)>;

/// Stratified hold-out of `fraction` of `train` for model selection. At least
/// one image of each class is held out when the class has two or more.
pub fn holdout_validation(
    train: &[(usize, usize)],
    fraction: f64,
    seed: u64,
) -> Result<(IndexedLabels, IndexedLabels)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut rng = stream(seed, Stream::Validation);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for class in 0..2 {
        let mut members: Vec<(usize, usize)> = train.iter().copied().filter(|&(_, c)| c == class).collect();
        members.shuffle(&mut rng);
        let mut n = (members.len() as f64 * fraction).round() as usize;
        if members.len() >= 2 {
            n = n.clamp(1, members.len() - 1);
        } else {
            n = 0;
        }
        held.extend_from_slice(&members[..n]);
        keep.extend_from_slice(&members[n..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((keep, held))
}
