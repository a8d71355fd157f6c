//! K-NN saliency and key-person selection.
//!
//! A person's saliency in one feature space is the mean distance to its `k`
//! nearest neighbours in the same camera, min-max normalised over the set.
//! Persons at or above a threshold are key persons; the key set of a feature
//! bank is the union over its spaces.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{FeatureBank, FeatureSpace, FlowSet, KeyEntry, KeyPerson, KeyScope, KeySet, PipelineConfig};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyEntry {
    pub id: String,
    /// Mean distance to the `k` nearest other members.
    pub raw: f64,
    /// `raw` after min-max normalisation, in [0, 1].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTable {
    pub feature: String,
    pub k_used: usize,
    /// One entry per flow member, in flow order.
    pub entries: Vec<SaliencyEntry>,
}

impl SaliencyTable {
    pub fn score(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoPoint {
    pub rho: f64,
    /// Fraction of key persons whose rank-1 gallery match is correct.
    pub sigma: f64,
    pub n_keys: usize,
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if k >= n {
        return Err(Error::param(format!(
            "k = {k} needs more than {k} members, the set has {n}"
        )));
    }
    Ok(())
}

fn member_vectors<'a>(space: &'a FeatureSpace, set: &FlowSet) -> Result<Vec<&'a [f64]>> {
    set.members()
        .iter()
        .map(|r| space.vector(set.camera(), &r.id))
        .collect()
}

/// Mean of the `k` smallest distances from `vectors[i]` to every other vector.
fn knn_mean(space: &FeatureSpace, vectors: &[&[f64]], i: usize, k: usize) -> f64 {
    let metric = space.metric();
    let mut d: Vec<f64> = vectors
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| metric.distance(vectors[i], v))
        .collect();
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(f64::total_cmp);
    d.iter().sum::<f64>() / k as f64
}

pub fn knn_mean_distance(space: &FeatureSpace, set: &FlowSet, person: &str, k: usize) -> Result<f64> {
    let i = set.position(person).ok_or_else(|| {
        Error::NotFound(format!("`{person}` is not in the flow of camera `{}`", set.camera()))
    })?;
    check_k(k, set.len())?;
    let vectors = member_vectors(space, set)?;
    Ok(knn_mean(space, &vectors, i, k))
}

/// Saliency of every member of `set`. A set whose members all share the
/// same raw value has nobody salient: every score is 0.
pub fn saliency_scores(space: &FeatureSpace, set: &FlowSet, k: usize) -> Result<SaliencyTable> {
    if set.len() < 2 {
        return Err(Error::param(format!(
            "saliency needs at least 2 members, camera `{}` has {}",
            set.camera(),
            set.len()
        )));
    }
    check_k(k, set.len())?;
    let vectors = member_vectors(space, set)?;
    let indices: Vec<usize> = (0..vectors.len()).collect();
    let raws = par::map(&indices, |&i| knn_mean(space, &vectors, i, k));

    let (lo, hi) = raws
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let span = hi - lo;
    let entries = set
        .members()
        .iter()
        .zip(&raws)
        .map(|(r, &raw)| SaliencyEntry {
            id: r.id.clone(),
            raw,
            score: if span > 0.0 { ((raw - lo) / span).clamp(0.0, 1.0) } else { 0.0 },
        })
        .collect();
    Ok(SaliencyTable {
        feature: space.name().to_string(),
        k_used: k,
        entries,
    })
}

fn by_score_then_id(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Members with score >= `rho`, highest score first, ties by ascending id.
pub fn select_key_persons(table: &SaliencyTable, rho: f64) -> Vec<KeyPerson> {
    let mut keys: Vec<KeyPerson> = table
        .entries
        .iter()
        .filter(|e| e.score >= rho)
        .map(|e| KeyPerson {
            id: e.id.clone(),
            score: e.score,
        })
        .collect();
    keys.sort_by(|a, b| by_score_then_id((&a.id, a.score), (&b.id, b.score)));
    keys
}

/// Key persons of `set` in every feature space of the bank, and their union.
/// A person selected in several spaces keeps the space where it scores
/// highest (earlier spaces win ties).
pub fn union_key_sets(bank: &FeatureBank, set: &FlowSet, config: &PipelineConfig) -> Result<KeySet> {
    let mut per_feature = Vec::with_capacity(bank.spaces().len());
    for space in bank.spaces() {
        let table = saliency_scores(space, set, config.k_nn)?;
        per_feature.push((space.name().to_string(), select_key_persons(&table, config.rho_for(space))));
    }
    Ok(merge_key_sets(per_feature))
}

fn merge_key_sets(per_feature: Vec<(String, Vec<KeyPerson>)>) -> KeySet {
    let mut best: HashMap<&str, (usize, f64)> = HashMap::new();
    for (fi, (_, keys)) in per_feature.iter().enumerate() {
        for k in keys {
            best.entry(&k.id)
                .and_modify(|b| {
                    if k.score > b.1 {
                        *b = (fi, k.score);
                    }
                })
                .or_insert((fi, k.score));
        }
    }
    let mut union: Vec<KeyEntry> = best
        .into_iter()
        .map(|(id, (fi, score))| KeyEntry {
            id: id.to_string(),
            feature: per_feature[fi].0.clone(),
            score,
        })
        .collect();
    union.sort_by(|a, b| by_score_then_id((&a.id, a.score), (&b.id, b.score)));
    KeySet { per_feature, union }
}

/// Key selection honouring `config.key_scope`. With subset scope each probe
/// velocity subset is scored on its own; subsets too small for `k_nn`
/// contribute no keys.
pub fn select_keys(bank: &FeatureBank, probe: &FlowSet, config: &PipelineConfig) -> Result<KeySet> {
    let subsets = match (config.key_scope, probe.subsets()) {
        (KeyScope::Subset, Some(subsets)) => subsets,
        _ => return union_key_sets(bank, probe, config),
    };
    let mut per_feature: Vec<(String, Vec<KeyPerson>)> = bank
        .spaces()
        .iter()
        .map(|s| (s.name().to_string(), Vec::new()))
        .collect();
    for subset in subsets {
        if subset.member_ids.len() <= config.k_nn {
            continue;
        }
        let part = probe.restrict(|r| subset.member_ids.contains(&r.id));
        let keys = union_key_sets(bank, &part, config)?;
        for (slot, (_, found)) in per_feature.iter_mut().zip(keys.per_feature) {
            slot.1.extend(found);
        }
    }
    for (_, keys) in &mut per_feature {
        keys.sort_by(|a, b| by_score_then_id((&a.id, a.score), (&b.id, b.score)));
    }
    Ok(merge_key_sets(per_feature))
}

/// Rank-1 gallery match of every probe member under `space`'s metric, ties
/// broken by ascending gallery id.
fn rank_one_matches(space: &FeatureSpace, probe: &FlowSet, gallery: &FlowSet) -> Result<Vec<Option<String>>> {
    let gallery_vectors = member_vectors(space, gallery)?;
    let metric = space.metric();
    par::try_map(probe.members(), |r| {
        let q = space.vector(probe.camera(), &r.id)?;
        let best = gallery
            .members()
            .iter()
            .zip(&gallery_vectors)
            .map(|(g, v)| (g.id.as_str(), metric.distance(q, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        Ok(best.map(|(id, _)| id.to_string()))
    })
}

/// Key-set size and key-match accuracy for each threshold in `grid`.
/// With no key persons, sigma is reported as 1.
pub fn sweep_rho(
    space: &FeatureSpace,
    probe: &FlowSet,
    gallery: &FlowSet,
    grid: &[f64],
    k: usize,
) -> Result<Vec<RhoPoint>> {
    if let Some(r) = probe.members().iter().find(|r| r.true_match.is_none()) {
        return Err(Error::param(format!(
            "rho sweep needs ground truth, `{}` has no true match",
            r.id
        )));
    }
    let table = saliency_scores(space, probe, k)?;
    let matches = rank_one_matches(space, probe, gallery)?;
    let correct: HashMap<&str, bool> = probe
        .members()
        .iter()
        .zip(&matches)
        .map(|(r, m)| (r.id.as_str(), m.as_deref() == r.true_match.as_deref()))
        .collect();
    Ok(grid
        .iter()
        .map(|&rho| {
            let keys = select_key_persons(&table, rho);
            let hits = keys.iter().filter(|k| correct[k.id.as_str()]).count();
            RhoPoint {
                rho,
                sigma: if keys.is_empty() { 1.0 } else { hits as f64 / keys.len() as f64 },
                n_keys: keys.len(),
            }
        })
        .collect())
}
