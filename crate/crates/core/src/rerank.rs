//! Key-person-aided re-ranking.
//!
//! For a query in the probe flow:
//!
//! 1. take the `L` key persons closest to it in entering time;
//! 2. match each key against the gallery in the key's best feature space,
//!    keeping its top match and the normalised distance `d_key`;
//! 3. predict where the query should appear in the gallery from the key's
//!    match time plus the probe-side time offset, widened by `tau`;
//! 4. discount the baseline score of every gallery member inside a predicted
//!    window by `d_key` and rank by the discounted score.
//!
//! With velocity subsets on both flows, keys, key matching and windows are
//! confined to the paired subsets; probe subsets without a counterpart use
//! the whole gallery.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::flow::{correspond_subsets, split_by_velocity, SubsetPairing};
use crate::model::{FeatureBank, FlowSet, KeySet, PedestrianRecord, PipelineConfig, WeightCombine};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub id: String,
    pub score: f64,
}

/// A key person's top match in the gallery. Independent of any query.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMatch {
    pub key_id: String,
    pub feature: String,
    pub top_match_id: String,
    pub top_match_time: u64,
    /// Distance to the top match divided by the largest distance in the
    /// key's row, in [0, 1]; 1 when every distance is 0.
    pub d_key: f64,
}

/// A key match seen from one query.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyAnchor {
    pub key: KeyMatch,
    /// Query entering frame minus key entering frame.
    pub delta_t: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateWindow {
    pub anchor: KeyAnchor,
    pub member_ids: Vec<String>,
    /// Inclusive `[lo, hi]` range of entering frames.
    pub interval: (f64, f64),
}

/// The `num_keys` key persons nearest to `query` in entering time, ordered by
/// `|dT|`, then smaller entering frame, then id. When `flow` carries velocity
/// subsets only keys from the query's subset qualify. The query itself is
/// eligible.
pub fn nearest_key_persons(query: &str, flow: &FlowSet, keys: &KeySet, num_keys: usize) -> Result<Vec<String>> {
    let q_pos = flow.position(query).ok_or_else(|| {
        Error::NotFound(format!("`{query}` is not in the flow of camera `{}`", flow.camera()))
    })?;
    let q_time = flow.members()[q_pos].entering_frame;
    let q_subset = flow.subset_index(q_pos);
    let mut found = Vec::with_capacity(keys.len());
    for k in &keys.union {
        let pos = flow.position(&k.id).ok_or_else(|| {
            Error::NotFound(format!("key person `{}` is not in camera `{}`", k.id, flow.camera()))
        })?;
        if flow.subset_index(pos) != q_subset {
            continue;
        }
        let t = flow.members()[pos].entering_frame;
        found.push((t.abs_diff(q_time), t, k.id.as_str()));
    }
    found.sort_unstable();
    Ok(found
        .into_iter()
        .take(num_keys)
        .map(|(_, _, id)| id.to_string())
        .collect())
}

/// Matches `key` against `candidates` in feature space `feature`.
pub fn match_key_person(
    key: &PedestrianRecord,
    feature: &str,
    candidates: &[&PedestrianRecord],
    bank: &FeatureBank,
) -> Result<KeyMatch> {
    let space = bank
        .space(feature)
        .ok_or_else(|| Error::NotFound(format!("feature `{feature}` is not in the bank")))?;
    if candidates.is_empty() {
        return Err(Error::param(format!("no gallery candidates to match key `{}`", key.id)));
    }
    let probe_vec = space.vector(&key.camera, &key.id)?;
    let metric = space.metric();
    let row = candidates
        .iter()
        .map(|g| Ok(metric.distance(probe_vec, space.vector(&g.camera, &g.id)?)))
        .collect::<Result<Vec<f64>>>()?;
    let max = row.iter().copied().fold(0.0, f64::max);
    let normalised: Vec<f64> = if max > 0.0 {
        row.iter().map(|d| d / max).collect()
    } else {
        vec![1.0; row.len()]
    };
    let (top, d_key) = candidates
        .iter()
        .zip(&normalised)
        .min_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.id.cmp(&b.0.id)))
        .map(|(g, d)| (*g, *d))
        .expect("candidates non-empty");
    Ok(KeyMatch {
        key_id: key.id.clone(),
        feature: feature.to_string(),
        top_match_id: top.id.clone(),
        top_match_time: top.entering_frame,
        d_key,
    })
}

/// Gallery members whose entering frame lies between
/// `T_match + (1 - tau) dT` and `T_match + (1 + tau) dT` (endpoints ordered).
pub fn candidate_window(anchor: KeyAnchor, candidates: &[&PedestrianRecord], tau: f64) -> CandidateWindow {
    let base = anchor.key.top_match_time as f64;
    let dt = anchor.delta_t as f64;
    let a = base + (1.0 - tau) * dt;
    let b = base + (1.0 + tau) * dt;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let member_ids = candidates
        .iter()
        .filter(|g| {
            let t = g.entering_frame as f64;
            lo <= t && t <= hi
        })
        .map(|g| g.id.clone())
        .collect();
    CandidateWindow {
        anchor,
        member_ids,
        interval: (lo, hi),
    }
}

/// ω per gallery id: the combined `d_key` of every window holding the id,
/// or 1 for ids in no window.
pub fn compute_weights(windows: &[CandidateWindow], gallery_ids: &[String], combine: WeightCombine) -> Vec<f64> {
    let position: HashMap<&str, usize> = gallery_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); gallery_ids.len()];
    for w in windows {
        for id in &w.member_ids {
            if let Some(&i) = position.get(id.as_str()) {
                hits[i].push(w.anchor.key.d_key);
            }
        }
    }
    hits.into_iter()
        .map(|h| {
            if h.is_empty() {
                return 1.0;
            }
            match combine {
                WeightCombine::Min => h.iter().copied().fold(f64::INFINITY, f64::min),
                WeightCombine::Product => h.iter().product(),
                WeightCombine::Mean => h.iter().sum::<f64>() / h.len() as f64,
            }
        })
        .collect()
}

/// Element-wise `weights * base_row`.
pub fn rerank_scores(base_row: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if base_row.len() != weights.len() {
        return Err(Error::param(format!(
            "baseline row has {} entries but there are {} weights",
            base_row.len(),
            weights.len()
        )));
    }
    Ok(base_row.iter().zip(weights).map(|(d, w)| w * d).collect())
}

/// Ascending score, ties by ascending id.
pub fn rank_by_score(ids: &[String], scores: &[f64]) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = ids
        .iter()
        .zip(scores)
        .map(|(id, &score)| RankedCandidate { id: id.clone(), score })
        .collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
    ranked
}

/// Baseline dissimilarities from `query` to every gallery member, in gallery
/// flow order.
pub fn baseline_row(query: &PedestrianRecord, gallery: &FlowSet, bank: &FeatureBank) -> Result<Vec<f64>> {
    if let Some(m) = bank.baseline_matrix() {
        let p = m.probe_position(&query.id).ok_or_else(|| {
            Error::Validation(format!("`{}` is missing from the baseline matrix", query.id))
        })?;
        return gallery
            .members()
            .iter()
            .map(|g| {
                m.gallery_position(&g.id).map(|j| m.at(p, j)).ok_or_else(|| {
                    Error::Validation(format!("`{}` is missing from the baseline matrix", g.id))
                })
            })
            .collect();
    }
    let space = bank.baseline_space();
    let q = space.vector(&query.camera, &query.id)?;
    gallery
        .members()
        .iter()
        .map(|g| Ok(space.metric().distance(q, space.vector(&g.camera, &g.id)?)))
        .collect()
}

/// Splits both flows into velocity subsets when the config asks for it.
pub fn prepare_flows(probe: &FlowSet, gallery: &FlowSet, config: &PipelineConfig) -> Result<(FlowSet, FlowSet)> {
    match config.angle_threshold {
        Some(theta) => Ok((
            split_by_velocity(probe, theta, config.speed_tolerance)?,
            split_by_velocity(gallery, theta, config.speed_tolerance)?,
        )),
        None => Ok((probe.clone(), gallery.clone())),
    }
}

/// Batch re-ranker over one probe/gallery pair. Key matches are computed
/// once up front and shared by every query.
#[derive(Debug)]
pub struct Reranker<'a> {
    probe: &'a FlowSet,
    gallery: &'a FlowSet,
    bank: &'a FeatureBank,
    keys: &'a KeySet,
    config: &'a PipelineConfig,
    gallery_ids: Vec<String>,
    pairing: Option<SubsetPairing>,
    /// Gallery positions visible to each probe subset (or to everyone when
    /// the flows are not split).
    scopes: Vec<Vec<usize>>,
    matches: HashMap<String, Option<KeyMatch>>,
}

impl<'a> Reranker<'a> {
    pub fn new(
        probe: &'a FlowSet,
        gallery: &'a FlowSet,
        bank: &'a FeatureBank,
        keys: &'a KeySet,
        config: &'a PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let all: Vec<usize> = (0..gallery.len()).collect();
        let (pairing, scopes) = match (probe.subsets(), gallery.subsets()) {
            (Some(ps), Some(gs)) => {
                let pairing = correspond_subsets(probe, gallery, &config.direction_map)?;
                let scopes = (0..ps.len())
                    .map(|i| match pairing.gallery_for(i) {
                        Some(j) => gs[j]
                            .member_ids
                            .iter()
                            .map(|id| gallery.position(id).expect("subset member in flow"))
                            .collect(),
                        None => all.clone(),
                    })
                    .collect();
                (Some(pairing), scopes)
            }
            _ => (None, vec![all]),
        };
        let mut me = Reranker {
            probe,
            gallery,
            bank,
            keys,
            config,
            gallery_ids: gallery.members().iter().map(|g| g.id.clone()).collect(),
            pairing,
            scopes,
            matches: HashMap::new(),
        };
        let found = par::try_map(&keys.union, |k| {
            let pos = probe.position(&k.id).ok_or_else(|| {
                Error::NotFound(format!("key person `{}` is not in camera `{}`", k.id, probe.camera()))
            })?;
            let scope = me.scope_records(pos);
            let m = if scope.is_empty() {
                None
            } else {
                Some(match_key_person(&probe.members()[pos], &k.feature, &scope, bank)?)
            };
            Ok((k.id.clone(), m))
        })?;
        me.matches = found.into_iter().collect();
        Ok(me)
    }

    pub fn pairing(&self) -> Option<&SubsetPairing> {
        self.pairing.as_ref()
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn key_match(&self, key: &str) -> Option<&KeyMatch> {
        self.matches.get(key).and_then(Option::as_ref)
    }

    fn scope_records(&self, probe_pos: usize) -> Vec<&'a PedestrianRecord> {
        let scope = &self.scopes[self.probe.subset_index(probe_pos).unwrap_or(0)];
        scope.iter().map(|&j| &self.gallery.members()[j]).collect()
    }

    fn query(&self, query: &str) -> Result<(usize, &'a PedestrianRecord)> {
        let pos = self.probe.position(query).ok_or_else(|| {
            Error::NotFound(format!("`{query}` is not in the flow of camera `{}`", self.probe.camera()))
        })?;
        Ok((pos, &self.probe.members()[pos]))
    }

    /// Candidate windows for `query`, nearest key first.
    pub fn windows(&self, query: &str) -> Result<Vec<CandidateWindow>> {
        let (pos, q) = self.query(query)?;
        let scope = self.scope_records(pos);
        let nearest = nearest_key_persons(query, self.probe, self.keys, self.config.num_keys)?;
        let mut windows = Vec::with_capacity(nearest.len());
        for key in nearest {
            let Some(m) = self.key_match(&key) else { continue };
            let key_time = self.probe.get(&key).expect("key in flow").entering_frame;
            let anchor = KeyAnchor {
                key: m.clone(),
                delta_t: q.entering_frame as i64 - key_time as i64,
            };
            windows.push(candidate_window(anchor, &scope, self.config.tau));
        }
        Ok(windows)
    }

    pub fn baseline_scores(&self, query: &str) -> Result<Vec<f64>> {
        let (_, q) = self.query(query)?;
        baseline_row(q, self.gallery, self.bank)
    }

    pub fn baseline_ranking(&self, query: &str) -> Result<Vec<RankedCandidate>> {
        Ok(rank_by_score(&self.gallery_ids, &self.baseline_scores(query)?))
    }

    /// The whole gallery ranked for `query` by discounted score.
    pub fn rank(&self, query: &str) -> Result<Vec<RankedCandidate>> {
        let base = self.baseline_scores(query)?;
        let windows = self.windows(query)?;
        let weights = compute_weights(&windows, &self.gallery_ids, self.config.weight_combine);
        let scores = rerank_scores(&base, &weights)?;
        Ok(rank_by_score(&self.gallery_ids, &scores))
    }

    /// Baseline and re-ranked lists for every probe member, in flow order.
    pub fn rank_all(&self) -> Result<Vec<QueryRanking>> {
        par::try_map(self.probe.members(), |q| {
            Ok(QueryRanking {
                query: q.id.clone(),
                baseline: self.baseline_ranking(&q.id)?,
                reranked: self.rank(&q.id)?,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query: String,
    pub baseline: Vec<RankedCandidate>,
    pub reranked: Vec<RankedCandidate>,
}

/// One query end to end. With no usable key persons the result is the
/// baseline ranking.
pub fn rerank_query(
    query: &str,
    probe: &FlowSet,
    gallery: &FlowSet,
    bank: &FeatureBank,
    keys: &KeySet,
    config: &PipelineConfig,
) -> Result<Vec<RankedCandidate>> {
    Reranker::new(probe, gallery, bank, keys, config)?.rank(query)
}
