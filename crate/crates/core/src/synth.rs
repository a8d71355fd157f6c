//! Synthetic pedestrian flows with ground truth, and brute-force oracles.
//!
//! Generation consumes one [`Rng`] stream in a fixed order:
//!
//! 1. per identity, in index order: inter-arrival gap, direction draw,
//!    speed, heading noise, transit delay;
//! 2. per feature space, in bank order: a shuffle choosing the planted
//!    outliers, then per identity one base vector followed by its camera-A
//!    and camera-B perturbations.
//!
//! Identity `i` is `a{i:04}` in camera A and `b{i:04}` in camera B.
//! Identities heading along +x walk from A to B (`T_B = T_A + transit`),
//! those heading along -x walk from B to A (`T_B = T_A - transit`); camera-B
//! frames are then shifted so the earliest is 0.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::flow::{build_flow, correspond_subsets};
use crate::model::{
    Dataset, FeatureBank, FeatureSpace, FlowSet, KeySet, Metric, PedestrianRecord, PipelineConfig, WeightCombine,
};
use crate::rerank::RankedCandidate;
use crate::rng::Rng;

pub const PROBE_CAMERA: &str = "A";
pub const GALLERY_CAMERA: &str = "B";
const FEATURE_NAMES: [&str; 3] = ["GOG", "DNS", "SDALF"];
/// Standard deviation of the heading around each direction, in degrees.
const HEADING_NOISE_DEG: f64 = 10.0;
/// Planted outliers sit this many bulk radii (`spread * sqrt(D)`) from the
/// bulk centroid.
const OUTLIER_RADII: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub num_identities: usize,
    pub num_features: usize,
    /// Embedding dimension per feature space.
    pub dims: Vec<usize>,
    pub salient_fraction: f64,
    /// Per-coordinate standard deviation of the bulk cluster.
    pub cluster_spread: f64,
    /// Per-coordinate standard deviation of each camera's perturbation.
    pub cross_view_noise: f64,
    /// Mean gap between consecutive arrivals in camera A (frames).
    pub arrival_rate: f64,
    pub transit_mean: f64,
    /// Standard deviation of the transit delay (frames).
    pub transit_jitter: f64,
    /// Fraction of identities heading along +x.
    pub direction_split: f64,
    /// Relative standard deviation of walking speed around 1.
    pub speed_spread: f64,
    /// Saliency threshold stored on each generated feature space.
    pub rho: f64,
    /// Fail unless at least one outlier is planted per feature.
    pub require_salient: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_identities: 200,
            num_features: 3,
            dims: vec![64; 3],
            salient_fraction: 0.1,
            cluster_spread: 1.0,
            cross_view_noise: 1.4,
            arrival_rate: 30.0,
            transit_mean: 600.0,
            transit_jitter: 10.0,
            direction_split: 0.5,
            speed_spread: 0.1,
            rho: 0.5,
            require_salient: false,
            seed: 0,
        }
    }
}

impl SynthParams {
    /// Sets every feature space to dimension `dim`.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dims = vec![dim; self.num_features];
        self
    }

    pub fn outliers_per_feature(&self) -> usize {
        (self.salient_fraction * self.num_identities as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 4 {
            return Err(Error::param("num_identities must be at least 4"));
        }
        if self.num_features == 0 || self.dims.len() != self.num_features {
            return Err(Error::param(format!(
                "need one dimension per feature: {} features, {} dims",
                self.num_features,
                self.dims.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::param("feature dimensions must be positive"));
        }
        for (name, f) in [
            ("salient_fraction", self.salient_fraction),
            ("direction_split", self.direction_split),
            ("rho", self.rho),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::param(format!("{name} = {f} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("cross_view_noise", self.cross_view_noise),
            ("arrival_rate", self.arrival_rate),
            ("transit_mean", self.transit_mean),
            ("transit_jitter", self.transit_jitter),
            ("speed_spread", self.speed_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.require_salient && self.outliers_per_feature() < 1 {
            return Err(Error::param(format!(
                "salient_fraction {} of {} identities plants no outlier",
                self.salient_fraction, self.num_identities
            )));
        }
        Ok(())
    }
}

pub fn feature_name(m: usize) -> String {
    FEATURE_NAMES
        .get(m)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("F{m}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    /// Planted outlier ids (camera A) per feature name.
    pub salient: Vec<(String, Vec<String>)>,
}

fn gaussian_vector(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.normal()).collect()
}

pub fn generate_flow(params: &SynthParams) -> Result<SynthDataset> {
    params.validate()?;
    let n = params.num_identities;
    let mut rng = Rng::new(params.seed);

    let mut t_a = Vec::with_capacity(n);
    let mut t_b_raw = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let mut clock = 0.0;
    for _ in 0..n {
        clock += rng.exponential(params.arrival_rate);
        let ta = clock.round();
        let forward = rng.uniform() < params.direction_split;
        let speed = (1.0 + params.speed_spread * rng.normal()).max(0.05);
        let heading = if forward { 0.0 } else { 180.0 } + HEADING_NOISE_DEG * rng.normal();
        let transit = (params.transit_mean + params.transit_jitter * rng.normal()).max(0.0);
        let h = heading.to_radians();
        velocity.push([speed * h.cos(), speed * h.sin()]);
        t_a.push(ta as u64);
        t_b_raw.push(if forward { ta + transit } else { ta - transit });
    }
    let shift = t_b_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let t_b: Vec<u64> = t_b_raw.iter().map(|t| (t - shift).round() as u64).collect();

    let probe_id = |i: usize| format!("a{i:04}");
    let gallery_id = |i: usize| format!("b{i:04}");
    let probe_records = (0..n)
        .map(|i| {
            PedestrianRecord::new(probe_id(i), PROBE_CAMERA, t_a[i])
                .with_velocity(velocity[i])
                .with_true_match(gallery_id(i))
        })
        .collect();
    let gallery_records = (0..n)
        .map(|i| {
            PedestrianRecord::new(gallery_id(i), GALLERY_CAMERA, t_b[i])
                .with_velocity(velocity[i])
                .with_true_match(probe_id(i))
        })
        .collect();

    let n_out = params.outliers_per_feature().min(n);
    let mut spaces = Vec::with_capacity(params.num_features);
    let mut salient = Vec::with_capacity(params.num_features);
    for (m, &dim) in params.dims.iter().enumerate() {
        let name = feature_name(m);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let planted: HashSet<usize> = order[..n_out].iter().copied().collect();
        let radius = OUTLIER_RADII * params.cluster_spread * (dim as f64).sqrt();
        let mut space = FeatureSpace::new(name.clone(), dim, Metric::Euclidean, params.rho)?;
        for i in 0..n {
            let base = if planted.contains(&i) {
                let mut dir = gaussian_vector(&mut rng, dim, 1.0);
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.iter_mut().for_each(|x| *x *= radius / norm);
                dir
            } else {
                gaussian_vector(&mut rng, dim, params.cluster_spread)
            };
            for (camera, id) in [(PROBE_CAMERA, probe_id(i)), (GALLERY_CAMERA, gallery_id(i))] {
                let noise = gaussian_vector(&mut rng, dim, params.cross_view_noise);
                let v = base.iter().zip(noise).map(|(b, e)| b + e).collect();
                space.insert(camera, id, v);
            }
        }
        let mut ids: Vec<String> = planted.iter().map(|&i| probe_id(i)).collect();
        ids.sort();
        salient.push((name, ids));
        spaces.push(space);
    }
    let bank = FeatureBank::new(spaces, feature_name(0))?;
    Ok(SynthDataset {
        dataset: Dataset {
            probe: build_flow(probe_records, PROBE_CAMERA)?,
            gallery: build_flow(gallery_records, GALLERY_CAMERA)?,
            bank,
        },
        salient,
    })
}

/// Fraction of probe pairs (inside the same velocity subset when the probe
/// is split) whose entering-frame order differs from their true matches'
/// order in the gallery. Pairs without a ground-truth match are skipped.
pub fn order_inversion_rate(probe: &FlowSet, gallery: &FlowSet) -> f64 {
    let members = probe.members();
    let times: Vec<Option<(i64, i64)>> = members
        .iter()
        .map(|r| {
            let g = gallery.get(r.true_match.as_deref()?)?;
            Some((r.entering_frame as i64, g.entering_frame as i64))
        })
        .collect();
    let mut total = 0u64;
    let mut inverted = 0u64;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            if probe.subset_index(i) != probe.subset_index(j) {
                continue;
            }
            let (Some((ai, bi)), Some((aj, bj))) = (times[i], times[j]) else { continue };
            total += 1;
            if (ai - aj).signum() != (bi - bj).signum() {
                inverted += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inverted as f64 / total as f64
    }
}

/// Unoptimised transcription of the four re-ranking steps, used to check
/// [`crate::rerank::rerank_query`]. Velocity-subset pairing is delegated to
/// [`correspond_subsets`]; everything after it is written out longhand.
pub fn oracle_rerank(
    query: &str,
    probe: &FlowSet,
    gallery: &FlowSet,
    bank: &FeatureBank,
    keys: &KeySet,
    config: &PipelineConfig,
) -> Result<Vec<RankedCandidate>> {
    let q_pos = probe
        .position(query)
        .ok_or_else(|| Error::NotFound(format!("query `{query}` not in probe")))?;
    let q = &probe.members()[q_pos];

    // gallery members the query may be matched to by key persons
    let mut scope: Vec<&PedestrianRecord> = gallery.members().iter().collect();
    if probe.subsets().is_some() && gallery.subsets().is_some() {
        let pairing = correspond_subsets(probe, gallery, &config.direction_map)?;
        let qs = probe.subset_index(q_pos).unwrap();
        if let Some(&(_, gs)) = pairing.pairs.iter().find(|(p, _)| *p == qs) {
            let ids = &gallery.subsets().unwrap()[gs].member_ids;
            scope = gallery.members().iter().filter(|g| ids.contains(&g.id)).collect();
        }
    }

    // step 1: the L temporally nearest key persons, by repeated selection
    let mut remaining: Vec<(&str, &str, u64)> = Vec::new();
    for k in &keys.union {
        let pos = probe
            .position(&k.id)
            .ok_or_else(|| Error::NotFound(format!("key `{}` not in probe", k.id)))?;
        if probe.subset_index(pos) == probe.subset_index(q_pos) {
            remaining.push((k.id.as_str(), k.feature.as_str(), probe.members()[pos].entering_frame));
        }
    }
    let mut chosen = Vec::new();
    while chosen.len() < config.num_keys && !remaining.is_empty() {
        let mut best = 0;
        for c in 1..remaining.len() {
            let gap = |x: &(&str, &str, u64)| (x.2 as i64 - q.entering_frame as i64).abs();
            let (a, b) = (&remaining[c], &remaining[best]);
            if gap(a) < gap(b) || (gap(a) == gap(b) && (a.2 < b.2 || (a.2 == b.2 && a.0 < b.0))) {
                best = c;
            }
        }
        chosen.push(remaining.remove(best));
    }

    // steps 2 and 3: key matching and candidate windows
    let mut windows: Vec<(f64, Vec<&str>)> = Vec::new();
    for (key_id, feature, key_time) in chosen {
        if scope.is_empty() {
            continue;
        }
        let space = bank
            .space(feature)
            .ok_or_else(|| Error::NotFound(format!("feature `{feature}`")))?;
        let kv = space.vector(probe.camera(), key_id)?;
        let mut dists = Vec::new();
        for g in &scope {
            dists.push(space.metric().distance(kv, space.vector(gallery.camera(), &g.id)?));
        }
        let mut max = 0.0;
        for d in &dists {
            if *d > max {
                max = *d;
            }
        }
        let mut top = 0;
        let mut top_d = if max > 0.0 { dists[0] / max } else { 1.0 };
        for c in 1..scope.len() {
            let dc = if max > 0.0 { dists[c] / max } else { 1.0 };
            if dc < top_d || (dc == top_d && scope[c].id < scope[top].id) {
                top = c;
                top_d = dc;
            }
        }
        let delta = q.entering_frame as i64 - key_time as i64;
        let t_key_b = scope[top].entering_frame as f64;
        let e1 = t_key_b + (1.0 - config.tau) * delta as f64;
        let e2 = t_key_b + (1.0 + config.tau) * delta as f64;
        let lo = if e1 < e2 { e1 } else { e2 };
        let hi = if e1 < e2 { e2 } else { e1 };
        let mut members = Vec::new();
        for g in &scope {
            let t = g.entering_frame as f64;
            if t >= lo && t <= hi {
                members.push(g.id.as_str());
            }
        }
        windows.push((top_d, members));
    }

    // step 4: weights, discounted scores, ranking
    let mut out = Vec::new();
    for g in gallery.members() {
        let mut hits = Vec::new();
        for (d_key, members) in &windows {
            if members.contains(&g.id.as_str()) {
                hits.push(*d_key);
            }
        }
        let omega = if hits.is_empty() {
            1.0
        } else {
            match config.weight_combine {
                WeightCombine::Min => {
                    let mut m = f64::INFINITY;
                    for h in &hits {
                        if *h < m {
                            m = *h;
                        }
                    }
                    m
                }
                WeightCombine::Product => {
                    let mut p = 1.0;
                    for h in &hits {
                        p *= h;
                    }
                    p
                }
                WeightCombine::Mean => {
                    let mut s = 0.0;
                    for h in &hits {
                        s += h;
                    }
                    s / hits.len() as f64
                }
            }
        };
        let base = match bank.baseline_matrix() {
            Some(m) => m
                .get(&q.id, &g.id)
                .ok_or_else(|| Error::Validation(format!("no baseline score for ({}, {})", q.id, g.id)))?,
            None => {
                let s = bank.baseline_space();
                s.metric()
                    .distance(s.vector(probe.camera(), &q.id)?, s.vector(gallery.camera(), &g.id)?)
            }
        };
        out.push(RankedCandidate {
            id: g.id.clone(),
            score: omega * base,
        });
    }
    out.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .expect("finite scores")
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Probe-side planted outliers per feature as a lookup.
pub fn salient_lookup(data: &SynthDataset) -> BTreeMap<&str, HashSet<&str>> {
    data.salient
        .iter()
        .map(|(f, ids)| (f.as_str(), ids.iter().map(String::as_str).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::saliency_scores;

    fn small() -> SynthParams {
        SynthParams {
            num_identities: 40,
            ..SynthParams::default()
        }
        .with_dim(8)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_flow(&small()).unwrap();
        let b = generate_flow(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_flow(&SynthParams { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_jitter_preserves_order() {
        let d = generate_flow(&SynthParams { transit_jitter: 0.0, ..small() }).unwrap();
        let (probe, _) = crate::rerank::prepare_flows(
            &d.dataset.probe,
            &d.dataset.gallery,
            &PipelineConfig {
                angle_threshold: Some(60.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(order_inversion_rate(&probe, &d.dataset.gallery), 0.0);
    }

    #[test]
    fn reversed_gallery_is_fully_inverted() {
        let probe = build_flow(
            (0..5)
                .map(|i| PedestrianRecord::new(format!("a{i}"), "A", i * 10).with_true_match(format!("b{i}")))
                .collect(),
            "A",
        )
        .unwrap();
        let gallery = build_flow(
            (0..5).map(|i| PedestrianRecord::new(format!("b{i}"), "B", 100 - i * 10)).collect(),
            "B",
        )
        .unwrap();
        assert_eq!(order_inversion_rate(&probe, &gallery), 1.0);
    }

    #[test]
    fn planted_outliers_top_the_saliency_ranking() {
        let d = generate_flow(&SynthParams { cross_view_noise: 0.0, ..small() }).unwrap();
        let planted = salient_lookup(&d);
        for space in d.dataset.bank.spaces() {
            let table = saliency_scores(space, &d.dataset.probe, 5).unwrap();
            let set = &planted[space.name()];
            let min_out = table
                .entries
                .iter()
                .filter(|e| set.contains(e.id.as_str()))
                .map(|e| e.score)
                .fold(f64::INFINITY, f64::min);
            let max_bulk = table
                .entries
                .iter()
                .filter(|e| !set.contains(e.id.as_str()))
                .map(|e| e.score)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(min_out > max_bulk, "{}: {min_out} <= {max_bulk}", space.name());
        }
    }

    #[test]
    fn noiseless_views_give_perfect_baseline() {
        let d = generate_flow(&SynthParams { cross_view_noise: 0.0, ..small() }).unwrap();
        let mut config = PipelineConfig::default();
        for s in d.dataset.bank.spaces() {
            config.rho_per_feature.insert(s.name().to_string(), 1.01);
        }
        let e = crate::eval::evaluate(&d.dataset.probe, &d.dataset.gallery, &d.dataset.bank, &config).unwrap();
        assert_eq!(e.baseline.at(1), 1.0);
    }

    #[test]
    fn infeasible_params_are_rejected() {
        let p = SynthParams {
            num_identities: 5,
            salient_fraction: 0.05,
            require_salient: true,
            ..SynthParams::default()
        }
        .with_dim(4);
        assert!(matches!(generate_flow(&p), Err(Error::Parameter(_))));
        assert!(generate_flow(&SynthParams { num_identities: 3, ..small() }).is_err());
        assert!(generate_flow(&SynthParams { dims: vec![4], ..small() }).is_err());
        assert!(generate_flow(&SynthParams { direction_split: 1.5, ..small() }).is_err());
    }

    #[test]
    fn camera_b_frames_are_non_negative_and_truth_is_symmetric() {
        let d = generate_flow(&small()).unwrap();
        assert_eq!(d.dataset.gallery.members().iter().map(|r| r.entering_frame).min(), Some(0));
        for r in d.dataset.probe.members() {
            let g = d.dataset.gallery.get(r.true_match.as_deref().unwrap()).unwrap();
            assert_eq!(g.true_match.as_deref(), Some(r.id.as_str()));
        }
    }
}
