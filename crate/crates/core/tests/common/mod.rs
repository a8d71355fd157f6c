#![allow(dead_code)]

use keyreid::model::{KeyEntry, KeySet};
use keyreid::rng::Rng;
use keyreid::{build_flow, Dataset, FeatureBank, FeatureSpace, Metric, PedestrianRecord, ScoreMatrix};

pub fn random_space(rng: &mut Rng, name: &str, n: usize, dim: usize, metric: Metric, camera: &str) -> FeatureSpace {
    let mut s = FeatureSpace::new(name, dim, metric, 0.5).unwrap();
    for i in 0..n {
        let v = (0..dim).map(|_| rng.normal()).collect();
        s.insert(camera, format!("p{i}"), v);
    }
    s
}

/// Brute-force mean K-NN distance with self excluded, min-max normalised.
pub fn naive_saliency(vectors: &[Vec<f64>], metric: Metric, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..vectors.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..vectors.len())
                .filter(|&j| j != i)
                .map(|j| metric.distance(&vectors[i], &vectors[j]))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|r| if hi > lo { (r - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

pub struct Instance {
    pub dataset: Dataset,
    pub keys: KeySet,
}

/// Small probe/gallery pair with coarse entering frames (many ties and
/// overlapping windows), optional opposite walking directions, random
/// embeddings in one or two spaces, an optional precomputed baseline and an
/// arbitrary key set (possibly empty).
pub fn random_instance(rng: &mut Rng, n: usize) -> Instance {
    let two_dirs = rng.uniform() < 0.5;
    let mut probe = Vec::new();
    let mut gallery = Vec::new();
    for i in 0..n {
        let t = (rng.index(40) * 5) as u64;
        let back = two_dirs && rng.uniform() < 0.5;
        let v = if back { [-1.0, 0.1 * rng.normal()] } else { [1.0, 0.1 * rng.normal()] };
        let transit = 100.0 + 8.0 * rng.normal();
        let tb = if back { 300.0 + t as f64 - transit } else { t as f64 + transit };
        probe.push(PedestrianRecord::new(format!("p{i}"), "A", t).with_velocity(v).with_true_match(format!("g{i}")));
        gallery.push(
            PedestrianRecord::new(format!("g{i}"), "B", tb.round().max(0.0) as u64)
                .with_velocity(v)
                .with_true_match(format!("p{i}")),
        );
    }
    let n_spaces = 1 + rng.index(2);
    let mut spaces = Vec::new();
    for m in 0..n_spaces {
        let metric = if rng.uniform() < 0.5 { Metric::Euclidean } else { Metric::Cosine };
        let dim = 2 + rng.index(4);
        let mut s = FeatureSpace::new(format!("F{m}"), dim, metric, 0.5).unwrap();
        for i in 0..n {
            let base: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for (cam, id) in [("A", format!("p{i}")), ("B", format!("g{i}"))] {
                s.insert(cam, id, base.iter().map(|b| b + 0.5 * rng.normal()).collect());
            }
        }
        spaces.push(s);
    }
    let mut bank = FeatureBank::new(spaces, "F0").unwrap();
    if rng.uniform() < 0.3 {
        let p: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let g: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        let values = (0..n * n).map(|_| rng.uniform() * 3.0).collect();
        bank = bank.with_baseline_matrix(ScoreMatrix::new(p, g, values).unwrap());
    }
    let n_keys = if rng.uniform() < 0.15 { 0 } else { rng.index(n / 2 + 1) };
    let mut ids: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut ids);
    let union = ids[..n_keys]
        .iter()
        .map(|&i| KeyEntry {
            id: format!("p{i}"),
            feature: format!("F{}", rng.index(n_spaces)),
            score: 1.0,
        })
        .collect();
    Instance {
        dataset: Dataset {
            probe: build_flow(probe, "A").unwrap(),
            gallery: build_flow(gallery, "B").unwrap(),
            bank,
        },
        keys: KeySet {
            per_feature: Vec::new(),
            union,
        },
    }
}
