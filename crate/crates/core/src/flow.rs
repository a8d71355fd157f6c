//! Temporally ordered pedestrian flows and velocity subsets.

use crate::error::{Error, Result};
use crate::model::{speed, DirectionMap, FlowSet, PedestrianRecord, Velocity, VelocitySubset};

pub const STATIONARY_LABEL: &str = "stationary";

/// Orders `records` by entering frame (stable, so equal frames keep their
/// input order).
pub fn build_flow(records: Vec<PedestrianRecord>, camera: &str) -> Result<FlowSet> {
    if let Some(r) = records.iter().find(|r| r.camera != camera) {
        return Err(Error::Input(format!(
            "record `{}` belongs to camera `{}`, not `{camera}`",
            r.id, r.camera
        )));
    }
    FlowSet::from_records(camera, records)
}

/// `T_a - T_b` in frames.
pub fn temporal_distance(flow: &FlowSet, a: &str, b: &str) -> Result<i64> {
    let ta = flow.require(a)?.entering_frame as i64;
    let tb = flow.require(b)?.entering_frame as i64;
    Ok(ta - tb)
}

fn angle_degrees(a: &Velocity, b: &Velocity) -> f64 {
    let cos = (a[0] * b[0] + a[1] * b[1]) / (speed(a) * speed(b));
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Greedy velocity clustering. The fastest unassigned member seeds a subset
/// and its velocity becomes the subset's main velocity; every unassigned
/// member within `epsilon` in speed and strictly within `theta` degrees in
/// direction joins it. Zero-velocity members share one stationary subset.
pub fn split_by_velocity(flow: &FlowSet, theta: f64, epsilon: f64) -> Result<FlowSet> {
    if !(theta > 0.0 && theta <= 180.0) {
        return Err(Error::param(format!("angle threshold {theta} outside (0, 180]")));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::param(format!("speed tolerance {epsilon} must be >= 0")));
    }
    let members = flow.members();
    if let Some(r) = members.iter().find(|r| !r.velocity.iter().all(|x| x.is_finite())) {
        return Err(Error::Input(format!("`{}` has a non-finite velocity", r.id)));
    }

    let mut assignment: Vec<Option<usize>> = vec![None; members.len()];
    let mut subsets: Vec<(Velocity, Vec<usize>)> = Vec::new();
    let stationary: Vec<usize> = (0..members.len())
        .filter(|&i| speed(&members[i].velocity) == 0.0)
        .collect();

    loop {
        let seed = (0..members.len())
            .filter(|&i| assignment[i].is_none() && speed(&members[i].velocity) > 0.0)
            .max_by(|&a, &b| {
                speed(&members[a].velocity)
                    .total_cmp(&speed(&members[b].velocity))
                    .then(b.cmp(&a))
            });
        let Some(seed) = seed else { break };
        let main = members[seed].velocity;
        let main_speed = speed(&main);
        let label = subsets.len();
        let mut taken = Vec::new();
        for (i, r) in members.iter().enumerate() {
            if assignment[i].is_some() {
                continue;
            }
            let s = speed(&r.velocity);
            if s == 0.0 {
                continue;
            }
            if i == seed || ((s - main_speed).abs() <= epsilon && angle_degrees(&r.velocity, &main) < theta) {
                assignment[i] = Some(label);
                taken.push(i);
            }
        }
        subsets.push((main, taken));
    }

    let mut out: Vec<VelocitySubset> = subsets
        .into_iter()
        .enumerate()
        .map(|(n, (main, idx))| VelocitySubset {
            label: format!("s{n}"),
            main_velocity: main,
            member_ids: idx.iter().map(|&i| members[i].id.clone()).collect(),
        })
        .collect();
    if !stationary.is_empty() {
        let label = out.len();
        for &i in &stationary {
            assignment[i] = Some(label);
        }
        out.push(VelocitySubset {
            label: STATIONARY_LABEL.to_string(),
            main_velocity: [0.0, 0.0],
            member_ids: stationary.iter().map(|&i| members[i].id.clone()).collect(),
        });
    }
    let assignment = assignment
        .into_iter()
        .map(|a| a.expect("every member assigned"))
        .collect();
    Ok(flow.restrict(|_| true).with_subsets(out, assignment))
}

/// Which gallery subset each probe subset is matched against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubsetPairing {
    /// `(probe subset index, gallery subset index)`.
    pub pairs: Vec<(usize, usize)>,
    /// Probe subsets with no counterpart; their members are matched against
    /// the whole gallery.
    pub unpaired_probe: Vec<usize>,
}

impl SubsetPairing {
    pub fn gallery_for(&self, probe_subset: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(p, _)| *p == probe_subset)
            .map(|&(_, g)| g)
    }
}

fn direction_score(p: &VelocitySubset, g: &VelocitySubset, sign: f64) -> Option<f64> {
    let (sp, sg) = (speed(&p.main_velocity), speed(&g.main_velocity));
    match (sp == 0.0, sg == 0.0) {
        (true, true) => Some(1.0),
        (false, false) => {
            let cos = sign
                * (p.main_velocity[0] * g.main_velocity[0] + p.main_velocity[1] * g.main_velocity[1])
                / (sp * sg);
            (cos > 0.0).then_some(cos)
        }
        _ => None,
    }
}

/// Pairs probe velocity subsets with gallery velocity subsets.
///
/// `Identity` and `Negate` pair greedily by cosine similarity of the main
/// velocities (the gallery side negated for `Negate`), best pair first, each
/// gallery subset used once. Only same-facing pairs (positive cosine) are
/// eligible. `Explicit` pairs by label.
pub fn correspond_subsets(probe: &FlowSet, gallery: &FlowSet, map: &DirectionMap) -> Result<SubsetPairing> {
    let (ps, gs) = match (probe.subsets(), gallery.subsets()) {
        (Some(p), Some(g)) => (p, g),
        _ => return Err(Error::param("both flows must be split into velocity subsets")),
    };
    let mut pairs = Vec::new();
    let mut probe_used = vec![false; ps.len()];
    let mut gallery_used = vec![false; gs.len()];
    match map {
        DirectionMap::Identity | DirectionMap::Negate => {
            let sign = if *map == DirectionMap::Negate { -1.0 } else { 1.0 };
            let mut candidates = Vec::new();
            for (i, p) in ps.iter().enumerate() {
                for (j, g) in gs.iter().enumerate() {
                    if let Some(score) = direction_score(p, g, sign) {
                        candidates.push((score, i, j));
                    }
                }
            }
            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            for (_, i, j) in candidates {
                if !probe_used[i] && !gallery_used[j] {
                    probe_used[i] = true;
                    gallery_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }
        DirectionMap::Explicit(table) => {
            for (pl, gl) in table {
                let i = ps.iter().position(|s| &s.label == pl).ok_or_else(|| {
                    Error::param(format!("direction map names unknown probe subset `{pl}`"))
                })?;
                let j = gs.iter().position(|s| &s.label == gl).ok_or_else(|| {
                    Error::param(format!("direction map names unknown gallery subset `{gl}`"))
                })?;
                if probe_used[i] || gallery_used[j] {
                    return Err(Error::param(format!(
                        "direction map uses `{pl}` or `{gl}` more than once"
                    )));
                }
                probe_used[i] = true;
                gallery_used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    let unpaired_probe = (0..ps.len()).filter(|&i| !probe_used[i]).collect();
    Ok(SubsetPairing { pairs, unpaired_probe })
}
