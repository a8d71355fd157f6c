//! Domain types shared by every pipeline stage.
//!
//! Everything here is plain data that is immutable once built; the pipeline
//! stages only ever borrow it, so it can be shared freely across workers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Per-pedestrian walking velocity in image units per frame.
pub type Velocity = [f64; 2];

pub(crate) fn speed(v: &Velocity) -> f64 {
    v[0].hypot(v[1])
}

/// One pedestrian as seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianRecord {
    pub id: String,
    pub camera: String,
    /// Frame index at which the pedestrian enters the view.
    pub entering_frame: u64,
    pub velocity: Velocity,
    /// Identity of the same person in the opposite camera, when known.
    pub true_match: Option<String>,
}

impl PedestrianRecord {
    pub fn new(id: impl Into<String>, camera: impl Into<String>, entering_frame: u64) -> Self {
        PedestrianRecord {
            id: id.into(),
            camera: camera.into(),
            entering_frame,
            velocity: [0.0, 0.0],
            true_match: None,
        }
    }

    pub fn with_velocity(mut self, velocity: Velocity) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn with_true_match(mut self, id: impl Into<String>) -> Self {
        self.true_match = Some(id.into());
        self
    }
}

/// Dissimilarity used inside one feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// `1 - cos(a, b)`, clamped at 0. A zero vector is at distance 1 from
    /// any non-zero vector and 0 from another zero vector.
    Cosine,
}

impl Metric {
    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Input(format!("unknown metric `{other}`"))),
        }
    }
}

/// A named embedding space, with one embedding table per camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    name: String,
    dim: usize,
    metric: Metric,
    rho: f64,
    tables: BTreeMap<String, HashMap<String, Vec<f64>>>,
}

impl FeatureSpace {
    pub fn new(name: impl Into<String>, dim: usize, metric: Metric, rho: f64) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::param(format!("feature `{name}`: dim must be positive")));
        }
        check_rho(&name, rho)?;
        Ok(FeatureSpace {
            name,
            dim,
            metric,
            rho,
            tables: BTreeMap::new(),
        })
    }

    /// Stores an embedding. Length and finiteness are not checked here;
    /// [`validate_inputs`] reports offenders and [`FeatureSpace::vector`]
    /// refuses to hand them out.
    pub fn insert(&mut self, camera: impl Into<String>, id: impl Into<String>, vector: Vec<f64>) {
        self.tables
            .entry(camera.into())
            .or_default()
            .insert(id.into(), vector);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        check_rho(&self.name, rho)?;
        self.rho = rho;
        Ok(self)
    }

    pub fn cameras(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn table(&self, camera: &str) -> Option<&HashMap<String, Vec<f64>>> {
        self.tables.get(camera)
    }

    pub fn embedding(&self, camera: &str, id: &str) -> Option<&[f64]> {
        self.tables.get(camera)?.get(id).map(Vec::as_slice)
    }

    /// Like [`FeatureSpace::embedding`] but insists on a well-formed vector.
    pub fn vector(&self, camera: &str, id: &str) -> Result<&[f64]> {
        let v = self.embedding(camera, id).ok_or_else(|| {
            Error::Validation(format!(
                "feature `{}` has no embedding for `{id}` in camera `{camera}`",
                self.name
            ))
        })?;
        if v.len() != self.dim {
            return Err(Error::Validation(format!(
                "feature `{}`: embedding of `{id}` in camera `{camera}` has length {}, expected {}",
                self.name,
                v.len(),
                self.dim
            )));
        }
        Ok(v)
    }
}

fn check_rho(name: &str, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!(
            "feature `{name}`: rho {rho} outside [0, 1]"
        )));
    }
    Ok(())
}

/// The collection of feature spaces used for key-person selection, plus the
/// dissimilarity that the re-ranking step re-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    spaces: Vec<FeatureSpace>,
    baseline: String,
    baseline_matrix: Option<ScoreMatrix>,
}

impl FeatureBank {
    pub fn new(spaces: Vec<FeatureSpace>, baseline: impl Into<String>) -> Result<Self> {
        let baseline = baseline.into();
        if spaces.is_empty() {
            return Err(Error::param("feature bank needs at least one feature space"));
        }
        let mut seen = HashSet::new();
        for s in &spaces {
            if !seen.insert(s.name()) {
                return Err(Error::param(format!("duplicate feature name `{}`", s.name())));
            }
        }
        if !seen.contains(baseline.as_str()) {
            return Err(Error::param(format!(
                "baseline feature `{baseline}` is not in the bank"
            )));
        }
        Ok(FeatureBank {
            spaces,
            baseline,
            baseline_matrix: None,
        })
    }

    /// Replaces the baseline dissimilarity with precomputed probe x gallery
    /// scores (e.g. from a metric learned elsewhere).
    pub fn with_baseline_matrix(mut self, matrix: ScoreMatrix) -> Self {
        self.baseline_matrix = Some(matrix);
        self
    }

    pub fn with_baseline(mut self, baseline: impl Into<String>) -> Result<Self> {
        let baseline = baseline.into();
        if self.space(&baseline).is_none() {
            return Err(Error::param(format!(
                "baseline feature `{baseline}` is not in the bank"
            )));
        }
        self.baseline = baseline;
        Ok(self)
    }

    pub fn spaces(&self) -> &[FeatureSpace] {
        &self.spaces
    }

    pub fn space(&self, name: &str) -> Option<&FeatureSpace> {
        self.spaces.iter().find(|s| s.name() == name)
    }

    pub fn baseline(&self) -> &str {
        &self.baseline
    }

    pub fn baseline_space(&self) -> &FeatureSpace {
        self.space(&self.baseline).expect("baseline checked at construction")
    }

    pub fn baseline_matrix(&self) -> Option<&ScoreMatrix> {
        self.baseline_matrix.as_ref()
    }
}

/// A group of pedestrians walking with similar velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySubset {
    pub label: String,
    pub main_velocity: Velocity,
    /// Members in flow order.
    pub member_ids: Vec<String>,
}

/// One camera's pedestrians ordered by entering frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    camera: String,
    members: Vec<PedestrianRecord>,
    index: HashMap<String, usize>,
    subsets: Option<Vec<VelocitySubset>>,
    subset_of: Vec<usize>,
}

impl FlowSet {
    /// Stable-sorts `records` by entering frame. Duplicate ids are rejected.
    pub(crate) fn from_records(camera: &str, mut records: Vec<PedestrianRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.entering_frame);
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Input(format!(
                    "duplicate id `{}` in camera `{camera}`",
                    r.id
                )));
            }
        }
        Ok(FlowSet {
            camera: camera.to_string(),
            members: records,
            index,
            subsets: None,
            subset_of: Vec::new(),
        })
    }

    /// Attaches a partition of the members. `assignment[i]` is the subset of
    /// member `i`.
    pub(crate) fn with_subsets(mut self, subsets: Vec<VelocitySubset>, assignment: Vec<usize>) -> Self {
        debug_assert_eq!(assignment.len(), self.members.len());
        self.subsets = Some(subsets);
        self.subset_of = assignment;
        self
    }

    pub fn camera(&self) -> &str {
        &self.camera
    }

    pub fn members(&self) -> &[PedestrianRecord] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&PedestrianRecord> {
        self.position(id).map(|i| &self.members[i])
    }

    pub(crate) fn require(&self, id: &str) -> Result<&PedestrianRecord> {
        self.get(id).ok_or_else(|| {
            Error::NotFound(format!("`{id}` is not in the flow of camera `{}`", self.camera))
        })
    }

    pub fn subsets(&self) -> Option<&[VelocitySubset]> {
        self.subsets.as_deref()
    }

    /// Index of the velocity subset holding member `position`.
    pub fn subset_index(&self, position: usize) -> Option<usize> {
        self.subsets.as_ref().map(|_| self.subset_of[position])
    }

    /// A new flow holding only the members accepted by `keep`, in the same
    /// order and without subsets.
    pub fn restrict(&self, mut keep: impl FnMut(&PedestrianRecord) -> bool) -> FlowSet {
        let members: Vec<_> = self.members.iter().filter(|r| keep(r)).cloned().collect();
        let index = members
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        FlowSet {
            camera: self.camera.clone(),
            members,
            index,
            subsets: None,
            subset_of: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPerson {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyEntry {
    pub id: String,
    /// Feature in which this person has the highest saliency.
    pub feature: String,
    pub score: f64,
}

/// Key persons selected in each feature space, and their union.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeySet {
    pub per_feature: Vec<(String, Vec<KeyPerson>)>,
    pub union: Vec<KeyEntry>,
}

impl KeySet {
    pub fn empty() -> Self {
        KeySet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }

    pub fn len(&self) -> usize {
        self.union.len()
    }

    pub fn entry(&self, id: &str) -> Option<&KeyEntry> {
        self.union.iter().find(|e| e.id == id)
    }
}

/// Probe x gallery dissimilarities, lower is more similar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    probe_ids: Vec<String>,
    gallery_ids: Vec<String>,
    values: Vec<f64>,
    probe_index: HashMap<String, usize>,
    gallery_index: HashMap<String, usize>,
}

impl ScoreMatrix {
    /// `values` is row-major, one row per probe id.
    pub fn new(probe_ids: Vec<String>, gallery_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != probe_ids.len() * gallery_ids.len() {
            return Err(Error::param(format!(
                "score matrix holds {} values for a {}x{} shape",
                values.len(),
                probe_ids.len(),
                gallery_ids.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            let g = gallery_ids.len().max(1);
            return Err(Error::Validation(format!(
                "score matrix entry ({}, {}) = {} is not a finite non-negative number",
                probe_ids[bad / g],
                gallery_ids[bad % g],
                values[bad]
            )));
        }
        let probe_index = index_of(&probe_ids, "probe")?;
        let gallery_index = index_of(&gallery_ids, "gallery")?;
        Ok(ScoreMatrix {
            probe_ids,
            gallery_ids,
            values,
            probe_index,
            gallery_index,
        })
    }

    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let g = self.gallery_ids.len();
        &self.values[probe * g..(probe + 1) * g]
    }

    pub fn at(&self, probe: usize, gallery: usize) -> f64 {
        self.values[probe * self.gallery_ids.len() + gallery]
    }

    pub fn probe_position(&self, id: &str) -> Option<usize> {
        self.probe_index.get(id).copied()
    }

    pub fn gallery_position(&self, id: &str) -> Option<usize> {
        self.gallery_index.get(id).copied()
    }

    pub fn get(&self, probe_id: &str, gallery_id: &str) -> Option<f64> {
        Some(self.at(self.probe_position(probe_id)?, self.gallery_position(gallery_id)?))
    }
}

fn index_of(ids: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::Input(format!("duplicate {what} id `{id}` in score matrix")));
        }
    }
    Ok(index)
}

/// How ω is formed for a candidate covered by several windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightCombine {
    #[default]
    Min,
    Product,
    Mean,
}

impl FromStr for WeightCombine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "min" => Ok(WeightCombine::Min),
            "product" => Ok(WeightCombine::Product),
            "mean" => Ok(WeightCombine::Mean),
            other => Err(Error::config("weight_combine", format!("unknown rule `{other}`"))),
        }
    }
}

impl fmt::Display for WeightCombine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightCombine::Min => "min",
            WeightCombine::Product => "product",
            WeightCombine::Mean => "mean",
        })
    }
}

/// Pairing rule between probe-side and gallery-side velocity subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DirectionMap {
    /// Pair subsets whose main velocities point the same way.
    #[default]
    Identity,
    /// Pair subsets whose main velocities point opposite ways.
    Negate,
    /// Explicit `(probe label, gallery label)` pairs.
    Explicit(Vec<(String, String)>),
}

impl FromStr for DirectionMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(DirectionMap::Identity),
            "negate" => Ok(DirectionMap::Negate),
            table => {
                let mut pairs = Vec::new();
                for item in table.split(',') {
                    let (p, g) = item.split_once(':').ok_or_else(|| {
                        Error::config(
                            "direction_map",
                            format!("expected identity, negate or probe:gallery pairs, got `{item}`"),
                        )
                    })?;
                    pairs.push((p.trim().to_string(), g.trim().to_string()));
                }
                Ok(DirectionMap::Explicit(pairs))
            }
        }
    }
}

impl fmt::Display for DirectionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionMap::Identity => f.write_str("identity"),
            DirectionMap::Negate => f.write_str("negate"),
            DirectionMap::Explicit(pairs) => {
                let parts: Vec<_> = pairs.iter().map(|(p, g)| format!("{p}:{g}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Where key persons are selected when velocity subsets are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyScope {
    /// Saliency over the whole probe flow.
    #[default]
    Global,
    /// Saliency computed separately inside each probe velocity subset.
    Subset,
}

impl FromStr for KeyScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "global" => Ok(KeyScope::Global),
            "subset" => Ok(KeyScope::Subset),
            other => Err(Error::config("key_scope", format!("unknown scope `{other}`"))),
        }
    }
}

impl fmt::Display for KeyScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyScope::Global => "global",
            KeyScope::Subset => "subset",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Neighbours averaged by the saliency score.
    pub k_nn: usize,
    /// Per-feature overrides of the saliency threshold. Values above 1
    /// switch a feature off for key selection.
    pub rho_per_feature: BTreeMap<String, f64>,
    /// Relative tolerance of the temporal candidate window.
    pub tau: f64,
    /// Number of temporally nearest key persons used per query.
    pub num_keys: usize,
    /// Angular half-width (degrees) of a velocity subset; `None` disables
    /// velocity splitting.
    pub angle_threshold: Option<f64>,
    /// Speed tolerance of a velocity subset (units per frame).
    pub speed_tolerance: f64,
    pub direction_map: DirectionMap,
    pub weight_combine: WeightCombine,
    pub key_scope: KeyScope,
    pub baseline_feature: Option<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_nn: 5,
            rho_per_feature: BTreeMap::new(),
            tau: 0.3,
            num_keys: 4,
            angle_threshold: None,
            speed_tolerance: f64::INFINITY,
            direction_map: DirectionMap::Identity,
            weight_combine: WeightCombine::Min,
            key_scope: KeyScope::Global,
            baseline_feature: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_nn == 0 {
            return Err(Error::config("k_nn", "must be at least 1"));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::config("tau", "must be a finite value >= 0"));
        }
        if self.num_keys == 0 {
            return Err(Error::config("num_keys", "must be at least 1"));
        }
        if let Some(theta) = self.angle_threshold {
            if !(theta > 0.0 && theta <= 180.0) {
                return Err(Error::config("angle_threshold", "must lie in (0, 180] degrees"));
            }
        }
        if self.speed_tolerance.is_nan() || self.speed_tolerance < 0.0 {
            return Err(Error::config("speed_tolerance", "must be >= 0"));
        }
        for (name, rho) in &self.rho_per_feature {
            if !(rho.is_finite() && *rho >= 0.0) {
                return Err(Error::config(format!("rho.{name}"), "must be a finite value >= 0"));
            }
        }
        Ok(())
    }

    /// Threshold for `space`: the override if present, else the space's own.
    pub fn rho_for(&self, space: &FeatureSpace) -> f64 {
        self.rho_per_feature
            .get(space.name())
            .copied()
            .unwrap_or(space.rho())
    }

    pub fn splits_velocity(&self) -> bool {
        self.angle_threshold.is_some()
    }
}

/// A probe/gallery pair of flows with the embeddings that describe them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub probe: FlowSet,
    pub gallery: FlowSet,
    pub bank: FeatureBank,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    MissingEmbedding { feature: String, camera: String, id: String },
    DimensionMismatch { feature: String, camera: String, id: String, expected: usize, found: usize },
    NonFiniteEmbedding { feature: String, camera: String, id: String },
    UnknownEmbeddingId { feature: String, camera: String, id: String },
    DuplicateId { camera: String, id: String },
    MissingTrueMatch { probe_id: String, true_match: String },
    MissingBaselineScore { camera: String, id: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            MissingEmbedding { feature, camera, id } => {
                write!(f, "missing embedding: `{id}` (camera {camera}) in feature {feature}")
            }
            DimensionMismatch { feature, camera, id, expected, found } => write!(
                f,
                "dimension mismatch: `{id}` (camera {camera}) in feature {feature} has length {found}, expected {expected}"
            ),
            NonFiniteEmbedding { feature, camera, id } => {
                write!(f, "non-finite embedding: `{id}` (camera {camera}) in feature {feature}")
            }
            UnknownEmbeddingId { feature, camera, id } => write!(
                f,
                "unknown id: feature {feature} has an embedding for `{id}` which camera {camera} does not list"
            ),
            DuplicateId { camera, id } => write!(f, "duplicate id: `{id}` in camera {camera}"),
            MissingTrueMatch { probe_id, true_match } => write!(
                f,
                "missing true match: `{probe_id}` points at `{true_match}` which the gallery does not contain"
            ),
            MissingBaselineScore { camera, id } => {
                write!(f, "missing baseline score: `{id}` (camera {camera}) is not in the precomputed matrix")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks that every flow member has a well-formed embedding in every feature
/// space, that every embedding belongs to a listed member, and that ground
/// truth and any precomputed baseline cover the flows.
pub fn validate_inputs(bank: &FeatureBank, probe: &FlowSet, gallery: &FlowSet) -> ValidationReport {
    let mut issues = Vec::new();
    for flow in [probe, gallery] {
        let mut seen = HashSet::new();
        for r in flow.members() {
            if !seen.insert(r.id.as_str()) {
                issues.push(ValidationIssue::DuplicateId {
                    camera: flow.camera().to_string(),
                    id: r.id.clone(),
                });
            }
        }
    }
    for space in bank.spaces() {
        for flow in [probe, gallery] {
            let camera = flow.camera();
            for r in flow.members() {
                let issue = |id: &str| (space.name().to_string(), camera.to_string(), id.to_string());
                match space.embedding(camera, &r.id) {
                    None => {
                        let (feature, camera, id) = issue(&r.id);
                        issues.push(ValidationIssue::MissingEmbedding { feature, camera, id });
                    }
                    Some(v) if v.len() != space.dim() => {
                        let (feature, camera, id) = issue(&r.id);
                        issues.push(ValidationIssue::DimensionMismatch {
                            feature,
                            camera,
                            id,
                            expected: space.dim(),
                            found: v.len(),
                        });
                    }
                    Some(v) if v.iter().any(|x| !x.is_finite()) => {
                        let (feature, camera, id) = issue(&r.id);
                        issues.push(ValidationIssue::NonFiniteEmbedding { feature, camera, id });
                    }
                    Some(_) => {}
                }
            }
            if let Some(table) = space.table(camera) {
                let mut extra: Vec<_> = table.keys().filter(|id| flow.get(id).is_none()).collect();
                extra.sort();
                for id in extra {
                    issues.push(ValidationIssue::UnknownEmbeddingId {
                        feature: space.name().to_string(),
                        camera: camera.to_string(),
                        id: id.clone(),
                    });
                }
            }
        }
    }
    for r in probe.members() {
        if let Some(t) = &r.true_match {
            if gallery.get(t).is_none() {
                issues.push(ValidationIssue::MissingTrueMatch {
                    probe_id: r.id.clone(),
                    true_match: t.clone(),
                });
            }
        }
    }
    if let Some(m) = bank.baseline_matrix() {
        for r in probe.members() {
            if m.probe_position(&r.id).is_none() {
                issues.push(ValidationIssue::MissingBaselineScore {
                    camera: probe.camera().to_string(),
                    id: r.id.clone(),
                });
            }
        }
        for r in gallery.members() {
            if m.gallery_position(&r.id).is_none() {
                issues.push(ValidationIssue::MissingBaselineScore {
                    camera: gallery.camera().to_string(),
                    id: r.id.clone(),
                });
            }
        }
    }
    ValidationReport { issues }
}
