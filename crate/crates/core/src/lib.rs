//! Key-person aided person re-identification across two camera views.
//!
//! The pipeline scores how isolated each probe pedestrian is in every
//! feature space, keeps the most isolated ones as key persons, matches them
//! into the gallery and uses their transit times to discount baseline
//! distances of gallery candidates arriving at a plausible time.

pub mod error;
pub mod eval;
pub mod flow;
pub mod io;
pub mod model;
mod par;
pub mod rerank;
pub mod rng;
pub mod saliency;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{evaluate, run_trials, CmcCurve, Evaluation, TrialReport};
pub use flow::{build_flow, correspond_subsets, split_by_velocity};
pub use model::{
    Dataset, DirectionMap, FeatureBank, FeatureSpace, FlowSet, KeyScope, KeySet, Metric, PedestrianRecord,
    PipelineConfig, ScoreMatrix, WeightCombine,
};
pub use par::{is_parallel, with_threads};
pub use rerank::{rerank_query, RankedCandidate, Reranker};
pub use saliency::{saliency_scores, select_key_persons, select_keys, sweep_rho, union_key_sets};
pub use synth::{generate_flow, SynthParams};
