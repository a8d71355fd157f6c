//! CMC evaluation and the repeated random-split protocol.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureBank, FlowSet, PipelineConfig};
use crate::rerank::{prepare_flows, RankedCandidate, Reranker};
use crate::rng::Rng;
use crate::saliency::select_keys;
use crate::par;

pub const DEFAULT_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Cumulative matching characteristic: `accuracy[r - 1]` is the fraction of
/// queries whose true match is within the top `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub accuracy: Vec<f64>,
    pub num_queries: usize,
}

impl CmcCurve {
    /// Accuracy at 1-based rank `r`. Ranks past the gallery size read the
    /// last value.
    pub fn at(&self, r: usize) -> f64 {
        assert!(r >= 1, "ranks are 1-based");
        match self.accuracy.get(r - 1) {
            Some(a) => *a,
            None => self.accuracy.last().copied().unwrap_or(0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.accuracy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracy.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.accuracy.windows(2).all(|w| w[0] <= w[1])
    }
}

pub fn rank_of_true_match(ranked: &[RankedCandidate], true_id: &str) -> Result<usize> {
    ranked
        .iter()
        .position(|c| c.id == true_id)
        .map(|p| p + 1)
        .ok_or_else(|| Error::Evaluation(format!("true match `{true_id}` is not in the ranked gallery")))
}

pub fn cmc_curve(ranks: &[usize], gallery_size: usize) -> Result<CmcCurve> {
    if ranks.is_empty() {
        return Err(Error::param("cmc curve needs at least one query"));
    }
    let mut counts = vec![0usize; gallery_size];
    for &r in ranks {
        if r == 0 || r > gallery_size {
            return Err(Error::param(format!("rank {r} outside 1..={gallery_size}")));
        }
        counts[r - 1] += 1;
    }
    let n = ranks.len() as f64;
    let mut seen = 0;
    let accuracy = counts
        .into_iter()
        .map(|c| {
            seen += c;
            seen as f64 / n
        })
        .collect();
    Ok(CmcCurve {
        accuracy,
        num_queries: ranks.len(),
    })
}

/// Pointwise mean of equally long curves, summed in the given order.
pub fn average_curves(curves: &[&CmcCurve]) -> Result<CmcCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::param("nothing to average"))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::param("curves to average differ in length"));
    }
    let n = curves.len() as f64;
    let accuracy = (0..first.len())
        .map(|r| curves.iter().map(|c| c.accuracy[r]).sum::<f64>() / n)
        .collect();
    Ok(CmcCurve {
        accuracy,
        num_queries: curves.iter().map(|c| c.num_queries).sum(),
    })
}

/// Baseline and key-aided results of one probe/gallery evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub baseline: CmcCurve,
    pub key_aided: CmcCurve,
    pub baseline_ranks: Vec<usize>,
    pub key_aided_ranks: Vec<usize>,
    pub num_keys: usize,
}

/// Runs key selection and re-ranking on one probe/gallery pair and scores
/// both rankings against the probe's ground truth.
pub fn evaluate(probe: &FlowSet, gallery: &FlowSet, bank: &FeatureBank, config: &PipelineConfig) -> Result<Evaluation> {
    if let Some(r) = probe.members().iter().find(|r| r.true_match.is_none()) {
        return Err(Error::Evaluation(format!("`{}` has no true match", r.id)));
    }
    let (probe, gallery) = prepare_flows(probe, gallery, config)?;
    let keys = select_keys(bank, &probe, config)?;
    let reranker = Reranker::new(&probe, &gallery, bank, &keys, config)?;
    let ranks = par::try_map(probe.members(), |q| {
        let truth = q.true_match.as_deref().expect("checked above");
        let base = rank_of_true_match(&reranker.baseline_ranking(&q.id)?, truth)?;
        let keyed = rank_of_true_match(&reranker.rank(&q.id)?, truth)?;
        Ok((base, keyed))
    })?;
    let (baseline_ranks, key_aided_ranks): (Vec<_>, Vec<_>) = ranks.into_iter().unzip();
    Ok(Evaluation {
        baseline: cmc_curve(&baseline_ranks, gallery.len())?,
        key_aided: cmc_curve(&key_aided_ranks, gallery.len())?,
        baseline_ranks,
        key_aided_ranks,
        num_keys: keys.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub index: usize,
    /// Probe ids drawn into this trial's test half.
    pub test_ids: Vec<String>,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub baseline: CmcCurve,
    pub key_aided: CmcCurve,
    pub trials: Vec<TrialOutcome>,
}

/// Number of identities drawn into the test half.
pub fn test_size(total: usize, split: f64) -> usize {
    ((total as f64) * split).round() as usize
}

/// Repeats the evaluation on `num_trials` random identity splits. Trial `i`
/// shuffles the probe ids (flow order) with stream `i` of `seed` and keeps
/// the first `round(split * N)`; the gallery is cut down to their true
/// matches. The held-out identities are not used.
pub fn run_trials(
    dataset: &Dataset,
    config: &PipelineConfig,
    num_trials: usize,
    split: f64,
    seed: u64,
) -> Result<TrialReport> {
    if num_trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::param(format!("split {split} outside (0, 1]")));
    }
    let ids: Vec<&str> = dataset.probe.members().iter().map(|r| r.id.as_str()).collect();
    let n_test = test_size(ids.len(), split);
    if n_test < 2 {
        return Err(Error::param(format!(
            "split {split} of {} identities leaves fewer than 2 for testing",
            ids.len()
        )));
    }
    let trials = par::try_map_range(num_trials, |i| {
        let mut order = ids.clone();
        Rng::stream(seed, i as u64).shuffle(&mut order);
        let chosen: HashSet<&str> = order[..n_test].iter().copied().collect();
        let probe = dataset.probe.restrict(|r| chosen.contains(r.id.as_str()));
        let truth: HashSet<&str> = probe
            .members()
            .iter()
            .map(|r| {
                r.true_match
                    .as_deref()
                    .ok_or_else(|| Error::Evaluation(format!("`{}` has no true match", r.id)))
            })
            .collect::<Result<_>>()?;
        let gallery = dataset.gallery.restrict(|r| truth.contains(r.id.as_str()));
        let evaluation = evaluate(&probe, &gallery, &dataset.bank, config)?;
        Ok(TrialOutcome {
            index: i,
            test_ids: probe.members().iter().map(|r| r.id.clone()).collect(),
            evaluation,
        })
    })?;
    let baseline = average_curves(&trials.iter().map(|t| &t.evaluation.baseline).collect::<Vec<_>>())?;
    let key_aided = average_curves(&trials.iter().map(|t| &t.evaluation.key_aided).collect::<Vec<_>>())?;
    Ok(TrialReport {
        baseline,
        key_aided,
        trials,
    })
}

/// Text table of accuracies (percent, one decimal) at the given ranks.
pub fn compare_table(curves: &[(&str, &CmcCurve)], ranks: &[usize]) -> String {
    let width = curves.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}", "method");
    for r in ranks {
        let _ = write!(out, " {:>6}", format!("r={r}"));
    }
    out.push('\n');
    if ranks.is_empty() {
        return out;
    }
    for (name, curve) in curves {
        let _ = write!(out, "{name:<width$}");
        for &r in ranks {
            let _ = write!(out, " {:>6.1}", 100.0 * curve.at(r));
        }
        out.push('\n');
    }
    out
}
