//! Acceptance criteria. Runs as a plain binary and prints one PASS/FAIL
//! line per criterion; exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use keyreid::eval::{cmc_curve, evaluate, CmcCurve};
use keyreid::io::{load_config, write_bundle};
use keyreid::model::{KeyEntry, KeySet, WeightCombine};
use keyreid::rerank::prepare_flows;
use keyreid::rng::Rng;
use keyreid::saliency::{saliency_scores, select_key_persons, select_keys};
use keyreid::synth::{generate_flow, oracle_rerank, SynthParams};
use keyreid::{build_flow, run_trials, Metric, PedestrianRecord, PipelineConfig, Reranker, ScoreMatrix};

const SALIENCY_TOL: f64 = 1e-9;
const SALIENCY_SETS: usize = 50;
const SALIENCY_BUDGET: Duration = Duration::from_secs(10);
const RHO_GRID_POINTS: usize = 21;
const MONOTONICITY_SEEDS: u64 = 10;
const RERANK_INSTANCES: usize = 120;
const SAFETY_SEEDS: u64 = 20;
const NEUTRALITY_INSTANCES: u64 = 12;
const E2E_TRIALS: usize = 10;
const E2E_SPLIT: f64 = 0.5;
const E2E_SEED: u64 = 0;
/// Reference run at generator defaults: baseline rank-1 0.580, key-aided
/// rank-1 0.914.
const E2E_REFERENCE_MARGIN_PP: f64 = 33.4;
const E2E_MARGIN_TOL_PP: f64 = 1.0;
const PERF_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn synth_config() -> PipelineConfig {
    PipelineConfig {
        angle_threshold: Some(60.0),
        ..PipelineConfig::default()
    }
}

fn flow_of(n: usize) -> keyreid::FlowSet {
    build_flow((0..n).map(|i| PedestrianRecord::new(format!("p{i}"), "A", i as u64)).collect(), "A").unwrap()
}

fn saliency_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    for set in 0..SALIENCY_SETS {
        let n = 3 + rng.index(198);
        let dim = 1 + rng.index(64);
        let metric = if set % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
        let k = 1 + rng.index((n - 1).min(10));
        let space = common::random_space(&mut rng, "F", n, dim, metric, "A");
        let vectors: Vec<Vec<f64>> = (0..n).map(|i| space.embedding("A", &format!("p{i}")).unwrap().to_vec()).collect();
        let table = saliency_scores(&space, &flow_of(n), k).map_err(|e| e.to_string())?;
        let expected = common::naive_saliency(&vectors, metric, k);
        for (e, x) in table.entries.iter().zip(&expected) {
            worst = worst.max((e.score - x).abs());
        }
    }
    let elapsed = start.elapsed();
    check(worst <= SALIENCY_TOL, || format!("max deviation {worst:e} > {SALIENCY_TOL:e}"))?;
    check(elapsed < SALIENCY_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{SALIENCY_SETS} sets, max deviation {worst:.1e}, {elapsed:.2?}"))
}

fn threshold_monotonicity() -> Outcome {
    let grid: Vec<f64> = (0..RHO_GRID_POINTS).map(|i| i as f64 / (RHO_GRID_POINTS - 1) as f64).collect();
    let mut checked = 0;
    for seed in 0..MONOTONICITY_SEEDS {
        let d = generate_flow(&SynthParams { seed, ..SynthParams::default() }).map_err(|e| e.to_string())?;
        for space in d.dataset.bank.spaces() {
            let table = saliency_scores(space, &d.dataset.probe, 5).map_err(|e| e.to_string())?;
            let sets: Vec<HashSet<String>> = grid
                .iter()
                .map(|&rho| select_key_persons(&table, rho).into_iter().map(|p| p.id).collect())
                .collect();
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    check(sets[j].len() <= sets[i].len() && sets[j].is_subset(&sets[i]), || {
                        format!("seed {seed} {}: rho {} vs {}", space.name(), grid[i], grid[j])
                    })?;
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (seed, feature) pairs over {RHO_GRID_POINTS} thresholds"))
}

fn rerank_oracle() -> Outcome {
    let mut rng = Rng::new(3);
    let combos: Vec<(usize, f64)> = [1, 2, 4]
        .iter()
        .flat_map(|&l| [0.0, 0.1, 0.3].into_iter().map(move |t| (l, t)))
        .collect();
    let (mut overlaps, mut negative, mut empty, mut changed, mut queries) = (0, 0, 0, 0, 0);
    for i in 0..RERANK_INSTANCES {
        let n = 4 + rng.index(47);
        let inst = common::random_instance(&mut rng, n);
        let (num_keys, tau) = combos[i % combos.len()];
        let cfg = PipelineConfig {
            num_keys,
            tau,
            angle_threshold: if i % 2 == 0 { Some(60.0) } else { None },
            weight_combine: [WeightCombine::Min, WeightCombine::Product, WeightCombine::Mean][i % 3],
            ..PipelineConfig::default()
        };
        let d = &inst.dataset;
        if inst.keys.is_empty() {
            empty += 1;
        }
        let (probe, gallery) = prepare_flows(&d.probe, &d.gallery, &cfg).map_err(|e| e.to_string())?;
        let r = Reranker::new(&probe, &gallery, &d.bank, &inst.keys, &cfg).map_err(|e| e.to_string())?;
        for q in probe.members() {
            let got = keyreid::rerank_query(&q.id, &probe, &gallery, &d.bank, &inst.keys, &cfg).map_err(|e| e.to_string())?;
            let want = oracle_rerank(&q.id, &probe, &gallery, &d.bank, &inst.keys, &cfg).map_err(|e| e.to_string())?;
            check(got == want, || format!("instance {i}, query {}", q.id))?;
            queries += 1;
            let windows = r.windows(&q.id).map_err(|e| e.to_string())?;
            negative += windows.iter().filter(|w| w.anchor.delta_t < 0).count();
            let mut seen = HashSet::new();
            if windows.iter().flat_map(|w| &w.member_ids).any(|id| !seen.insert(id)) {
                overlaps += 1;
            }
            if got != r.baseline_ranking(&q.id).map_err(|e| e.to_string())? {
                changed += 1;
            }
        }
    }
    check(overlaps > 0 && negative > 0 && empty > 0 && changed > 0, || {
        format!("coverage gap: overlaps {overlaps}, negative dT {negative}, empty key sets {empty}, changed {changed}")
    })?;
    Ok(format!(
        "{RERANK_INSTANCES} instances, {queries} queries; overlapping {overlaps}, negative dT windows {negative}, empty key sets {empty}, reordered {changed}"
    ))
}

fn oracle_safety() -> Outcome {
    let cfg = PipelineConfig { tau: 0.3, ..synth_config() };
    let (mut queries, mut improved) = (0, 0);
    for seed in 0..SAFETY_SEEDS {
        let params = SynthParams {
            transit_jitter: 0.0,
            cross_view_noise: 1.0,
            seed,
            ..SynthParams::default()
        };
        let d = generate_flow(&params).map_err(|e| e.to_string())?.dataset;
        let (probe, gallery) = prepare_flows(&d.probe, &d.gallery, &cfg).map_err(|e| e.to_string())?;
        let keys = select_keys(&d.bank, &probe, &cfg).map_err(|e| e.to_string())?;
        let r = Reranker::new(&probe, &gallery, &d.bank, &keys, &cfg).map_err(|e| e.to_string())?;
        for k in &keys.union {
            let truth = probe.get(&k.id).and_then(|p| p.true_match.clone());
            let top = r.key_match(&k.id).map(|m| m.top_match_id.clone());
            check(top == truth, || format!("seed {seed}: key {} matched {top:?}", k.id))?;
        }
        for q in probe.members() {
            let truth = q.true_match.as_deref().unwrap();
            let pos = |list: Vec<keyreid::RankedCandidate>| list.iter().position(|c| c.id == truth).unwrap();
            let base = pos(r.baseline_ranking(&q.id).map_err(|e| e.to_string())?);
            let keyed = pos(r.rank(&q.id).map_err(|e| e.to_string())?);
            check(keyed <= base, || format!("seed {seed}: {} dropped from {} to {}", q.id, base + 1, keyed + 1))?;
            queries += 1;
            if keyed < base {
                improved += 1;
            }
        }
    }
    Ok(format!("{SAFETY_SEEDS} seeds, {queries} queries, none worse, {improved} improved"))
}

fn ids(list: &[keyreid::RankedCandidate]) -> Vec<&str> {
    list.iter().map(|c| c.id.as_str()).collect()
}

fn neutrality() -> Outcome {
    let mut rng = Rng::new(5);
    let (mut a, mut b, mut c) = (0, 0, 0);
    for i in 0..NEUTRALITY_INSTANCES {
        let n = 8 + rng.index(30);
        let inst = common::random_instance(&mut rng, n);
        let d = &inst.dataset;
        let cfg = PipelineConfig::default();

        let empty = KeySet::empty();
        let r = Reranker::new(&d.probe, &d.gallery, &d.bank, &empty, &cfg).map_err(|e| e.to_string())?;
        for q in d.probe.members() {
            let base = r.baseline_ranking(&q.id).map_err(|e| e.to_string())?;
            check(r.rank(&q.id).map_err(|e| e.to_string())? == base, || format!("(a) instance {i}"))?;
        }
        a += 1;

        // one key and a tolerance wide enough that its window spans the gallery
        let key = &d.probe.members()[0];
        let one = KeySet {
            per_feature: Vec::new(),
            union: vec![KeyEntry { id: key.id.clone(), feature: "F0".into(), score: 1.0 }],
        };
        let wide = PipelineConfig { num_keys: 1, tau: 1e9, ..cfg.clone() };
        let r = Reranker::new(&d.probe, &d.gallery, &d.bank, &one, &wide).map_err(|e| e.to_string())?;
        let mut used = 0;
        for q in d.probe.members().iter().filter(|q| q.entering_frame != key.entering_frame) {
            let w = r.windows(&q.id).map_err(|e| e.to_string())?;
            check(w.len() == 1 && w[0].member_ids.len() == d.gallery.len(), || format!("(b) instance {i}: window"))?;
            if w[0].anchor.key.d_key == 0.0 {
                continue;
            }
            let base = r.baseline_ranking(&q.id).map_err(|e| e.to_string())?;
            check(ids(&r.rank(&q.id).map_err(|e| e.to_string())?) == ids(&base), || format!("(b) instance {i}, {}", q.id))?;
            used += 1;
        }
        if used > 0 {
            b += 1;
        }

        let p: Vec<String> = d.probe.members().iter().map(|r| r.id.clone()).collect();
        let g: Vec<String> = d.gallery.members().iter().map(|r| r.id.clone()).collect();
        let values: Vec<f64> = (0..p.len() * g.len()).map(|_| rng.uniform() * 2.0).collect();
        let factor = 0.01 + 50.0 * rng.uniform();
        let scaled = values.iter().map(|v| v * factor).collect();
        let plain = d.bank.clone().with_baseline_matrix(ScoreMatrix::new(p.clone(), g.clone(), values).unwrap());
        let times = d.bank.clone().with_baseline_matrix(ScoreMatrix::new(p, g, scaled).unwrap());
        let ra = Reranker::new(&d.probe, &d.gallery, &plain, &inst.keys, &cfg).map_err(|e| e.to_string())?;
        let rb = Reranker::new(&d.probe, &d.gallery, &times, &inst.keys, &cfg).map_err(|e| e.to_string())?;
        for q in d.probe.members() {
            let x = ra.rank(&q.id).map_err(|e| e.to_string())?;
            let y = rb.rank(&q.id).map_err(|e| e.to_string())?;
            check(ids(&x) == ids(&y), || format!("(c) instance {i}, {}", q.id))?;
        }
        c += 1;
    }
    check(b >= 10, || format!("(b) only {b} instances exercised"))?;
    Ok(format!("(a) {a}, (b) {b}, (c) {c} instances identical"))
}

fn end_to_end(curves: &mut Vec<CmcCurve>) -> Outcome {
    let d = generate_flow(&SynthParams::default()).map_err(|e| e.to_string())?.dataset;
    let report = run_trials(&d, &synth_config(), E2E_TRIALS, E2E_SPLIT, E2E_SEED).map_err(|e| e.to_string())?;
    for t in &report.trials {
        curves.push(t.evaluation.baseline.clone());
        curves.push(t.evaluation.key_aided.clone());
    }
    let (base, keyed) = (report.baseline.at(1), report.key_aided.at(1));
    curves.push(report.baseline);
    curves.push(report.key_aided);
    let margin = 100.0 * (keyed - base);
    check(keyed > base, || format!("key-aided {keyed:.4} <= baseline {base:.4}"))?;
    check((margin - E2E_REFERENCE_MARGIN_PP).abs() <= E2E_MARGIN_TOL_PP, || {
        format!("margin {margin:.2} pp vs reference {E2E_REFERENCE_MARGIN_PP} +/- {E2E_MARGIN_TOL_PP}")
    })?;
    Ok(format!("rank-1 baseline {:.1}%, key-aided {:.1}%, margin {margin:.1} pp", 100.0 * base, 100.0 * keyed))
}

fn cmc_correctness(curves: &[CmcCurve]) -> Outcome {
    let c = cmc_curve(&[1, 2, 4], 5).map_err(|e| e.to_string())?;
    check(c.accuracy == [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0, 1.0], || format!("{:?}", c.accuracy))?;
    let c = cmc_curve(&[3, 3, 1, 5], 5).map_err(|e| e.to_string())?;
    check(c.accuracy == [0.25, 0.25, 0.75, 0.75, 1.0], || format!("{:?}", c.accuracy))?;
    check(curves.iter().all(CmcCurve::is_monotone), || "non-monotone curve in a run".into())?;
    check(!curves.is_empty(), || "no run curves collected".into())?;
    Ok(format!("hand-built lists exact, {} run curves monotone", curves.len()))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_keyreid")
}

fn keyreid(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("keyreid {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    for name in ["s1", "s2"] {
        keyreid(&["synth", "--seed", "7", "--identities", "120", "--dim", "32", "--out", &path(name)])?;
    }
    check(dir_contents(Path::new(&path("s1"))) == dir_contents(Path::new(&path("s2"))), || {
        "synth output differs between identical runs".into()
    })?;
    let data = path("s1");
    let mut compared = 0;
    for cmd in [
        vec!["eval", "--trials", "4"],
        vec!["rerank"],
        vec!["saliency"],
        vec!["sweep-rho"],
    ] {
        let mut outs = Vec::new();
        for jobs in ["1", "8", "8"] {
            let out = path(&format!("{}_{jobs}_{}", cmd[0], outs.len()));
            let mut args = cmd.clone();
            args.extend(["--data", &data, "--jobs", jobs, "--seed", "3", "--out", &out]);
            keyreid(&args)?;
            outs.push(dir_contents(Path::new(&out)));
        }
        check(outs.windows(2).all(|w| w[0] == w[1]), || format!("`{}` output depends on run or --jobs", cmd[0]))?;
        compared += outs[0].len();
    }
    Ok(format!("synth byte-identical; {compared} output files identical for --jobs 1/8"))
}

fn performance() -> Outcome {
    let start = Instant::now();
    let params = SynthParams {
        num_identities: 1000,
        ..SynthParams::default()
    }
    .with_dim(128);
    let d = generate_flow(&params).map_err(|e| e.to_string())?.dataset;
    let full = evaluate(&d.probe, &d.gallery, &d.bank, &synth_config()).map_err(|e| e.to_string())?;
    let report = run_trials(&d, &synth_config(), 10, 0.5, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(elapsed < PERF_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "N=1000 M=3 D=128: full run ({} keys) + 10 trials in {elapsed:.2?} on {} thread(s), rank-1 {:.1}%",
        full.num_keys,
        std::thread::available_parallelism().map_or(1, |n| n.get()),
        100.0 * report.key_aided.at(1)
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config_fixtures() -> Outcome {
    let prid = load_config(configs_dir().join("prid2011.conf")).map_err(|e| e.to_string())?;
    let cybjg = load_config(configs_dir().join("cybjg.conf")).map_err(|e| e.to_string())?;
    let rho = |c: &PipelineConfig| ["GOG", "DNS", "SDALF"].map(|f| c.rho_per_feature.get(f).copied());
    check(prid.tau == 0.3 && prid.num_keys == 4, || format!("PRID2011 tau {} L {}", prid.tau, prid.num_keys))?;
    check(rho(&prid) == [Some(0.7), Some(0.9), Some(0.99)], || format!("PRID2011 rho {:?}", rho(&prid)))?;
    check(cybjg.tau == 0.1 && cybjg.num_keys == 2, || format!("CYBJ-G tau {} L {}", cybjg.tau, cybjg.num_keys))?;
    check(rho(&cybjg) == [Some(0.9), Some(0.6), Some(0.99)], || format!("CYBJ-G rho {:?}", rho(&cybjg)))?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (seed, conf) in [(0u64, &prid), (1, &cybjg), (2, &synth_config())] {
        let d = generate_flow(&SynthParams { seed, num_identities: 80, ..SynthParams::default() }.with_dim(16))
            .map_err(|e| e.to_string())?;
        let dir = tmp.path().join(format!("bundle{seed}"));
        write_bundle(&dir, &d.dataset, Some(conf)).map_err(|e| e.to_string())?;
        keyreid(&["validate", "--data", &dir.to_string_lossy()])?;
    }
    let bundle = tmp.path().join("bundle0");
    for conf in ["prid2011.conf", "cybjg.conf"] {
        let c = configs_dir().join(conf);
        keyreid(&["eval", "--trials", "2", "--data", &bundle.to_string_lossy(), "--config", &c.to_string_lossy(), "--out", &tmp.path().join(conf).to_string_lossy()])?;
    }
    Ok("PRID2011 tau=0.3 L=4 rho=[0.7,0.9,0.99]; CYBJ-G tau=0.1 L=2 rho=[0.9,0.6,0.99]; 3 bundles validate".into())
}

fn main() {
    let mut curves = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 saliency oracle equivalence", saliency_oracle()),
        ("2 threshold monotonicity", threshold_monotonicity()),
        ("3 rerank oracle equivalence", rerank_oracle()),
        ("4 oracle-safety", oracle_safety()),
        ("5 neutrality", neutrality()),
        ("6 end-to-end improvement", end_to_end(&mut curves)),
        ("7 CMC correctness", cmc_correctness(&curves)),
        ("8 determinism and parallel safety", determinism()),
        ("9 performance", performance()),
        ("10 config fixtures", config_fixtures()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
