use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use keyreid::eval::{compare_table, DEFAULT_RANKS};
use keyreid::io::{self, Bundle};
use keyreid::model::validate_inputs;
use keyreid::rerank::prepare_flows;
use keyreid::saliency::{saliency_scores, select_keys, sweep_rho};
use keyreid::{run_trials, with_threads, PipelineConfig, Reranker, SynthParams};

/// Key-person aided re-ranking for cross-camera person re-identification.
#[derive(Parser, Debug)]
#[command(name = "keyreid", version)]
struct Cli {
    /// Pipeline config (key = value lines). Overrides the bundle's config.txt.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for trial splits and synthetic data. Overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a bundle for missing, malformed or unknown embeddings.
    Validate(DataArg),
    /// Saliency scores per feature and the selected key persons.
    Saliency(DataArg),
    /// Key-set size and key-match accuracy over a grid of thresholds.
    SweepRho {
        #[command(flatten)]
        data: DataArg,
        /// Feature to sweep; defaults to the baseline feature.
        #[arg(long)]
        feature: Option<String>,
        /// Number of evenly spaced thresholds in [0, 1].
        #[arg(long, default_value_t = 21)]
        steps: usize,
    },
    /// Baseline and key-aided ranked gallery lists for each probe.
    Rerank {
        #[command(flatten)]
        data: DataArg,
        /// Restrict output to these probe ids.
        #[arg(long)]
        query: Vec<String>,
    },
    /// Repeated random-split evaluation with CMC curves.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Fraction of identities drawn into each trial's test half.
        #[arg(long, default_value_t = 0.5)]
        split: f64,
    },
    /// Generate a synthetic bundle into --out.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    identities: usize,
    #[arg(long, default_value_t = 3)]
    features: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long)]
    salient_fraction: Option<f64>,
    #[arg(long)]
    cluster_spread: Option<f64>,
    #[arg(long)]
    view_noise: Option<f64>,
    #[arg(long)]
    arrival_rate: Option<f64>,
    #[arg(long)]
    transit_mean: Option<f64>,
    #[arg(long)]
    transit_jitter: Option<f64>,
    #[arg(long)]
    direction_split: Option<f64>,
    #[arg(long)]
    speed_spread: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Fail if the parameters plant no salient outlier.
    #[arg(long)]
    require_salient: bool,
}

impl SynthArgs {
    fn params(&self, seed: u64) -> SynthParams {
        let mut p = SynthParams {
            num_identities: self.identities,
            num_features: self.features,
            require_salient: self.require_salient,
            seed,
            ..SynthParams::default()
        }
        .with_dim(self.dim);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.salient_fraction, self.salient_fraction);
        set(&mut p.cluster_spread, self.cluster_spread);
        set(&mut p.cross_view_noise, self.view_noise);
        set(&mut p.arrival_rate, self.arrival_rate);
        set(&mut p.transit_mean, self.transit_mean);
        set(&mut p.transit_jitter, self.transit_jitter);
        set(&mut p.direction_split, self.direction_split);
        set(&mut p.speed_spread, self.speed_spread);
        set(&mut p.rho, self.rho);
        p
    }
}

/// Config stored with synthetic bundles: split flows by walking direction.
fn synth_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        angle_threshold: Some(60.0),
        seed,
        ..PipelineConfig::default()
    }
}

fn resolve_config(cli: &Cli, bundle: Option<&Bundle>) -> Result<PipelineConfig> {
    let mut config = match (&cli.config, bundle.and_then(|b| b.config.clone())) {
        (Some(path), _) => io::load_config(path)?,
        (None, Some(c)) => c,
        (None, None) => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn load(cli: &Cli, data: &Path) -> Result<(Bundle, PipelineConfig)> {
    let mut bundle = io::read_bundle(data)?;
    let config = resolve_config(cli, Some(&bundle))?;
    if let Some(b) = &config.baseline_feature {
        bundle.dataset.bank = bundle.dataset.bank.with_baseline(b.clone())?;
    }
    Ok((bundle, config))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| keyreid::Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(&path, text).map_err(|e| keyreid::Error::Io { path, source: e })?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate(DataArg { data }) => {
            let (bundle, config) = load(cli, data)?;
            config.validate()?;
            let d = &bundle.dataset;
            let report = validate_inputs(&d.bank, &d.probe, &d.gallery);
            for issue in &report.issues {
                println!("{issue}");
            }
            if !report.passed() {
                bail!(keyreid::Error::Validation(format!("{} issue(s) in {}", report.issues.len(), data.display())));
            }
            println!(
                "ok: {} probe, {} gallery, {} feature(s)",
                d.probe.len(),
                d.gallery.len(),
                d.bank.spaces().len()
            );
        }
        Command::Saliency(DataArg { data }) => {
            let (bundle, config) = load(cli, data)?;
            config.validate()?;
            let d = &bundle.dataset;
            let (probe, _) = prepare_flows(&d.probe, &d.gallery, &config)?;
            let tables = d
                .bank
                .spaces()
                .iter()
                .map(|s| saliency_scores(s, &probe, config.k_nn))
                .collect::<keyreid::Result<Vec<_>>>()?;
            let rho: Vec<f64> = d.bank.spaces().iter().map(|s| config.rho_for(s)).collect();
            write(cli.out.join("saliency.csv"), &io::format_saliency(&tables, &rho))?;
            let keys = select_keys(&d.bank, &probe, &config)?;
            let mut text = String::from("id,feature,score\n");
            for k in &keys.union {
                text.push_str(&format!("{},{},{:.6}\n", k.id, k.feature, k.score));
            }
            write(cli.out.join("keys.csv"), &text)?;
            print!("{text}");
        }
        Command::SweepRho { data, feature, steps } => {
            let (bundle, config) = load(cli, &data.data)?;
            config.validate()?;
            if *steps < 2 {
                bail!(keyreid::Error::Parameter("--steps must be at least 2".into()));
            }
            let d = &bundle.dataset;
            let name = feature.clone().unwrap_or_else(|| d.bank.baseline().to_string());
            let space = d
                .bank
                .space(&name)
                .ok_or_else(|| keyreid::Error::NotFound(format!("feature `{name}`")))?;
            let grid: Vec<f64> = (0..*steps).map(|i| i as f64 / (*steps - 1) as f64).collect();
            let points = sweep_rho(space, &d.probe, &d.gallery, &grid, config.k_nn)?;
            let text = io::format_rho_sweep(&points);
            write(cli.out.join("rho_sweep.csv"), &text)?;
            print!("{text}");
        }
        Command::Rerank { data, query } => {
            let (bundle, config) = load(cli, &data.data)?;
            let d = &bundle.dataset;
            let (probe, gallery) = prepare_flows(&d.probe, &d.gallery, &config)?;
            let keys = select_keys(&d.bank, &probe, &config)?;
            let reranker = Reranker::new(&probe, &gallery, &d.bank, &keys, &config)?;
            let mut rankings = reranker.rank_all()?;
            if !query.is_empty() {
                for q in query {
                    if probe.get(q).is_none() {
                        bail!(keyreid::Error::NotFound(format!("query `{q}` not in probe")));
                    }
                }
                rankings.retain(|r| query.contains(&r.query));
            }
            write(cli.out.join("rankings.csv"), &io::format_rankings(&rankings))?;
            println!("{} queries, {} key persons", rankings.len(), keys.len());
        }
        Command::Eval { data, trials, split } => {
            let (bundle, config) = load(cli, &data.data)?;
            let report = run_trials(&bundle.dataset, &config, *trials, *split, config.seed)?;
            let curves = [("key_aided", &report.key_aided), ("baseline", &report.baseline)];
            io::emit_results(&cli.out, &curves, None)?;
            print!("{}", compare_table(&curves, &DEFAULT_RANKS));
        }
        Command::Synth(args) => {
            let seed = cli.seed.unwrap_or(0);
            let data = keyreid::generate_flow(&args.params(seed))?;
            let config = match &cli.config {
                Some(p) => io::load_config(p)?,
                None => synth_config(seed),
            };
            let files = io::write_bundle(&cli.out, &data.dataset, Some(&config))?;
            println!("wrote {} files to {}", files.len(), cli.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.jobs, || run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
