use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use agecohort::age::PoolingWeights;
use agecohort::ingest::YearRange;
use agecohort::pipeline::{self, PipelineConfig, RiverPool};
use agecohort::synth::{self, ScenarioConfig};

#[derive(Parser)]
#[command(name = "agecohort", version, about = "Age classes and cohorts from shell-length surveys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey with a ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Fit, age and link a survey, writing tables, figures and a manifest.
    Run(RunArgs),
    /// Redraw the figures of a finished run from its components.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// `key = value` scenario file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Survey CSV to write; the truth goes next to it as `<stem>.truth.csv`.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    years: Option<YearRange>,
    #[arg(long)]
    strata: Option<usize>,
    #[arg(long)]
    reefs: Option<usize>,
    #[arg(long)]
    recruitment: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` pipeline file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    years: Option<YearRange>,
    #[arg(long)]
    min_per_year: Option<usize>,
    #[arg(long)]
    min_run: Option<usize>,
    #[arg(long)]
    age_quantile: Option<f64>,
    #[arg(long)]
    g_max: Option<usize>,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long)]
    market_size_mm: Option<f64>,
    /// `renormalized` or `literal`.
    #[arg(long)]
    pooling: Option<PoolingWeights>,
    /// `live` or `spat+live`.
    #[arg(long)]
    river_pool: Option<RiverPool>,
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of an earlier `run`.
    #[arg(long, short)]
    dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    market_size_mm: Option<f64>,
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn pipeline_config(config: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = config {
        cfg.apply_text(&read_config(path)?)
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("in {}", path.display()))?;
    }
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut sc = ScenarioConfig::default();
    if let Some(path) = &args.config {
        sc.apply_text(&read_config(path)?)
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(v) = args.seed {
        sc.seed = v;
    }
    if let Some(v) = args.years {
        sc.years = v;
    }
    if let Some(v) = args.strata {
        sc.strata = v;
    }
    if let Some(v) = args.reefs {
        sc.reefs = v;
    }
    if let Some(v) = args.recruitment {
        sc.recruitment_per_year = v;
    }
    let (obs, truth) = synth::simulate(&sc)?;
    let truth_path = synth::truth_path_for(&args.out);
    synth::write_scenario(&args.out, &truth_path, &obs, &truth)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} observations to {}", obs.len(), args.out.display());
    println!("wrote truth to {}", truth_path.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = pipeline_config(args.config.as_deref())?;
    if let Some(v) = args.input {
        cfg.input = v;
    }
    if let Some(v) = args.output {
        cfg.output_dir = v;
    }
    if let Some(v) = args.seed {
        cfg.fit.seed = v;
    }
    if let Some(v) = args.years {
        cfg.years = v;
    }
    if let Some(v) = args.min_per_year {
        cfg.min_per_year = v;
    }
    if let Some(v) = args.min_run {
        cfg.min_run = v;
    }
    if let Some(v) = args.age_quantile {
        cfg.age_quantile = v;
    }
    if let Some(v) = args.g_max {
        cfg.fit.g_max = v;
    }
    if let Some(v) = args.n_starts {
        cfg.fit.n_starts = v;
    }
    if let Some(v) = args.market_size_mm {
        cfg.market_size_mm = v;
    }
    if let Some(v) = args.pooling {
        cfg.pooling = v;
    }
    if let Some(v) = args.river_pool {
        cfg.river_pool = v;
    }
    if args.no_figures {
        cfg.figures = false;
    }
    if let Err(e) = cfg.validate() {
        bail!("invalid configuration: {e}");
    }

    let m = pipeline::run_pipeline(&cfg)?;
    println!(
        "{} observations, {} eligible reefs, {} samples fitted, {} components, {} cohorts",
        m.n_observations,
        m.eligible_reefs.len(),
        m.n_samples_fitted,
        m.n_components,
        m.n_chains
    );
    for n in &m.notices {
        println!("notice: {n}");
    }
    if !m.warnings.is_empty() {
        println!("{} warnings (see manifest.json)", m.warnings.len());
    }
    println!("outputs in {} ({} ms)", cfg.output_dir.display(), m.elapsed_ms);
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let cfg = pipeline_config(args.config.as_deref())?;
    let market = args.market_size_mm.unwrap_or(cfg.market_size_mm);
    let written = pipeline::rebuild_figures(&args.dir, market)?;
    println!("wrote {} figures to {}", written.len(), args.dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}
