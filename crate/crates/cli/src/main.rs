use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use perception_core::sim::{self, ExperimentConfig, Policy, SyntheticRespondent};
use perception_core::{store, AnswerBounds, Catalog, PriorSpec};

#[derive(Parser)]
#[command(name = "perception", version, about = "Simulate, fit and export perceived carbon footprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark a question-selection policy against a synthetic population.
    Simulate(SimulateArgs),
    /// Batch-fit a triplet log and print perceived vs true footprints.
    Fit(FitArgs),
    /// Write perceived-vs-true chart data for a triplet log.
    Export(ExportArgs),
    /// Write a synthetic triplet log answered by a noisy truthful respondent.
    SynthLog(SynthArgs),
}

#[derive(Args)]
struct Hyper {
    /// Catalog JSON (defaults to the shipped 18-action catalog).
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = PriorSpec::DEFAULT_SIGMA_N_SQ)]
    sigma_n_sq: f64,
    #[arg(long, default_value_t = PriorSpec::DEFAULT_SIGMA_P_SQ)]
    sigma_p_sq: f64,
}

impl Hyper {
    fn load(&self) -> anyhow::Result<(Catalog, PriorSpec)> {
        let catalog = match &self.catalog {
            Some(p) => Catalog::from_path(p).with_context(|| format!("loading catalog {}", p.display()))?,
            None => Catalog::builtin(),
        };
        let prior = catalog.build_prior(self.sigma_p_sq, self.sigma_n_sq)?;
        Ok((catalog, prior))
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// active, random or round_robin
    #[arg(long, default_value = "active")]
    policy: String,
    /// Questions per run.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Independent runs.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// First seed; runs use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variance of the respondent's log-ratio noise.
    #[arg(long, default_value_t = 1.0)]
    noise_sq: f64,
    /// CSV output; a JSON mirror is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2183)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    per_session: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_sq: f64,
    #[arg(long)]
    catalog: Option<PathBuf>,
}

fn json_mirror(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let policy: Policy = args.policy.parse()?;
    let (catalog, prior) = args.hyper.load()?;
    let cfg = ExperimentConfig {
        policy,
        n_questions: args.n,
        n_seeds: args.seeds,
        base_seed: args.seed,
        respondent: SyntheticRespondent::truthful(&catalog, args.noise_sq)?,
        prior,
        bounds: AnswerBounds::default(),
    };
    let started = Instant::now();
    let report = sim::run_experiment(&cfg)?;
    println!("policy {policy}, {} seeds, {:.2?}", report.seeds.len(), started.elapsed());
    println!("{:>6} {:>10} {:>14} {:>10}", "n", "rmse", "rmse_centered", "mean_dS");
    for c in &report.checkpoints {
        println!("{:>6} {:>10.4} {:>14.4} {:>10.4}", c.n, c.rmse, c.rmse_centered, c.mean_info_gain);
    }
    if let Some(out) = args.out {
        report.write_csv(&out)?;
        std::fs::write(json_mirror(&out), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn fit(args: FitArgs) -> anyhow::Result<()> {
    let (catalog, prior) = args.hyper.load()?;
    let started = Instant::now();
    let report = sim::fit_from_log(&args.log, &catalog, &prior)?;
    println!(
        "{} observations, fitted in {:.2?}; rmse {:.4}, rmse_centered {:.4}",
        report.n_observations,
        started.elapsed(),
        report.rmse,
        report.rmse_centered
    );
    println!("{:>3} {:>12} {:>10} {:>8}  title", "id", "perceived_kg", "true_kg", "log10");
    for r in &report.rows {
        println!("{:>3} {:>12.1} {:>10.1} {:>+8.3}  {}", r.action_id, r.perceived_kg, r.true_kg, r.log10_ratio, r.title);
    }
    if let Some(out) = args.out {
        report.write_csv(&out)?;
        std::fs::write(json_mirror(&out), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let (catalog, prior) = args.hyper.load()?;
    let posterior = store::rebuild_posterior(&args.log, &prior)?;
    sim::export_perception(&posterior, &catalog, &args.out)?;
    let rows = sim::perception_rows(&posterior, &catalog);
    std::fs::write(json_mirror(&args.out), serde_json::to_string_pretty(&rows)?)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn synth_log(args: SynthArgs) -> anyhow::Result<()> {
    let hyper = Hyper { catalog: args.catalog, sigma_n_sq: 1.0, sigma_p_sq: 10.0 };
    let (catalog, _) = hyper.load()?;
    let respondent = SyntheticRespondent::truthful(&catalog, args.noise_sq)?;
    let written =
        sim::write_synthetic_log(&args.out, &respondent, args.n, args.per_session, args.seed, &AnswerBounds::default())?;
    println!("appended {} triplets to {}", written.len(), args.out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Export(a) => export(a),
        Command::SynthLog(a) => synth_log(a),
    }
}
