use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use curriculum_core::coevolution::run_id;
use curriculum_core::metrics::format_real;
use curriculum_core::persist::{replay_run, resume_run, train_to_dir};
use curriculum_core::theory::{render_report, run_suite, SuiteConfig};
use curriculum_core::{load_config, CurriculumConfig, Mode};

#[derive(Parser, Debug)]
#[command(name = "curriculum", version, about = "Agent/environment co-evolution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run and write its run directory.
    Train(TrainArgs),
    /// Run the Monte Carlo checks and write the report.
    VerifyTheory(TheoryArgs),
    /// Train every point of an (alpha, beta, k_min) grid for every seed.
    Sweep(SweepArgs),
    /// Recompute a run's metrics from its pools and check the digests.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// genenv, random or static.
    #[arg(long, default_value = "genenv")]
    mode: Mode,
    /// Output root.
    #[arg(long, env = "CURRICULUM_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k_min: Option<f64>,
    /// Record wall-clock seconds per epoch (makes metrics files differ between runs).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the run already in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long, default_value_t = SuiteConfig::default().seed)]
    seed: u64,
    #[arg(long, env = "CURRICULUM_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    /// Samples per grid point of the gradient-signal check.
    #[arg(long, default_value_t = SuiteConfig::default().sandwich_samples)]
    samples: usize,
    /// Trials per point of the ranking and concentration checks.
    #[arg(long, default_value_t = SuiteConfig::default().ranking_trials)]
    trials: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    k_mins: Vec<f64>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Run directory written by `train`.
    run_dir: PathBuf,
}

fn base_config(args: &RunArgs) -> anyhow::Result<CurriculumConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => CurriculumConfig::default(),
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    if let Some(k) = args.k_min {
        cfg.k_min = k;
    }
    Ok(cfg)
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.run)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = args.run.out_dir.join(run_id(args.run.mode, cfg.seed));
    let run = if args.resume {
        resume_run(&dir, args.run.epochs, args.run.timing)?
    } else {
        train_to_dir(&cfg, args.run.mode, &dir, args.run.timing)?
    };
    let last = run.rows.last().context("run produced no epochs")?;
    println!(
        "{}: {} epochs, final p_hat {}, difficulty {}, eval {}",
        dir.display(),
        run.rows.len(),
        format_real(last.mean_p_hat),
        format_real(last.mean_difficulty),
        format_real(last.eval_score)
    );
    Ok(())
}

fn verify_theory(args: TheoryArgs) -> anyhow::Result<()> {
    let cfg = SuiteConfig {
        seed: args.seed,
        sandwich_samples: args.samples,
        ranking_trials: args.trials,
        hoeffding_trials: args.trials,
    };
    let rows = run_suite(&cfg)?;
    let report = render_report(&rows);
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let path = args.out_dir.join("theory_report.csv");
    fs::write(&path, &report).with_context(|| format!("writing {}", path.display()))?;
    print!("{report}");
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({})", r.experiment, r.params))
        .collect();
    if !failed.is_empty() {
        bail!("{} check(s) failed: {}", failed.len(), failed.join("; "));
    }
    Ok(())
}

fn grid_label(cfg: &CurriculumConfig) -> String {
    format!("alpha{}-beta{}-kmin{}", cfg.alpha, cfg.beta, cfg.k_min)
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let base = base_config(&args.run)?;
    let pick = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let mut points = Vec::new();
    for &alpha in &pick(&args.alphas, base.alpha) {
        for &beta in &pick(&args.betas, base.beta) {
            for &k_min in &pick(&args.k_mins, base.k_min) {
                for &seed in &args.seeds {
                    let cfg = CurriculumConfig {
                        alpha,
                        beta,
                        k_min,
                        seed,
                        ..base.clone()
                    };
                    cfg.validate().with_context(|| format!("grid point {}", grid_label(&cfg)))?;
                    points.push(cfg);
                }
            }
        }
    }
    let root = args.run.out_dir.join("sweep");
    let mode = args.run.mode;
    let timing = args.run.timing;
    let runs = points
        .par_iter()
        .map(|cfg| {
            let dir = root.join(grid_label(cfg)).join(run_id(mode, cfg.seed));
            train_to_dir(cfg, mode, &dir, timing).map(|run| (cfg, run))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = String::from("alpha,beta,k_min,seed,run_dir,final_mean_p_hat,final_mean_difficulty,final_eval_score\n");
    for (cfg, run) in &runs {
        let last = run.rows.last().context("run produced no epochs")?;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            cfg.alpha,
            cfg.beta,
            cfg.k_min,
            cfg.seed,
            run.dir.root.display(),
            format_real(last.mean_p_hat),
            format_real(last.mean_difficulty),
            format_real(last.eval_score)
        ));
    }
    let path = root.join("sweep_summary.csv");
    fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    println!("{} runs written under {}", runs.len(), root.display());
    Ok(())
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let report = replay_run(&args.run_dir)?;
    println!(
        "{}: {} epochs replayed, all digests match",
        args.run_dir.display(),
        report.rows.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::VerifyTheory(a) => verify_theory(a),
        Command::Sweep(a) => sweep(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
