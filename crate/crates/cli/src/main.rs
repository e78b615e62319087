use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sambo_cli::pipeline::{self, CampaignSpec, Harness, Target};
use sambo_cli::{ExperimentConfig, HarnessError, Method, Profile};

#[derive(Parser, Debug)]
#[command(name = "sambo", version, about = "Safe meta-Bayesian optimization experiments")]
struct Cli {
    /// TOML file overriding profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    F,
    Q,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect the meta-training corpus with SafeOpt.
    Collect,
    /// Choose kernel parameters by frontier search on the corpus.
    FrontierSearch {
        #[arg(long, value_enum, default_value_t = TargetArg::Both)]
        target: TargetArg,
    },
    /// Meta-train the objective and constraint priors.
    MetaTrain,
    /// Run the safe-BO campaign on held-out tasks.
    Run {
        /// Comma-separated subset of the configured methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Calibration, sharpness, safety and regret over a kernel grid.
    Grid,
    /// Terminal regret over the meta-data size lattice.
    Ablate,
    /// Print the resolved configuration.
    Config,
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), cli.profile)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        println!("# hash {}", cfg.hash());
        return Ok(ExitCode::SUCCESS);
    }
    let parallelism = cli
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let h = Harness::new(cfg, &cli.out, parallelism)?;
    match cli.command {
        Command::Config => unreachable!(),
        Command::Collect => {
            let stage = h.corpus_stage();
            let corpus = pipeline::collect(&h, &stage, h.cfg.collect.n_tasks, h.cfg.collect.points_per_task)?;
            println!(
                "collected {} tasks x {} points into {}",
                corpus.tasks.len(),
                corpus.manifest.points_per_task,
                stage.dir.display()
            );
            if !corpus.manifest.failed.is_empty() {
                eprintln!("{} task(s) failed, see the manifest", corpus.manifest.failed.len());
                return Ok(ExitCode::from(1));
            }
        }
        Command::FrontierSearch { target } => {
            let corpus = pipeline::load_or_collect(&h)?;
            let (f, q) = corpus.datasets()?;
            let targets: &[(Target, &[_])] = match target {
                TargetArg::F => &[(Target::F, &f)],
                TargetArg::Q => &[(Target::Q, &q)],
                TargetArg::Both => &[(Target::F, &f), (Target::Q, &q)],
            };
            for &(t, data) in targets {
                let (art, _) = pipeline::frontier(&h, &h.frontier_stage(), data, t)?;
                println!(
                    "{}: lengthscale {:.6} variance {:.6} (avg_calib {:.4}, avg_std {:.4})",
                    t.name(),
                    art.lengthscale,
                    art.variance,
                    art.avg_calib,
                    art.avg_std
                );
            }
        }
        Command::MetaTrain => {
            let corpus = pipeline::load_or_collect(&h)?;
            let stage = h.meta_stage();
            let models = pipeline::prepare(&h, (&h.frontier_stage(), &stage), &corpus, &[Method::SamboG])?;
            println!(
                "priors written to {} (f: {} params, q: {} params)",
                stage.dir.display(),
                models.prior_f.as_ref().map_or(0, |p| p.num_params()),
                models.prior_q.as_ref().map_or(0, |p| p.num_params())
            );
        }
        Command::Run { methods } => {
            let corpus = pipeline::load_or_collect(&h)?;
            let mut spec = CampaignSpec::from_config(&h.cfg);
            if let Some(m) = methods {
                spec.methods = m;
            }
            let models = pipeline::prepare(&h, (&h.frontier_stage(), &h.meta_stage()), &corpus, &spec.methods)?;
            let report = pipeline::campaign(&h, &models, &spec)?;
            let dir = h.command_dir("run")?;
            report.write(&dir)?;
            println!("results in {}", dir.display());
            println!("{:<18} {:>6} {:>14} {:>14} {:>10}", "method", "runs", "median regret", "mean regret", "unsafe");
            for a in &report.aggregates {
                println!(
                    "{:<18} {:>6} {:>14.6e} {:>14.6e} {:>10}",
                    a.method.to_string(),
                    a.runs,
                    a.median_final_regret,
                    a.mean_final_regret,
                    a.safety_failures
                );
            }
            for r in report.runs.iter().filter(|r| r.safety_failed()) {
                eprintln!(
                    "safety audit failed: {} task {} seed {}: {}",
                    r.method,
                    r.task,
                    r.seed,
                    r.audit_failure.as_deref().unwrap_or("constraint violated")
                );
            }
            if report.safety_failures() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Grid => {
            let corpus = pipeline::load_or_collect(&h)?;
            let models = pipeline::prepare(&h, (&h.frontier_stage(), &h.meta_stage()), &corpus, &[Method::Goose])?;
            let report = pipeline::grid(&h, &corpus, &models)?;
            report.write(&h.command_dir("grid")?)?;
            println!(
                "grid {}x{} written; calibrated cells all safe: {}",
                report.lengthscales.len(),
                report.variances.len(),
                report.calibrated_cells_safe()
            );
        }
        Command::Ablate => {
            let report = pipeline::ablate(&h)?;
            for r in &report.rows {
                println!(
                    "n={:<4} T={:<5} median regret {:.6e} unsafe {}",
                    r.n_tasks, r.points_per_task, r.median_final_regret, r.safety_failures
                );
            }
            if report.rows.iter().any(|r| r.safety_failures > 0) {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}
