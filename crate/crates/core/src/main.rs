use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modnav::diffcore::ParamStore;
use modnav::harness::{
    emit_plots, env_check, find_runs, greedy_trajectory, gradcheck_all, run_dir, run_experiment, run_single, summarize,
    write_trajectory, ArchEntry, ExperimentConfig, RunConfig, RunOutcome, RunStatus, SNAPSHOT_FILE,
};
use modnav::policies::{ArchKind, ArchitectureSpec};
use modnav::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "modnav", version, about = "Modular insect-inspired policies vs. MLP/GRU baselines on predator navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct ConfigArgs {
    /// TOML file with [experiment], [env] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel environments per run.
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    rollout_len: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> modnav::Result<ExperimentConfig> {
        let mut set = self.set.clone();
        if let Some(u) = self.updates {
            set.push(format!("train.n_updates={u}"));
        }
        if let Some(o) = &self.out {
            set.push(format!("experiment.output_dir={}", toml::Value::String(o.display().to_string())));
        }
        if let Some(n) = self.envs {
            set.push(format!("train.n_envs={n}"));
        }
        if let Some(n) = self.rollout_len {
            set.push(format!("train.rollout_len={n}"));
        }
        set.extend(extra);
        ExperimentConfig::load(self.config.as_deref(), &set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one architecture with one seed.
    Train {
        #[arg(long, default_value = "insect")]
        arch: ArchKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the full architecture x seed grid, then summarize and plot.
    Experiment {
        /// Restrict to one architecture.
        #[arg(long)]
        arch: Option<ArchKind>,
        /// Restrict to one seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the final-update summary table.
    Summarize {
        /// Experiment directory to scan for `<arch>/<seed>/metrics.csv`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Explicit metrics CSVs instead of scanning.
        csv: Vec<PathBuf>,
    },
    /// Write SVG learning curves.
    Plot {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Where to write figures (default: the experiment directory).
        #[arg(long)]
        plots: Option<PathBuf>,
        csv: Vec<PathBuf>,
    },
    /// Finite-difference check of every primitive and policy.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare environment rewards against a direct evaluation.
    Envcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Dump one greedy episode from a checkpoint as CSV.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the architecture in the checkpoint's config.snapshot.
        #[arg(long)]
        arch: Option<ArchKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    })
}

fn csvs(out: &Path, explicit: Vec<PathBuf>) -> modnav::Result<Vec<PathBuf>> {
    let paths = if explicit.is_empty() { find_runs(out)? } else { explicit };
    if paths.is_empty() {
        return Err(Error::Usage(format!("no metrics.csv found under {}", out.display())));
    }
    Ok(paths)
}

fn report_and_plot(root: &Path) -> modnav::Result<()> {
    let paths = csvs(root, vec![])?;
    let table = summarize(&paths)?;
    let md = table.to_markdown();
    std::fs::write(root.join("summary.md"), &md)?;
    println!("{md}");
    for p in emit_plots(&paths, root)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train { arch, seed, cfg } => {
            let c = cfg.load(vec![])?;
            let run = RunConfig {
                arch: ArchitectureSpec::default_for(arch),
                env: c.env,
                train: modnav::trainer::TrainConfig { seed, ..c.train },
            };
            let dir = run_dir(&c.experiment.output_dir, &run.arch, seed);
            let outcome = run_single(&dir, &run, |m| {
                log::info!("update {} return {:.2} value_loss {:.2} kl {:.5} clip {:.4}", m.update, m.mean_return, m.value_loss, m.approx_kl, m.clip_fraction)
            })?;
            if let RunOutcome::Skipped(_) = outcome {
                println!("{} already complete", dir.display());
            }
            match outcome.status() {
                RunStatus::Diverged { update, reason, .. } => {
                    eprintln!("run diverged at update {update}: {reason}");
                    Ok(ExitCode::from(EXIT_NUMERIC))
                }
                RunStatus::Complete { updates, .. } => {
                    println!("{updates} updates written to {}", dir.display());
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Experiment { arch, seed, jobs, cfg } => {
            let mut extra = Vec::new();
            if let Some(s) = seed {
                extra.push(format!("experiment.seeds=[{s}]"));
            }
            if let Some(j) = jobs {
                extra.push(format!("experiment.jobs={j}"));
            }
            let mut c = cfg.load(extra)?;
            if let Some(a) = arch {
                c.experiment.architectures = vec![ArchEntry::Name(a)];
            }
            let records = run_experiment(&c, &|line| log::info!("{line}"))?;
            report_and_plot(&c.experiment.output_dir)?;
            let diverged: Vec<String> = records
                .iter()
                .filter(|r| r.outcome.status().is_diverged())
                .map(|r| format!("{}/{}", r.arch.kind(), r.seed))
                .collect();
            if diverged.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("diverged runs: {}", diverged.join(", "));
                Ok(ExitCode::from(EXIT_INCOMPLETE))
            }
        }
        Command::Summarize { out, csv } => {
            let table = summarize(&csvs(&out, csv)?)?;
            print!("{}", table.to_markdown());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { out, plots, csv } => {
            let paths = csvs(&out, csv)?;
            for p in emit_plots(&paths, plots.as_deref().unwrap_or(&out))? {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let reports = gradcheck_all(seed)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} of {} checks passed", reports.len() - failed, reports.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NUMERIC) })
        }
        Command::Envcheck { seed, pairs } => {
            let rep = env_check(&modnav::env::EnvConfig::default(), pairs, seed)?;
            println!("{rep}");
            Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NUMERIC) })
        }
        Command::Rollout { checkpoint, arch, seed, out } => {
            let snapshot = checkpoint.parent().map(|d| d.join(SNAPSHOT_FILE)).filter(|p| p.is_file());
            let run = snapshot.map(|p| RunConfig::from_toml(&std::fs::read_to_string(p)?)).transpose()?;
            let spec = match (arch, &run) {
                (Some(a), Some(r)) if r.arch.kind() == a => r.arch.clone(),
                (Some(a), _) => ArchitectureSpec::default_for(a),
                (None, Some(r)) => r.arch.clone(),
                (None, None) => return Err(Error::Usage("--arch is required without a config.snapshot".into())),
            };
            let env = run.map(|r| r.env).unwrap_or_default();
            let params = ParamStore::<f64>::load(&checkpoint)?;
            let rows = greedy_trajectory(&spec, &params, &env, seed)?;
            write_trajectory(&out, &rows)?;
            let ret: f64 = rows.iter().map(|r| r.reward).sum();
            println!("{} steps, return {ret:.2}, written to {}", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    run(cli).unwrap_or_else(|e| fail(&e))
}
