use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunConfig};
use super::csvio::{read_metrics, MetricsWriter};
use crate::policies::ArchitectureSpec;
use crate::trainer::{MetricsRecord, Trainer};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const STATUS_FILE: &str = "status";

/// `<root>/<arch>/<seed>`.
pub fn run_dir(root: &Path, arch: &ArchitectureSpec, seed: u64) -> PathBuf {
    root.join(arch.kind().name()).join(seed.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Complete { updates: usize, provisional_updates: Vec<usize> },
    Diverged { update: usize, reason: String, provisional_updates: Vec<usize> },
}

impl RunStatus {
    pub fn read(dir: &Path) -> Option<RunStatus> {
        let text = fs::read_to_string(dir.join(STATUS_FILE)).ok()?;
        toml::from_str(&text).ok()
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(STATUS_FILE), toml::to_string(self).expect("status serializes"))?;
        Ok(())
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Trained(RunStatus),
    Skipped(RunStatus),
}

impl RunOutcome {
    pub fn status(&self) -> &RunStatus {
        match self {
            RunOutcome::Trained(s) | RunOutcome::Skipped(s) => s,
        }
    }
}

fn finished(dir: &Path, run: &RunConfig) -> Option<RunStatus> {
    let status = RunStatus::read(dir)?;
    let snapshot = fs::read_to_string(dir.join(SNAPSHOT_FILE)).ok()?;
    if RunConfig::from_toml(&snapshot).ok()? != *run {
        return None;
    }
    let rows = read_metrics(&dir.join(METRICS_FILE)).ok()?;
    match &status {
        RunStatus::Complete { updates, .. } if *updates == run.train.n_updates && rows.len() == *updates => {
            dir.join(CHECKPOINT_FILE).exists().then_some(status)
        }
        RunStatus::Diverged { update, .. } if rows.len() + 1 == *update => Some(status),
        _ => None,
    }
}

/// Trains one run into `dir`, or skips it if `dir` already holds a finished
/// run with the same configuration. A numeric fault is recorded, not raised.
pub fn run_single(dir: &Path, run: &RunConfig, mut progress: impl FnMut(&MetricsRecord)) -> Result<RunOutcome> {
    if let Some(s) = finished(dir, run) {
        return Ok(RunOutcome::Skipped(s));
    }
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(STATUS_FILE));
    let _ = fs::remove_file(dir.join(CHECKPOINT_FILE));
    fs::write(dir.join(SNAPSHOT_FILE), run.to_toml())?;
    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    let mut trainer = Trainer::<f32>::new(&run.arch, &run.env, &run.train)?;
    let mut provisional = Vec::new();
    for u in 1..=run.train.n_updates {
        match trainer.update() {
            Ok(m) => {
                if m.return_provisional {
                    provisional.push(m.update);
                }
                writer.append(&m)?;
                progress(&m);
            }
            Err(Error::Numeric { module, detail }) => {
                let status = RunStatus::Diverged {
                    update: u,
                    reason: format!("{module}: {detail}"),
                    provisional_updates: provisional,
                };
                status.write(dir)?;
                trainer.policy().params().save(&dir.join(CHECKPOINT_FILE))?;
                return Ok(RunOutcome::Trained(status));
            }
            Err(e) => return Err(e),
        }
    }
    trainer.policy().params().save(&dir.join(CHECKPOINT_FILE))?;
    let status = RunStatus::Complete { updates: run.train.n_updates, provisional_updates: provisional };
    status.write(dir)?;
    Ok(RunOutcome::Trained(status))
}

/// One (architecture, seed) cell of the experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: RunOutcome,
}

/// Every (architecture, seed) pair with its run configuration.
pub fn grid(cfg: &ExperimentConfig) -> Vec<(PathBuf, RunConfig)> {
    let mut out = Vec::new();
    for arch in cfg.specs() {
        for &seed in &cfg.experiment.seeds {
            let run = RunConfig {
                arch: arch.clone(),
                env: cfg.env.clone(),
                train: crate::trainer::TrainConfig { seed, ..cfg.train.clone() },
            };
            out.push((run_dir(&cfg.experiment.output_dir, &arch, seed), run));
        }
    }
    out
}

/// Runs the whole grid with up to `experiment.jobs` concurrent runs.
/// `log` receives one line per finished update or skipped run.
pub fn run_experiment(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.experiment.output_dir)?;
    fs::write(cfg.experiment.output_dir.join("experiment.toml"), cfg.to_toml())?;
    let cells = grid(cfg);
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let worker = || loop {
        let i = {
            let mut n = next.lock().expect("queue");
            let i = *n;
            *n += 1;
            i
        };
        let Some((dir, run)) = cells.get(i) else { break };
        let tag = format!("{}/{}", run.arch.kind(), run.train.seed);
        let r = run_single(dir, run, |m| {
            log(&format!("{tag} update {} return {:.1} clip {:.3}", m.update, m.mean_return, m.clip_fraction))
        });
        if let Ok(RunOutcome::Skipped(_)) = &r {
            log(&format!("{tag} already complete, skipped"));
        }
        results.lock().expect("results")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..cfg.experiment.jobs.min(cells.len()) {
            s.spawn(worker);
        }
    });
    let results = results.into_inner().expect("results");
    cells
        .into_iter()
        .zip(results)
        .map(|((dir, run), r)| {
            let outcome = r.expect("every cell ran")?;
            Ok(RunRecord { arch: run.arch, seed: run.train.seed, dir, outcome })
        })
        .collect()
}
