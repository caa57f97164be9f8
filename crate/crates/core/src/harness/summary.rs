use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::csvio::read_metrics;
use super::run::{RunStatus, METRICS_FILE};
use crate::policies::ArchKind;
use crate::trainer::MetricsRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    MeanReturn,
    ValueLoss,
    PolicyEntropy,
    ApproxKl,
    ClipFraction,
    CommandL1,
    ModeEntropy,
    ModuleEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::MeanReturn,
        Metric::ValueLoss,
        Metric::PolicyEntropy,
        Metric::ApproxKl,
        Metric::ClipFraction,
        Metric::CommandL1,
        Metric::ModeEntropy,
        Metric::ModuleEntropy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::MeanReturn => "Mean episodic return",
            Metric::ValueLoss => "Value loss",
            Metric::PolicyEntropy => "Policy entropy",
            Metric::ApproxKl => "Approx. KL",
            Metric::ClipFraction => "Clip fraction",
            Metric::CommandL1 => "Command magnitude (L1)",
            Metric::ModeEntropy => "Mode entropy",
            Metric::ModuleEntropy => "Module entropy",
        }
    }

    pub fn better(self) -> Option<Better> {
        match self {
            Metric::MeanReturn => Some(Better::Higher),
            Metric::ValueLoss | Metric::ApproxKl | Metric::ClipFraction => Some(Better::Lower),
            _ => None,
        }
    }

    pub fn value(self, m: &MetricsRecord) -> Option<f64> {
        match self {
            Metric::MeanReturn => Some(m.mean_return),
            Metric::ValueLoss => Some(m.value_loss),
            Metric::PolicyEntropy => Some(m.policy_entropy),
            Metric::ApproxKl => Some(m.approx_kl),
            Metric::ClipFraction => Some(m.clip_fraction),
            Metric::CommandL1 => m.command_l1,
            Metric::ModeEntropy => m.mode_entropy,
            Metric::ModuleEntropy => m.module_entropy,
        }
    }
}

/// Improvement of `ours` over `baseline`, as a fraction, in the metric's better direction.
pub fn relative_improvement(better: Better, ours: f64, baseline: f64) -> f64 {
    match better {
        Better::Higher => (ours - baseline) / baseline.abs(),
        Better::Lower => (baseline - ours) / baseline.abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }
}

/// Final-update record of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub kind: ArchKind,
    pub seed: Option<u64>,
    pub history: Vec<MetricsRecord>,
    pub diverged: bool,
}

impl RunResult {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.history.last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSummary {
    pub kind: ArchKind,
    pub runs: usize,
    pub diverged: usize,
    pub stats: BTreeMap<Metric, Stat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub archs: Vec<ArchSummary>,
}

impl SummaryTable {
    /// Aggregates the final row of each run; empty runs are ignored.
    pub fn from_runs(runs: &[RunResult]) -> SummaryTable {
        let mut archs = Vec::new();
        for kind in ArchKind::ALL {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.kind == kind && r.last().is_some()).collect();
            if mine.is_empty() {
                continue;
            }
            let stats = Metric::ALL
                .iter()
                .filter_map(|&m| {
                    let xs: Vec<f64> = mine.iter().filter_map(|r| m.value(r.last().unwrap())).collect();
                    Stat::of(&xs).map(|s| (m, s))
                })
                .collect();
            archs.push(ArchSummary { kind, runs: mine.len(), diverged: mine.iter().filter(|r| r.diverged).count(), stats });
        }
        SummaryTable { archs }
    }

    /// Builds a table directly from per-architecture means (single "run" each).
    pub fn from_means(means: &[(ArchKind, Metric, f64)]) -> SummaryTable {
        let mut archs: Vec<ArchSummary> = Vec::new();
        for kind in ArchKind::ALL {
            let stats: BTreeMap<Metric, Stat> = means
                .iter()
                .filter(|(k, _, _)| *k == kind)
                .map(|&(_, m, v)| (m, Stat { mean: v, std: 0.0, n: 1 }))
                .collect();
            if !stats.is_empty() {
                archs.push(ArchSummary { kind, runs: 1, diverged: 0, stats });
            }
        }
        SummaryTable { archs }
    }

    pub fn get(&self, kind: ArchKind, metric: Metric) -> Option<Stat> {
        self.archs.iter().find(|a| a.kind == kind)?.stats.get(&metric).copied()
    }

    /// Insect versus `baseline` for a metric with a better direction.
    pub fn improvement(&self, metric: Metric, baseline: ArchKind) -> Option<f64> {
        let better = metric.better()?;
        let ours = self.get(ArchKind::Insect, metric)?;
        let base = self.get(baseline, metric)?;
        Some(relative_improvement(better, ours.mean, base.mean))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let kinds: Vec<ArchKind> = self.archs.iter().map(|a| a.kind).collect();
        let _ = write!(s, "| Metric |");
        for a in &self.archs {
            let flag = if a.diverged > 0 { format!(", {} diverged", a.diverged) } else { String::new() };
            let _ = write!(s, " {} (n={}{flag}) |", a.kind, a.runs);
        }
        let baselines: Vec<ArchKind> =
            [ArchKind::Mlp, ArchKind::Gru].into_iter().filter(|b| kinds.contains(b) && kinds.contains(&ArchKind::Insect)).collect();
        for b in &baselines {
            let _ = write!(s, " vs. {b} |");
        }
        s.push('\n');
        s.push_str(&"|---".repeat(1 + self.archs.len() + baselines.len()));
        s.push_str("|\n");
        for m in Metric::ALL {
            if self.archs.iter().all(|a| !a.stats.contains_key(&m)) {
                continue;
            }
            let _ = write!(s, "| {} |", m.label());
            for a in &self.archs {
                match a.stats.get(&m) {
                    Some(st) => {
                        let _ = write!(s, " {} |", fmt_stat(st));
                    }
                    None => s.push_str(" – |"),
                }
            }
            for &b in &baselines {
                match self.improvement(m, b) {
                    Some(v) => {
                        let _ = write!(s, " {:.1}% |", 100.0 * v);
                    }
                    None => s.push_str(" |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Mean and std in one notation chosen from the mean's magnitude.
fn fmt_stat(st: &Stat) -> String {
    let m = st.mean.abs();
    if m != 0.0 && !(1e-2..1e5).contains(&m) {
        format!("{:.3e} ± {:.3e}", st.mean, st.std)
    } else if m >= 100.0 {
        format!("{:.1} ± {:.1}", st.mean, st.std)
    } else {
        format!("{:.4} ± {:.4}", st.mean, st.std)
    }
}

/// Reads the run behind a `<arch>/<seed>/metrics.csv` path.
pub fn load_run(csv: &Path) -> Result<RunResult> {
    let dir = csv.parent().unwrap_or(Path::new("."));
    let seed = dir.file_name().and_then(|s| s.to_str()).and_then(|s| s.parse().ok());
    let kind = dir
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<ArchKind>().ok())
        .ok_or_else(|| Error::Config(format!("{}: cannot infer architecture from path", csv.display())))?;
    let diverged = RunStatus::read(dir).is_some_and(|s| s.is_diverged());
    Ok(RunResult { kind, seed, history: read_metrics(csv)?, diverged })
}

/// All `<arch>/<seed>/metrics.csv` files under `root`, sorted.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for kind in ArchKind::ALL {
        let d = root.join(kind.name());
        if !d.is_dir() {
            continue;
        }
        for e in std::fs::read_dir(&d)? {
            let p = e?.path().join(METRICS_FILE);
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn summarize(csv_paths: &[PathBuf]) -> Result<SummaryTable> {
    let runs = csv_paths.iter().map(|p| load_run(p)).collect::<Result<Vec<_>>>()?;
    Ok(SummaryTable::from_runs(&runs))
}
