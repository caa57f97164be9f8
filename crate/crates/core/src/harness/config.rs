use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::policies::{ArchKind, ArchitectureSpec};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Architecture entry: a bare name (`"gru"`) or a full table with widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchEntry {
    Name(ArchKind),
    Spec(ArchitectureSpec),
}

impl ArchEntry {
    pub fn spec(&self) -> ArchitectureSpec {
        match self {
            ArchEntry::Name(k) => ArchitectureSpec::default_for(*k),
            ArchEntry::Spec(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub architectures: Vec<ArchEntry>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Concurrent runs.
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            architectures: ArchKind::ALL.iter().map(|&k| ArchEntry::Name(k)).collect(),
            seeds: (0..6).collect(),
            output_dir: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

/// Whole configuration file: `[experiment]`, `[env]` and `[train]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Parses TOML text and applies `key=value` overrides with dotted keys,
    /// e.g. `train.lr=1e-3` or `experiment.seeds=[0,1]`.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn specs(&self) -> Vec<ArchitectureSpec> {
        self.experiment.architectures.iter().map(ArchEntry::spec).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        let mut seeds = e.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != e.seeds.len() {
            return Err(Error::Config("experiment.seeds must be distinct".into()));
        }
        let mut kinds: Vec<ArchKind> = self.specs().iter().map(ArchitectureSpec::kind).collect();
        if kinds.is_empty() {
            return Err(Error::Config("experiment.architectures must not be empty".into()));
        }
        kinds.sort();
        kinds.dedup();
        if kinds.len() != e.architectures.len() {
            return Err(Error::Config("each architecture kind may appear once".into()));
        }
        if e.jobs == 0 {
            return Err(Error::Config("experiment.jobs must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Configuration of a single (architecture, seed) run, stored as `config.snapshot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchitectureSpec,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
