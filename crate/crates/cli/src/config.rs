//! Run configuration: a TOML document with `[world]` and `[experiment]`
//! tables, patched by `KEY=VALUE` overrides before it is deserialized.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use detective::experiments::{ExperimentKind, ExperimentSpec};
use detective::{PolicyKind, WorldConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Prefix of environment variables that act like `--set`. A double
/// underscore stands for a dot: `DETECTIVE_SET_WORLD__EPOCHS=10`.
pub const ENV_PREFIX: &str = "DETECTIVE_SET_";

const TOP_KEYS: [&str; 6] = ["seed", "graph", "out", "jobs", "world", "experiment"];
const EXPERIMENT_KEYS: [&str; 7] =
    ["kind", "policies", "seeds", "runs", "grid", "regret_epsilon", "regret_sources_per_side"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub policies: Vec<PolicyKind>,
    /// Explicit seed list. When empty, `runs` seeds counting up from the
    /// master seed are used.
    pub seeds: Vec<u64>,
    pub runs: usize,
    /// Empty means the kind's default grid.
    pub grid: Vec<f64>,
    pub regret_epsilon: f64,
    pub regret_sources_per_side: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let standard = ExperimentSpec::standard(ExperimentKind::LearningCurve);
        ExperimentSection {
            kind: ExperimentKind::LearningCurve,
            policies: standard.policies,
            seeds: Vec::new(),
            runs: 5,
            grid: Vec::new(),
            regret_epsilon: standard.regret_epsilon,
            regret_sources_per_side: standard.regret_sources_per_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Edge-list file; not needed for the regret world.
    pub graph: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
    pub world: WorldConfig,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            graph: None,
            out: PathBuf::from("results"),
            jobs: 1,
            world: WorldConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        if self.experiment.seeds.is_empty() {
            (0..self.experiment.runs as u64).map(|i| self.seed.wrapping_add(i)).collect()
        } else {
            self.experiment.seeds.clone()
        }
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        let e = &self.experiment;
        ExperimentSpec {
            kind: e.kind,
            world: self.world.clone(),
            policies: e.policies.clone(),
            seeds: self.seeds(),
            grid: if e.grid.is_empty() { e.kind.default_grid() } else { e.grid.clone() },
            regret_epsilon: e.regret_epsilon,
            regret_sources_per_side: e.regret_sources_per_side,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("cannot serialize the resolved config")
    }
}

fn world_keys() -> BTreeSet<String> {
    match Value::try_from(WorldConfig::default()) {
        Ok(Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Keys in `doc` that no config field accepts, as dotted paths.
fn unknown_keys(doc: &Table) -> Vec<String> {
    let world = world_keys();
    let mut bad = Vec::new();
    for (key, value) in doc {
        if !TOP_KEYS.contains(&key.as_str()) {
            bad.push(key.clone());
            continue;
        }
        let allowed: Box<dyn Fn(&str) -> bool> = match key.as_str() {
            "world" => Box::new(|k: &str| world.contains(k)),
            "experiment" => Box::new(|k: &str| EXPERIMENT_KEYS.contains(&k)),
            _ => continue,
        };
        if let Value::Table(inner) = value {
            bad.extend(inner.keys().filter(|k| !allowed(k)).map(|k| format!("{key}.{k}")));
        }
    }
    bad
}

/// Maps a bare key onto the table that owns it; dotted keys pass through.
fn qualify(key: &str) -> Result<String> {
    if key.contains('.') {
        return Ok(key.to_string());
    }
    if TOP_KEYS.contains(&key) {
        Ok(key.to_string())
    } else if world_keys().contains(key) {
        Ok(format!("world.{key}"))
    } else if EXPERIMENT_KEYS.contains(&key) {
        Ok(format!("experiment.{key}"))
    } else {
        bail!("unknown config key {key:?}")
    }
}

/// Parses an override value as TOML, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(doc: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not KEY=VALUE"))?;
    let path = qualify(key.trim())?;
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut table = doc;
    for part in parts {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| anyhow!("config key {part:?} is not a table"))?;
    }
    table.insert(leaf.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Overrides from the environment, sorted by variable name.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<String> {
    let mut found: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(name, value)| {
            let key = name.strip_prefix(ENV_PREFIX)?;
            Some((key.to_lowercase().replace("__", "."), value))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(k, v)| format!("{k}={v}")).collect()
}

/// Parses `text`, applies `overrides` in order and checks every key.
pub fn resolve(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut doc: Table = text.parse().context("config is not valid TOML")?;
    let mut bad = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut doc, o) {
            bad.push(format!("{e}"));
        }
    }
    if !bad.is_empty() {
        bail!("bad overrides: {}", bad.join("; "));
    }
    let bad = unknown_keys(&doc);
    if !bad.is_empty() {
        bail!("unknown config keys: {}", bad.join(", "));
    }
    let cfg: RunConfig = doc.try_into().context("invalid config")?;
    if cfg.jobs == 0 {
        bail!("jobs must be at least 1");
    }
    Ok(cfg)
}
