use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cdadp::trainer::ExperimentConfig;
use clap::ValueEnum;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Starting point that a config file and `--set` overrides are layered onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-scale vehicle setup (256 agents).
    Paper,
    /// Vehicle setup with 64 agents.
    DeskVehicle,
    /// Double integrator with a linear policy.
    Lti,
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Paper => ExperimentConfig::default(),
            Preset::DeskVehicle => ExperimentConfig::desk_vehicle(),
            Preset::Lti => ExperimentConfig::lti_default(),
        }
    }
}

/// A fully resolved configuration and its canonical text.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// Canonical TOML of `config`; reloading it reproduces the same config.
    pub snapshot: String,
    /// Hex SHA-256 of `snapshot`.
    pub hash: String,
}

impl Resolved {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let snapshot = toml::to_string(&config).context("serializing config")?;
        let hash = Sha256::digest(snapshot.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { config, snapshot, hash })
    }

    pub fn short_hash(&self) -> &str {
        &self.hash[..12]
    }
}

fn to_table(config: &ExperimentConfig) -> Result<Table> {
    Ok(toml::from_str(&toml::to_string(config)?)?)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `key.path=value`. The value is read as a TOML literal, falling back
/// to a bare string so `--set train.algorithm=gpi` works unquoted.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| anyhow!("override `{text}` is not key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{text}` has an empty key segment");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_owned()),
    };
    Ok((path, value))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = match cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => bail!("`{}` is not a section", path.join(".")),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Preset, then the file at `path`, then each `key=value` in order.
pub fn resolve(preset: Preset, path: Option<&Path>, overrides: &[String]) -> Result<Resolved> {
    let mut table = to_table(&preset.config())?;
    if let Some(path) = path {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        // Parsing the file on its own reports unknown keys and type errors with line numbers.
        toml::from_str::<ExperimentConfig>(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        merge(&mut table, toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?);
    }
    for text in overrides {
        let (key, value) = parse_override(text)?;
        apply_override(&mut table, &key, value)?;
    }
    let config: ExperimentConfig = toml::from_str(&toml::to_string(&table)?)
        .map_err(|e| anyhow!("invalid override: {}", e.message()))?;
    Resolved::new(config)
}
