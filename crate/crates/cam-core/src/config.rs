//! Run configuration: one TOML file, flat dotted-key overrides, and a
//! content hash over the fully resolved record.
//!
//! Resolution order: start from the per-environment defaults, lay the
//! file's keys over them, then the `--set` overrides. The hash is taken
//! over a canonical re-serialization of the resolved struct, so it does
//! not depend on key order or formatting in the source file. Two runs
//! with equal hashes and equal seeds are contractually bit-identical.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CamError, Result};
use crate::graph::SubgraphCaps;
use crate::trainer::TrainConfig;
use crate::worlds::EnvKind;

/// Evaluation-side settings; training-side ones live in [`TrainConfig`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub tasks: usize,
    pub agents: usize,
    pub obstacles: usize,
    pub map_side: f64,
    pub candidates: usize,
    pub horizon: usize,
    pub decomposition: bool,
    pub max_agent_edges: usize,
    pub max_obstacle_edges: usize,
    /// Probe count for region classification in the invariance analysis.
    pub n_probe: usize,
    pub seed: u64,
}

impl EvalSection {
    fn for_train(train: &TrainConfig) -> Self {
        let caps = SubgraphCaps::default();
        EvalSection {
            tasks: 20,
            agents: train.agents,
            obstacles: train.obstacles,
            map_side: train.map_side,
            candidates: train.candidates,
            horizon: train.horizon,
            decomposition: true,
            max_agent_edges: caps.max_agent_edges,
            max_obstacle_edges: caps.max_obstacle_edges,
            n_probe: train.n_probe,
            seed: train.seed,
        }
    }

    pub fn caps(&self) -> SubgraphCaps {
        SubgraphCaps {
            max_agent_edges: self.max_agent_edges,
            max_obstacle_edges: self.max_obstacle_edges,
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("eval.tasks", self.tasks),
            ("eval.candidates", self.candidates),
            ("eval.horizon", self.horizon),
            ("eval.n_probe", self.n_probe),
            ("eval.max_agent_edges", self.max_agent_edges),
            ("eval.max_obstacle_edges", self.max_obstacle_edges),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CamError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.map_side > 0.0) {
            return Err(CamError::Config("eval.map_side must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn for_env(env: EnvKind) -> Self {
        let train = TrainConfig::for_env(env);
        let eval = EvalSection::for_train(&train);
        RunConfig { train, eval }
    }

    pub fn check(&self) -> Result<()> {
        self.train.check()?;
        self.eval.check()
    }
}

/// A fully resolved run configuration plus its identity.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    /// Hex sha256 over the canonical serialization of `config`.
    pub hash: String,
    /// Canonical TOML, suitable for writing into the run directory.
    pub canonical: String,
}

/// Merge file text (optional) and `key.path=value` overrides into a
/// validated config. The environment must be present as `train.env`,
/// either in the file or as an override, because defaults depend on it.
pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<ResolvedConfig> {
    let mut table = match file {
        Some(text) => text
            .parse::<Table>()
            .map_err(|e| CamError::Config(format!("config parse: {e}")))?,
        None => Table::new(),
    };
    for ov in overrides {
        let (path, value) = parse_override(ov)?;
        set_path(&mut table, &path, value)?;
    }

    let env: EnvKind = table
        .get("train")
        .and_then(|t| t.get("env"))
        .and_then(|v| v.as_str())
        .ok_or_else(|| CamError::Config("missing required field train.env".into()))?
        .parse()?;

    let defaults = Value::try_from(RunConfig::for_env(env))
        .map_err(|e| CamError::Config(format!("default encode: {e}")))?;
    let mut merged = match defaults {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    };
    merge_into(&mut merged, table);

    let config: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e| CamError::Config(format!("config: {e}")))?;
    config.check()?;
    identity(config)
}

/// Canonical text and hash for an already-built config. `resolve` ends
/// here; commands that adjust a resolved config (evaluation flag
/// overrides) re-derive their run's identity the same way.
pub fn identity(config: RunConfig) -> Result<ResolvedConfig> {
    let canonical = toml::to_string_pretty(&config)
        .map_err(|e| CamError::Config(format!("config encode: {e}")))?;
    // Hash over compact JSON of the resolved struct: field order is fixed
    // by the type, floats print in round-trip notation.
    let json = serde_json::to_string(&config)
        .map_err(|e| CamError::Config(format!("config encode: {e}")))?;
    let digest = Sha256::digest(json.as_bytes());
    let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(ResolvedConfig { config, hash, canonical })
}

/// Split `a.b.c=value` and parse the value as a TOML literal, falling
/// back to a bare string so `train.env=car` needs no quoting.
fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| CamError::Config(format!("override '{s}' is not key.path=value")))?;
    let segments: Vec<String> = path.split('.').map(str::to_string).collect();
    if segments.iter().any(|p| p.is_empty()) {
        return Err(CamError::Config(format!("override '{s}' has an empty path segment")));
    }
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((segments, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, walk) = path.split_last().expect("parse_override rejects empty paths");
    let mut cursor = table;
    for seg in walk {
        cursor = cursor
            .entry(seg.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CamError::Config(format!(
                    "override path {} passes through non-table key {seg}",
                    path.join(".")
                ))
            })?;
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

/// Lay `src` over `dst`: tables merge recursively, everything else replaces.
fn merge_into(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge_into(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}
