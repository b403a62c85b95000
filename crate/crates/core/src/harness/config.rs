//! Experiment configuration: a TOML file with one section per experiment,
//! command-line `key=value` overrides on dotted paths, and the flat run
//! manifest that doubles as a config file for re-running.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use toml::{Table, Value};

use super::textures::TextureKind;
use crate::error::{Error, Result};
use crate::feature::TransformSpec;
use crate::loss::{LossWeights, PenaltyPoints};

/// Manifest keys under this table describe the run rather than configure it.
pub const RUN_TABLE: &str = "run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Neighborhood size for image-level LID.
    pub k_i: usize,
    /// Neighborhood size for patch-level LID.
    pub k_p: usize,
    pub batch: usize,
    #[serde(deserialize_with = "transform_spec")]
    pub transform: TransformSpec,
    pub weights: LossWeights,
    pub lid_estimate: LidEstimateConfig,
    pub dim_recovery: DimRecoveryConfig,
    pub drift: DriftConfig,
    pub inpaint: InpaintConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_i: 8,
            k_p: 5,
            batch: 64,
            transform: TransformSpec::Identity,
            weights: LossWeights::default(),
            lid_estimate: LidEstimateConfig::default(),
            dim_recovery: DimRecoveryConfig::default(),
            drift: DriftConfig::default(),
            inpaint: InpaintConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidEstimateConfig {
    /// `N x D` point set in `.dt` format.
    pub input: Option<PathBuf>,
    pub k: usize,
}

impl Default for LidEstimateConfig {
    fn default() -> Self {
        Self { input: None, k: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimRecoveryConfig {
    pub dims: Vec<usize>,
    pub n: usize,
    pub queries: usize,
    pub k: usize,
    /// Queries are drawn uniformly from the concentric ball of this radius.
    pub query_radius: f64,
}

impl Default for DimRecoveryConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 4, 8],
            n: 10_000,
            queries: 100,
            k: 100,
            query_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Independent clusters averaged at each drift value.
    pub clusters: usize,
    pub points: usize,
    pub sigma: f64,
    /// Distance from the reference point to the cluster center before drifting.
    pub offset: f64,
    pub d_max: f64,
    pub steps: usize,
    pub k: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            points: 200,
            sigma: 0.5,
            offset: 1.0,
            d_max: 4.0,
            steps: 20,
            k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Images to restore; empty means generated textures.
    pub inputs: Vec<PathBuf>,
    pub images: usize,
    pub size: usize,
    pub channels: usize,
    pub texture: TextureKind,
    /// Fixed `[top, left, height, width]` hole for every image; random otherwise.
    pub mask: Option<[usize; 4]>,
    pub steps: usize,
    pub lr: f64,
    /// Halvings tried per step before giving up; 0 disables backoff.
    pub max_halvings: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            images: 8,
            size: 32,
            channels: 1,
            texture: TextureKind::Mixed,
            mask: None,
            steps: 20,
            lr: 2.0,
            max_halvings: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Directory of training images; generated textures when absent.
    pub dataset: Option<PathBuf>,
    pub images: usize,
    pub size: usize,
    pub channels: usize,
    pub texture: TextureKind,
    /// Fraction of the images held out for evaluation.
    pub holdout: f64,
    pub steps: usize,
    pub lr: f64,
    pub critic_lr: f64,
    /// Global gradient-norm limit for generator updates; 0 disables clipping.
    pub grad_clip: f64,
    pub width: usize,
    pub critic_hidden: usize,
    pub penalty_points: PenaltyPoints,
    /// Checkpoint interval in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Checkpoint directory to continue from.
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            images: 64,
            size: 32,
            channels: 1,
            texture: TextureKind::Mixed,
            holdout: 0.125,
            steps: 200,
            lr: 0.02,
            critic_lr: 0.01,
            grad_clip: 1.0,
            width: 8,
            critic_hidden: 16,
            penalty_points: PenaltyPoints::Composite,
            checkpoint_every: 0,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lambda_i: Vec<f64>,
    pub lambda_p: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            lambda_i: vec![0.0, 0.01],
            lambda_p: vec![0.0, 0.1],
        }
    }
}

/// Accepts either a `[transform]` table or the compact string form.
fn transform_spec<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TransformSpec, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Compact(String),
        Full(TransformSpec),
    }
    match Repr::deserialize(d)? {
        Repr::Compact(s) => TransformSpec::parse(&s).map_err(serde::de::Error::custom),
        Repr::Full(spec) => Ok(spec),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.k_i < 2 || self.k_p < 2 {
            return Err(Error::Config(format!(
                "k_i and k_p must be at least 2, got {} and {}",
                self.k_i, self.k_p
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        Ok(())
    }

    /// Builds a config from an optional file plus overrides applied in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(mut table: Table) -> Result<Self> {
        table.remove(RUN_TABLE);
        let cfg = Self::deserialize(Value::Table(table)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting as a sorted `dotted.key = toml-literal` pair.
    pub fn flatten(&self) -> Result<Vec<(String, String)>> {
        let value = Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        flatten_into("", &value, &mut out);
        Ok(out)
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal and falls back
/// to a bare string, so `transform=identity` and `seed=3` both work.
pub fn apply_override(table: &mut Table, text: &str) -> Result<()> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{key}`: `{p}` is not a section"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Manifest text: `run.*` metadata followed by the flattened config. The
/// result parses as TOML and loads back through [`ExperimentConfig::load`].
pub fn manifest_text(verb: &str, cfg: &ExperimentConfig) -> Result<String> {
    let mut text = String::new();
    for (k, v) in [
        ("tool", env!("CARGO_PKG_NAME")),
        ("version", env!("CARGO_PKG_VERSION")),
        ("verb", verb),
    ] {
        text.push_str(&format!("{RUN_TABLE}.{k} = {}\n", Value::String(v.to_string())));
    }
    for (k, v) in cfg.flatten()? {
        text.push_str(&format!("{k} = {v}\n"));
    }
    Ok(text)
}

/// The verb recorded in a manifest, if `path` is one.
pub fn manifest_verb(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = text
        .parse::<Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(table
        .get(RUN_TABLE)
        .and_then(|r| r.get("verb"))
        .and_then(Value::as_str)
        .map(str::to_string))
}
