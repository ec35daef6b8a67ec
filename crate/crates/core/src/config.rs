//! Run configuration: one TOML file with `[model]`, `[train]`, `[augment]`,
//! `[data]` and `[ablation]` sections, plus `--section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{AugmentConfig, SyntheticSpec};
use crate::error::{PfpnError, Result};
use crate::model::ModelConfig;
use crate::train::{DataSource, TrainConfig};

/// Environment variable that replaces `output_dir` (a command-line
/// `--output-dir` still wins).
pub const OUTPUT_DIR_ENV: &str = "PFPN_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory for checkpoints, logs and reports.
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub augment: AugmentConfig,
    pub data: DataSection,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            augment: AugmentConfig::default(),
            data: DataSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Intermediate checkpoint period in steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub freeze_backbone_bn: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            max_iterations: t.max_iterations,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            freeze_backbone_bn: t.freeze_backbone_bn,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory (`images/`, `masks/`); when unset the synthetic
    /// generator is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub t_values: Vec<usize>,
    /// Weight-sharing options to try (sharing applies only for T >= 2).
    pub shared: Vec<bool>,
    /// Held-out directory; when unset, `test` is generated synthetically.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<PathBuf>,
    pub test: SyntheticSpec,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            t_values: vec![0, 1, 2],
            shared: vec![false, true],
            test_dataset: None,
            test: SyntheticSpec {
                num_samples: 100,
                seed: 1,
                ..SyntheticSpec::default()
            },
        }
    }
}

impl RunConfig {
    /// Parses TOML text, then applies `section.key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let base: RunConfig = toml::from_str(text).map_err(|e| PfpnError::Config(e.to_string()))?;
        if overrides.is_empty() {
            base.validate()?;
            return Ok(base);
        }
        let mut table: Table =
            toml::from_str(text).map_err(|e| PfpnError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = RunConfig::deserialize(Value::Table(table))
            .map_err(|e| PfpnError::Config(format!("in overrides: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` means all defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| PfpnError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides).map_err(|e| match (e, path) {
            (PfpnError::Config(msg), Some(p)) => {
                PfpnError::Config(format!("{}: {msg}", p.display()))
            }
            (e, _) => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if let Some(d) = &self.data.dataset {
            if d.as_os_str().is_empty() {
                return Err(PfpnError::Config("data.dataset is empty".into()));
            }
        } else {
            self.data.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            learning_rate: self.train.learning_rate,
            max_iterations: self.train.max_iterations,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            freeze_backbone_bn: self.train.freeze_backbone_bn,
            augment: self.augment,
            data: match &self.data.dataset {
                Some(dir) => DataSource::Directory(dir.clone()),
                None => DataSource::Synthetic(self.data.synthetic.clone()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// `--output-dir` beats the environment variable, which beats the file.
    pub fn resolve_output_dir(&mut self, flag: Option<&Path>) {
        if let Some(dir) = flag {
            self.output_dir = dir.to_path_buf();
        } else if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// (number, boolean, array, quoted string); anything else is taken as a bare string.
pub fn apply_override(table: &mut Table, arg: &str) -> Result<()> {
    let arg = arg.trim_start_matches("--");
    let (key, raw) = arg.split_once('=').ok_or_else(|| {
        PfpnError::Config(format!("override `{arg}` is not of the form key=value"))
    })?;
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(PfpnError::Config(format!(
            "override key `{key}` is malformed"
        )));
    }
    let value = parse_value(raw);
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for (i, part) in parents.iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(PfpnError::Config(format!(
                    "override `{key}`: `{}` is not a section",
                    path[..=i].join(".")
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
