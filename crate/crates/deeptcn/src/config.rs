//! Run configuration: TOML sections (`data`, `model`, `train`, `eval`),
//! per-dataset presets, and `section.key=value` command-line overrides.
//!
//! Merge order: built-in defaults, then the preset, then the file, then the
//! overrides. Unknown keys are hard errors. The merged table is echoed into
//! every output directory so a run can be reproduced from its artifacts
//! alone.

use std::path::Path;

use deeptcn_core::calendar;
use deeptcn_core::heads::HeadKind;
use deeptcn_core::model::ModelSpec;
use deeptcn_core::panel::{CovariateSchema, SeriesPanel};
use deeptcn_core::train::{Selection, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::value::Value;
use toml::Table;

use crate::bench::{EvalProtocol, Pooling};
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Prepared panel directory.
    pub panel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_len: usize,
    pub horizon: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    /// 0 = one channel per input feature.
    pub channels: usize,
    /// 0 = same as channels.
    pub latent: usize,
    /// "quantile" or "gaussian".
    pub head: String,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub series_id_embedding: bool,
    pub calendar_features: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_len: 168,
            horizon: 24,
            kernel: 2,
            dilations: vec![1, 2, 4, 8],
            channels: 0,
            latent: 0,
            head: "quantile".to_string(),
            levels: vec![0.5, 0.9],
            seed: 42,
            series_id_embedding: true,
            calendar_features: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// "validation_window", "validation_fraction" or "test_tracking".
    pub selection: String,
    pub validation_fraction: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    /// 0 disables gradient clipping.
    pub clip_norm: f64,
    pub stride: usize,
    /// ISO timestamp; empty trains on the whole panel.
    pub train_before: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            learning_rate: 1e-2,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            selection: "validation_window".to_string(),
            validation_fraction: 0.1,
            patience: 30,
            clip_norm: 0.0,
            stride: 1,
            train_before: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// "electricity", "traffic", "parts" or "custom".
    pub protocol: String,
    pub windows: usize,
    /// 0 = the model horizon.
    pub horizon: usize,
    /// 0 = the granularity default (24 hourly, 7 daily, 12 monthly).
    pub season: usize,
    pub levels: Vec<f64>,
    /// "pooled" aggregates all points together; "per_window_mean" averages
    /// per-window metric values.
    pub pooling: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocol: "custom".to_string(),
            windows: 7,
            horizon: 0,
            season: 0,
            levels: vec![0.5, 0.9],
            pooling: "pooled".to_string(),
        }
    }
}

impl RunConfig {
    /// Load, merge and validate: defaults < preset < file < overrides.
    /// Returns the config and the merged TOML text for echoing.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> AppResult<(RunConfig, String)> {
        let mut table = Table::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
            table = text
                .parse::<Table>()
                .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
        }

        // overrides may set the preset, so apply them before resolving it
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }

        if let Some(Value::String(name)) = table.get("preset").cloned() {
            let preset = preset_table(&name)?;
            table = merge_under(preset, table);
        }

        let merged = toml::to_string_pretty(&Value::Table(table.clone()))
            .map_err(|e| AppError::Config(e.to_string()))?;
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| AppError::Config(e.to_string()))?;
        Ok((cfg, merged))
    }

    pub fn model_spec(&self) -> AppResult<ModelSpec> {
        let head = match self.model.head.as_str() {
            "quantile" => HeadKind::Quantile {
                levels: self.model.levels.clone(),
            },
            "gaussian" => HeadKind::Gaussian,
            other => {
                return Err(AppError::Config(format!(
                    "unknown head '{other}' (expected quantile or gaussian)"
                )))
            }
        };
        Ok(ModelSpec {
            input_len: self.model.input_len,
            horizon: self.model.horizon,
            kernel: self.model.kernel,
            dilations: self.model.dilations.clone(),
            channels: self.model.channels,
            latent: self.model.latent,
            head,
            seed: self.model.seed,
        })
    }

    pub fn schema_for(&self, panel: &SeriesPanel) -> CovariateSchema {
        let mut schema = CovariateSchema::default_for(panel, self.model.series_id_embedding);
        if !self.model.calendar_features {
            schema.calendar.clear();
        }
        schema
    }

    pub fn train_config(&self) -> AppResult<TrainConfig> {
        let selection = match self.train.selection.as_str() {
            "validation_window" => Selection::ValidationWindow,
            "validation_fraction" => Selection::ValidationFraction(self.train.validation_fraction),
            "test_tracking" => Selection::TestTracking,
            other => {
                return Err(AppError::Config(format!(
                    "unknown selection mode '{other}'"
                )))
            }
        };
        let train_before = if self.train.train_before.is_empty() {
            None
        } else {
            Some(calendar::parse_stamp(&self.train.train_before)?)
        };
        let cfg = TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_epsilon: self.train.adam_epsilon,
            selection,
            patience: if self.train.patience == 0 {
                None
            } else {
                Some(self.train.patience)
            },
            clip_norm: if self.train.clip_norm > 0.0 {
                Some(self.train.clip_norm)
            } else {
                None
            },
            stride: self.train.stride,
            train_before,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_protocol(&self, panel: &SeriesPanel, model_horizon: usize) -> AppResult<EvalProtocol> {
        let (windows, horizon, season) = match self.eval.protocol.as_str() {
            "electricity" | "traffic" => (7, 24, 24),
            "parts" => (3, 4, 12),
            "custom" => (
                self.eval.windows,
                if self.eval.horizon == 0 {
                    model_horizon
                } else {
                    self.eval.horizon
                },
                if self.eval.season == 0 {
                    panel.granularity.season_length()
                } else {
                    self.eval.season
                },
            ),
            other => {
                return Err(AppError::Config(format!(
                    "unknown protocol '{other}' (electricity, traffic, parts or custom)"
                )))
            }
        };
        let pooling = match self.eval.pooling.as_str() {
            "pooled" => Pooling::Pooled,
            "per_window_mean" => Pooling::PerWindowMean,
            other => return Err(AppError::Config(format!("unknown pooling '{other}'"))),
        };
        Ok(EvalProtocol {
            name: self.eval.protocol.clone(),
            windows,
            horizon,
            season,
            levels: self.eval.levels.clone(),
            pooling,
        })
    }
}

/// Table 6 defaults per public dataset.
fn preset_table(name: &str) -> AppResult<Table> {
    let text = match name {
        "electricity" => {
            r#"
[model]
input_len = 168
horizon = 24
kernel = 2
dilations = [1, 2, 4, 8, 16, 20, 32]
[train]
batch_size = 512
learning_rate = 0.05
[eval]
protocol = "electricity"
"#
        }
        "traffic" => {
            r#"
[model]
input_len = 168
horizon = 24
kernel = 2
dilations = [1, 2, 4, 8, 16, 20, 32]
[train]
batch_size = 128
learning_rate = 0.01
[eval]
protocol = "traffic"
"#
        }
        "parts" => {
            r#"
[model]
input_len = 12
horizon = 12
kernel = 2
dilations = [1, 2]
[train]
batch_size = 8
learning_rate = 1e-4
[eval]
protocol = "parts"
"#
        }
        other => {
            return Err(AppError::Config(format!(
                "unknown preset '{other}' (electricity, traffic or parts)"
            )))
        }
    };
    Ok(text.parse::<Table>().expect("presets are valid TOML"))
}

/// `over` wins on conflicts; tables merge recursively.
fn merge_under(base: Table, over: Table) -> Table {
    let mut out = base;
    for (k, v) in over {
        match (out.remove(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => {
                out.insert(k, Value::Table(merge_under(b, o)));
            }
            (_, v) => {
                out.insert(k, v);
            }
        }
    }
    out
}

/// Apply one `section.key=value` (leading dashes tolerated) onto the table.
pub fn apply_override(table: &mut Table, spec: &str) -> AppResult<()> {
    let spec = spec.trim_start_matches('-');
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        AppError::Config(format!("override '{spec}' must look like section.key=value"))
    })?;
    let value = parse_override_value(raw);
    let parts: Vec<&str> = path.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(AppError::Config(format!("bad override path '{path}'")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                AppError::Config(format!("override path '{path}' crosses a non-table value"))
            })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse an override value as TOML; fall back to a plain string.
fn parse_override_value(raw: &str) -> Value {
    if let Ok(table) = format!("v = {raw}").parse::<Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    Value::String(raw.to_string())
}
