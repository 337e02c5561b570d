//! Rolling-window evaluation and the encoder-depth sensitivity runner.
//!
//! One trained model forecasts every window without retraining; metrics
//! pool over all (series, window, step) points by default, with a
//! per-window-mean alternative behind a flag.

use std::collections::BTreeMap;
use std::time::Instant;

use deeptcn_core::baseline::seasonal_naive;
use deeptcn_core::calendar::{self, Stamp};
use deeptcn_core::heads::{ForecastResult, ForecastValues};
use deeptcn_core::metrics;
use deeptcn_core::model::ModelSpec;
use deeptcn_core::panel::{CovariateSchema, SeriesPanel};
use deeptcn_core::train::{train, EpochRecord, TrainConfig, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One metric over the union of all forecasted points.
    Pooled,
    /// Mean of per-window metric values.
    PerWindowMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub name: String,
    /// Non-overlapping windows at the end of the panel.
    pub windows: usize,
    /// Steps per window.
    pub horizon: usize,
    /// Seasonal frequency for MASE and the naive baseline.
    pub season: usize,
    pub levels: Vec<f64>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub origin: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub protocol: String,
    pub metrics: BTreeMap<String, f64>,
    pub per_window: Vec<WindowMetrics>,
    pub excluded_series: Vec<String>,
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model: {}   dataset: {}   protocol: {}\n",
            self.model, self.dataset, self.protocol
        ));
        out.push_str(&format!("{:<24} {:>14}\n", "metric", "value"));
        out.push_str(&format!("{}\n", "-".repeat(39)));
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k:<24} {v:>14.6}\n"));
        }
        if !self.per_window.is_empty() {
            out.push('\n');
            let keys: Vec<&String> = self.per_window[0].metrics.keys().collect();
            out.push_str(&format!("{:<20}", "window origin"));
            for k in &keys {
                out.push_str(&format!(" {k:>12}"));
            }
            out.push('\n');
            for w in &self.per_window {
                out.push_str(&format!("{:<20}", w.origin));
                for k in &keys {
                    out.push_str(&format!(" {:>12.6}", w.metrics[*k]));
                }
                out.push('\n');
            }
        }
        if !self.excluded_series.is_empty() {
            out.push_str(&format!(
                "\nexcluded series ({}): {}\n",
                self.excluded_series.len(),
                self.excluded_series.join(", ")
            ));
        }
        out
    }
}

/// Quantile forecasts per level for one series over one window.
struct WindowPoints {
    series: usize,
    window: usize,
    actuals: Vec<f64>,
    point: Vec<f64>,
    per_level: Vec<Vec<f64>>,
}

/// Run the rolling protocol against an arbitrary forecaster. The closure
/// receives the origin timestamp and returns forecasts (at least `horizon`
/// steps) for the series it can serve.
pub fn rolling_eval(
    panel: &SeriesPanel,
    protocol: &EvalProtocol,
    model_label: &str,
    dataset_label: &str,
    forecaster: &mut dyn FnMut(Stamp) -> AppResult<Vec<ForecastResult>>,
) -> AppResult<EvalReport> {
    if protocol.windows == 0 || protocol.horizon == 0 {
        return Err(AppError::Config(
            "evaluation needs at least one window and one step".to_string(),
        ));
    }
    let end = panel
        .end_stamp()
        .ok_or_else(|| AppError::Data("panel has no observations".to_string()))?;
    let span = (protocol.windows * protocol.horizon) as i64;
    if panel.max_len() < (span + 1) as usize {
        return Err(AppError::Config(format!(
            "panel too short for {} windows of {} steps",
            protocol.windows, protocol.horizon
        )));
    }

    let started = Instant::now();
    let mut collected: Vec<WindowPoints> = Vec::new();
    let mut excluded: BTreeMap<usize, &'static str> = BTreeMap::new();
    let mut window_origins = Vec::new();

    for w in 0..protocol.windows {
        let origin = calendar::step(
            end,
            panel.granularity,
            -span + (w * protocol.horizon) as i64,
        );
        window_origins.push(origin);
        let forecasts = forecaster(origin)?;
        for fc in forecasts {
            let series = match panel.series_index(&fc.series_id) {
                Some(s) => s,
                None => continue,
            };
            let lo = match panel.local_index(series, origin) {
                Ok(p) => p,
                Err(_) => {
                    excluded.insert(series, "misaligned origin");
                    continue;
                }
            };
            let s = &panel.series[series];
            if lo < 0 || lo + protocol.horizon as i64 > s.len() as i64 {
                excluded.insert(series, "missing actuals");
                continue;
            }
            if fc.horizon() < protocol.horizon {
                return Err(AppError::Data(format!(
                    "forecast for '{}' covers {} steps, protocol needs {}",
                    fc.series_id,
                    fc.horizon(),
                    protocol.horizon
                )));
            }
            let actuals: Vec<f64> = (1..=protocol.horizon as i64)
                .map(|k| s.values[(lo + k) as usize] as f64)
                .collect();
            let mut per_level = Vec::with_capacity(protocol.levels.len());
            for &q in &protocol.levels {
                let full = fc.quantile(q).map_err(AppError::Core)?;
                per_level.push(full[..protocol.horizon].to_vec());
            }
            let point = fc.point()[..protocol.horizon].to_vec();
            collected.push(WindowPoints {
                series,
                window: w,
                actuals,
                point,
                per_level,
            });
        }
    }
    let runtime = started.elapsed().as_secs_f64();

    if collected.is_empty() {
        return Err(AppError::Data(
            "no series produced evaluable forecasts".to_string(),
        ));
    }

    // per-window metrics
    let mut per_window = Vec::new();
    for (w, origin) in window_origins.iter().enumerate() {
        let subset: Vec<&WindowPoints> = collected.iter().filter(|p| p.window == w).collect();
        if subset.is_empty() {
            continue;
        }
        per_window.push(WindowMetrics {
            origin: calendar::format_stamp(*origin, panel.granularity),
            metrics: point_metrics(&subset, &protocol.levels)?,
        });
    }

    // top-level metrics
    let all: Vec<&WindowPoints> = collected.iter().collect();
    let mut top = match protocol.pooling {
        Pooling::Pooled => point_metrics(&all, &protocol.levels)?,
        Pooling::PerWindowMean => {
            let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for w in &per_window {
                for (k, v) in &w.metrics {
                    let e = acc.entry(k.clone()).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
            }
            acc.into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect()
        }
    };

    // MASE: per series over all its forecasted points, in-sample cut at the
    // first window origin
    let first_origin = window_origins[0];
    let mut mase_actuals = Vec::new();
    let mut mase_preds = Vec::new();
    let mut mase_insample = Vec::new();
    let mut mase_series = Vec::new();
    for series in collected
        .iter()
        .map(|p| p.series)
        .collect::<std::collections::BTreeSet<_>>()
    {
        let lo = panel.local_index(series, first_origin).unwrap_or(-1);
        if lo < protocol.season as i64 {
            excluded.insert(series, "in-sample shorter than the season");
            continue;
        }
        let insample: Vec<f64> = panel.series[series].values[..=(lo as usize)]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let mut a = Vec::new();
        let mut p = Vec::new();
        for wp in collected.iter().filter(|wp| wp.series == series) {
            a.extend_from_slice(&wp.actuals);
            p.extend_from_slice(&wp.point);
        }
        mase_actuals.push(a);
        mase_preds.push(p);
        mase_insample.push(insample);
        mase_series.push(series);
    }
    if !mase_actuals.is_empty() {
        match metrics::mase(&mase_actuals, &mase_preds, &mase_insample, protocol.season) {
            Ok(report) => {
                top.insert("mase".to_string(), report.value);
                for idx in report.excluded {
                    excluded.insert(mase_series[idx], "zero seasonal denominator");
                }
            }
            Err(deeptcn_core::Error::Undefined(_)) => {
                for &s in &mase_series {
                    excluded.insert(s, "zero seasonal denominator");
                }
            }
            Err(e) => return Err(AppError::Core(e)),
        }
    }

    // quantile crossing rate over every forecasted point
    let mut rows = Vec::new();
    for wp in &collected {
        for step in 0..protocol.horizon {
            rows.push(
                wp.per_level
                    .iter()
                    .map(|lvl| lvl[step])
                    .collect::<Vec<f64>>(),
            );
        }
    }
    top.insert(
        "crossing_rate".to_string(),
        metrics::quantile_crossing_rate(&rows),
    );
    top.insert("runtime_seconds".to_string(), runtime);

    Ok(EvalReport {
        model: model_label.to_string(),
        dataset: dataset_label.to_string(),
        protocol: format!(
            "{} ({} x {} rolling, {})",
            protocol.name,
            protocol.windows,
            protocol.horizon,
            match protocol.pooling {
                Pooling::Pooled => "pooled",
                Pooling::PerWindowMean => "per-window mean",
            }
        ),
        metrics: top,
        per_window,
        excluded_series: excluded
            .keys()
            .map(|&s| panel.series[s].id.clone())
            .collect(),
    })
}

fn point_metrics(
    points: &[&WindowPoints],
    levels: &[f64],
) -> AppResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let actuals: Vec<f64> = points.iter().flat_map(|p| p.actuals.clone()).collect();
    let preds_point: Vec<f64> = points.iter().flat_map(|p| p.point.clone()).collect();
    for (j, &q) in levels.iter().enumerate() {
        let preds: Vec<f64> = points.iter().flat_map(|p| p.per_level[j].clone()).collect();
        out.insert(
            format!("ql{}", (q * 100.0).round() as i64),
            metrics::ql(q, &actuals, &preds).map_err(AppError::Core)?,
        );
    }
    out.insert(
        "smape".to_string(),
        metrics::smape(&actuals, &preds_point).map_err(AppError::Core)?,
    );
    out.insert(
        "nrmse".to_string(),
        metrics::nrmse(&actuals, &preds_point).map_err(AppError::Core)?,
    );
    Ok(out)
}

/// Evaluate a trained model under the protocol.
pub fn eval_model(
    tm: &mut TrainedModel<f32>,
    panel: &SeriesPanel,
    protocol: &EvalProtocol,
    model_label: &str,
    dataset_label: &str,
) -> AppResult<EvalReport> {
    let ids: Vec<String> = panel.series.iter().map(|s| s.id.clone()).collect();
    rolling_eval(panel, protocol, model_label, dataset_label, &mut |origin| {
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        tm.forecast(panel, &refs, origin).map_err(AppError::Core)
    })
}

/// Evaluate the seasonal-naive baseline under the protocol.
pub fn eval_seasonal_naive(
    panel: &SeriesPanel,
    protocol: &EvalProtocol,
    dataset_label: &str,
) -> AppResult<EvalReport> {
    let season = protocol.season;
    let levels = protocol.levels.clone();
    let horizon = protocol.horizon;
    rolling_eval(
        panel,
        protocol,
        "seasonal-naive",
        dataset_label,
        &mut |origin| {
            let mut out = Vec::new();
            for series in 0..panel.len() {
                let Ok(pos) = panel.local_index(series, origin) else {
                    continue;
                };
                if pos < season as i64 - 1 {
                    continue; // insufficient history; reported as excluded
                }
                match seasonal_naive(panel, series, pos, horizon, season, &levels) {
                    Ok(fc) => out.push(fc),
                    Err(_) => continue,
                }
            }
            Ok(out)
        },
    )
}

/// Train one spec per dilation list under identical seed and config,
/// recording the per-epoch loss curves.
pub fn sensitivity_run(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    base_spec: &ModelSpec,
    cfg: &TrainConfig,
    dilation_lists: &[Vec<usize>],
) -> AppResult<Vec<(String, Vec<EpochRecord>)>> {
    if dilation_lists.is_empty() {
        return Err(AppError::Config(
            "sensitivity needs at least one dilation list".to_string(),
        ));
    }
    let mut out = Vec::new();
    for dilations in dilation_lists {
        let mut spec = base_spec.clone();
        spec.dilations = dilations.clone();
        // surface the kernel·dilation constraint before any training work
        spec.resolve(schema).map_err(AppError::Core)?;
        let label = dilations
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("-");
        let outcome = train(panel, &spec, schema, cfg).map_err(AppError::Core)?;
        out.push((label, outcome.history));
    }
    Ok(out)
}

/// Gaussian forecasts converted to explicit quantiles at the given levels
/// (the percent point function of the fitted distribution per step).
pub fn gaussian_to_quantiles(fc: &ForecastResult, levels: &[f64]) -> AppResult<ForecastResult> {
    match &fc.values {
        ForecastValues::Gaussian { mean, std } => {
            let mut rows = Vec::with_capacity(mean.len());
            for (m, s) in mean.iter().zip(std) {
                rows.push(
                    deeptcn_core::heads::gaussian_quantiles(*m, *s, levels)
                        .map_err(AppError::Core)?,
                );
            }
            Ok(ForecastResult {
                values: ForecastValues::Quantile {
                    levels: levels.to_vec(),
                    rows,
                },
                ..fc.clone()
            })
        }
        ForecastValues::Quantile { .. } => Ok(fc.clone()),
    }
}
