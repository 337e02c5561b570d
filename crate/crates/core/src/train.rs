//! Minibatch training with Adam, best-epoch selection, and forecasting from
//! a trained model.
//!
//! Determinism contract: (seed, data, spec, config) fully determine the
//! final parameters. All randomness flows from the spec seed through
//! split counter-based generators; batches run single-threaded in a fixed
//! order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calendar::Stamp;
use crate::error::{Error, Result};
use crate::heads::{ForecastResult, ForecastValues, HeadKind, HeadOutput};
use crate::layers::Mode;
use crate::model::{assemble_batch, Batch, DeepTcn, ModelSpec};
use crate::panel::{
    self, CovariateSchema, EmbedSource, SeriesPanel, TimeRange, TrainingWindow,
};
use crate::rng::RngState;
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn for_params(params: &crate::layers::ParamStore<T>) -> Self {
        let m = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. `grads[i]` of `None` acts as a zero
/// gradient. `clip_norm` rescales the whole gradient to the given global
/// L2 norm when exceeded.
pub fn adam_step<T: Element>(
    params: &mut crate::layers::ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    clip_norm: Option<f64>,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            detail: format!("{} gradients for {} parameters", grads.len(), params.len()),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if !g.all_finite() {
                let name: String = params.iter().nth(i).map(|(n, _)| n.into()).unwrap_or_default();
                return Err(Error::Data(format!(
                    "non-finite gradient for parameter '{name}'"
                )));
            }
        }
    }

    let mut scale = 1.0f64;
    if let Some(limit) = clip_norm {
        let mut sq = 0.0f64;
        for g in grads.iter().flatten() {
            for &v in g.data() {
                let v = v.to_f64();
                sq += v * v;
            }
        }
        let norm = libm::sqrt(sq);
        if norm > limit {
            scale = limit / norm;
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_minus_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_minus_b2 = T::from_f64(1.0 - cfg.beta2);
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let gscale = T::from_f64(scale);

    for (i, id) in params.ids().enumerate() {
        let zero;
        let g = match &grads[i] {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(params.get(id).shape());
                &zero
            }
        };
        let mut p = params.get(id).clone();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for k in 0..p.len() {
            let gv = g.data()[k] * gscale;
            let mv = b1 * m.data()[k] + one_minus_b1 * gv;
            let vv = b2 * v.data()[k] + one_minus_b2 * gv * gv;
            m.data_mut()[k] = mv;
            v.data_mut()[k] = vv;
            let m_hat = mv * inv_bc1;
            let v_hat = vv * inv_bc2;
            p.data_mut()[k] = p.data()[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        params.set(id, p);
    }
    Ok(())
}

/// How the best epoch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Hold out the last `input_len + horizon` span of the training range;
    /// one window per series, targets on the final `horizon` steps.
    ValidationWindow,
    /// Hold out a seeded random fraction of the training windows.
    ValidationFraction(f64),
    /// Select on windows *after* the training boundary. Replicates the
    /// paper's practice of picking the best test-set epoch; leaks test
    /// information, so it exists for replication only.
    TestTracking,
}

/// Training-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub selection: Selection,
    /// Stop after this many epochs without selection improvement.
    pub patience: Option<usize>,
    /// Global-norm gradient clipping threshold; off by default.
    pub clip_norm: Option<f64>,
    /// Window stride during training-window extraction.
    pub stride: usize,
    /// Targets at or after this stamp are excluded from training.
    pub train_before: Option<Stamp>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-2,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            selection: Selection::ValidationWindow,
            patience: Some(30),
            clip_norm: None,
            stride: 1,
            train_before: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(Error::Config(String::from(
                "epochs, batch size and stride must be at least 1",
            )));
        }
        if let Selection::ValidationFraction(f) = self.selection {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "validation fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        if matches!(self.selection, Selection::TestTracking) && self.train_before.is_none() {
            return Err(Error::Config(String::from(
                "test-tracking selection needs a training boundary",
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Loss trace of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective (mean pinball total or mean NLL) in scaled space.
    pub train_loss: f64,
    /// Mean absolute error of the point forecast in scaled space.
    pub train_l1: f64,
    pub selection_loss: f64,
}

/// Metadata persisted with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_loss: f64,
    pub selection_loss: f64,
}

/// A model plus everything forecasting needs: the training panel's id list,
/// static vocabularies, and per-series scales.
#[derive(Debug, Clone)]
pub struct TrainedModel<T: Element> {
    pub model: DeepTcn<T>,
    pub series_ids: Vec<String>,
    pub static_names: Vec<String>,
    pub static_vocabs: Vec<Vec<String>>,
    pub scales: Vec<f64>,
    pub rng: RngState,
    pub meta: TrainMeta,
}

/// Training output: the selected model and the per-epoch metric history.
pub struct TrainOutcome {
    pub trained: TrainedModel<f32>,
    pub history: Vec<EpochRecord>,
    /// Series that produced no training window.
    pub skipped_series: usize,
}

/// Full training run over a panel.
pub fn train(
    panel: &SeriesPanel,
    spec: &ModelSpec,
    schema: &CovariateSchema,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schema.validate(panel)?;
    let spec = spec.resolve(schema)?;

    let scales = panel::training_scales(panel, cfg.train_before)?;
    let train_end = match cfg.train_before {
        Some(s) => s,
        None => {
            let end = panel.end_stamp().ok_or_else(|| {
                Error::Data(String::from("panel has no observed values"))
            })?;
            crate::calendar::step(end, panel.granularity, 1)
        }
    };

    let mut master = RngState::new(spec.seed);
    let init_rng = master.split();
    let mut shuffle_rng = master.split();

    // window extraction per selection mode
    let (mut train_windows, selection_windows, skipped) = match cfg.selection {
        Selection::ValidationWindow => {
            let holdout = (spec.input_len + spec.horizon) as i64;
            let val_target_start =
                crate::calendar::step(train_end, panel.granularity, -(spec.horizon as i64));
            let train_limit =
                crate::calendar::step(train_end, panel.granularity, -holdout);
            let tr = panel::make_windows(
                panel,
                schema,
                &scales,
                spec.input_len,
                spec.horizon,
                cfg.stride,
                &TimeRange::before(train_limit),
            )?;
            let val = panel::make_windows(
                panel,
                schema,
                &scales,
                spec.input_len,
                spec.horizon,
                spec.horizon.max(1),
                &TimeRange {
                    min_target: Some(val_target_start),
                    max_target_exclusive: Some(train_end),
                },
            )?;
            (tr.windows, val.windows, tr.skipped)
        }
        Selection::ValidationFraction(f) => {
            let all = panel::make_windows(
                panel,
                schema,
                &scales,
                spec.input_len,
                spec.horizon,
                cfg.stride,
                &TimeRange::before(train_end),
            )?;
            let mut windows = all.windows;
            let mut order: Vec<usize> = (0..windows.len()).collect();
            shuffle_rng.shuffle(&mut order);
            let n_val = libm::ceil(windows.len() as f64 * f) as usize;
            let n_val = n_val.clamp(1, windows.len().saturating_sub(1).max(1));
            let val_set: alloc::collections::BTreeSet<usize> =
                order.into_iter().take(n_val).collect();
            let mut tr = Vec::new();
            let mut val = Vec::new();
            for (i, w) in windows.drain(..).enumerate() {
                if val_set.contains(&i) {
                    val.push(w);
                } else {
                    tr.push(w);
                }
            }
            (tr, val, all.skipped)
        }
        Selection::TestTracking => {
            let tr = panel::make_windows(
                panel,
                schema,
                &scales,
                spec.input_len,
                spec.horizon,
                cfg.stride,
                &TimeRange::before(train_end),
            )?;
            let test = panel::make_windows(
                panel,
                schema,
                &scales,
                spec.input_len,
                spec.horizon,
                spec.horizon.max(1),
                &TimeRange::from(train_end),
            )?;
            (tr.windows, test.windows, tr.skipped)
        }
    };

    if train_windows.is_empty() {
        return Err(Error::Config(String::from(
            "no training windows: series too short for the configured input length and horizon",
        )));
    }
    if selection_windows.is_empty() {
        return Err(Error::Config(String::from(
            "no selection windows: shrink the horizon or provide more history",
        )));
    }

    let mut model = DeepTcn::<f32>::init_with_rng(&spec, schema, init_rng)?;
    let mut adam = AdamState::for_params(&model.params);
    let adam_cfg = cfg.adam();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, crate::layers::ParamStore<f32>, crate::layers::BufStore<f32>, usize)> =
        None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut train_windows);
        let mut seen = 0usize;
        let mut loss_acc = 0.0f64;
        let mut l1_acc = 0.0f64;

        for (batch_idx, chunk) in train_windows.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&TrainingWindow> = chunk.iter().collect();
            let batch = assemble_batch::<f32>(&refs, schema, spec.input_len, spec.horizon, true)?;
            let mut tape = Tape::new();
            let step = (|| -> Result<(f64, f64)> {
                let pass = model.forward(&mut tape, &batch, Mode::Train)?;
                let loss = model.loss_graph(&mut tape, &pass)?;
                let loss_value = tape.value(loss).item() as f64;
                let l1 = model.l1_of_pass(&tape, &pass, batch.targets.as_ref().unwrap());
                let grads = tape.backward(loss)?;
                let per_param: Vec<Option<Tensor<f32>>> = pass
                    .param_vars
                    .iter()
                    .map(|&v| grads.get(v).cloned())
                    .collect();
                adam_step(&mut model.params, &per_param, &mut adam, &adam_cfg, cfg.clip_norm)?;
                Ok((loss_value, l1))
            })();
            let (loss_value, l1) = step.map_err(|e| {
                Error::Data(format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
            loss_acc += loss_value * chunk.len() as f64;
            l1_acc += l1 * chunk.len() as f64;
            seen += chunk.len();
        }

        let train_loss = loss_acc / seen as f64;
        let train_l1 = l1_acc / seen as f64;
        let selection_loss =
            evaluate_loss(&mut model, &selection_windows, schema, &spec, cfg.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_l1,
            selection_loss,
        });

        let improved = best.as_ref().map_or(true, |(b, ..)| selection_loss < *b);
        if improved {
            best = Some((
                selection_loss,
                model.params.clone(),
                model.buffers.clone(),
                epoch,
            ));
            stale = 0;
        } else {
            stale += 1;
            if let Some(p) = cfg.patience {
                if stale >= p {
                    break;
                }
            }
        }
    }

    let (best_loss, best_params, best_buffers, best_epoch) =
        best.expect("at least one epoch ran");
    model.params = best_params;
    model.buffers = best_buffers;

    let meta = TrainMeta {
        best_epoch,
        epochs_run: history.len(),
        train_loss: history[best_epoch.min(history.len() - 1)].train_loss,
        selection_loss: best_loss,
    };

    Ok(TrainOutcome {
        trained: TrainedModel {
            model,
            series_ids: panel.series.iter().map(|s| s.id.clone()).collect(),
            static_names: panel.static_names.clone(),
            static_vocabs: panel.static_vocabs.clone(),
            scales,
            rng: shuffle_rng,
            meta,
        },
        history,
        skipped_series: skipped,
    })
}

/// Mean loss over a window set in inference mode (no parameter updates, no
/// BN statistics drift).
pub fn evaluate_loss(
    model: &mut DeepTcn<f32>,
    windows: &[TrainingWindow],
    schema: &CovariateSchema,
    spec: &ModelSpec,
    batch_size: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config(String::from("empty evaluation window set")));
    }
    let mut acc = 0.0f64;
    let mut seen = 0usize;
    for chunk in windows.chunks(batch_size) {
        let refs: Vec<&TrainingWindow> = chunk.iter().collect();
        let batch = assemble_batch::<f32>(&refs, schema, spec.input_len, spec.horizon, true)?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, Mode::Infer)?;
        let loss = model.loss_graph(&mut tape, &pass)?;
        acc += tape.value(loss).item() as f64 * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok(acc / seen as f64)
}

impl TrainedModel<f32> {
    /// Embedding codes for a series of a (possibly different) panel, mapped
    /// through the vocabularies captured at training time.
    fn resolve_codes(&self, panel: &SeriesPanel, series: usize) -> Result<Vec<usize>> {
        let schema = self.model.schema().clone();
        schema
            .embedded
            .iter()
            .map(|emb| match emb.source {
                EmbedSource::SeriesId => {
                    let id = &panel.series[series].id;
                    self.series_ids
                        .iter()
                        .position(|s| s == id)
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "series id '{id}' was not part of the training panel and the model embeds series ids"
                            ))
                        })
                }
                EmbedSource::StaticColumn(c) => {
                    let name = &self.static_names[c];
                    let panel_col = panel
                        .static_names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| {
                            Error::Data(format!("panel lacks static column '{name}'"))
                        })?;
                    let value =
                        &panel.static_vocabs[panel_col][panel.static_codes[series][panel_col]];
                    self.static_vocabs[c].binary_search(value).map_err(|_| {
                        Error::Index {
                            what: format!("feature column '{}' value '{value}'", emb.name),
                            index: usize::MAX,
                            bound: self.static_vocabs[c].len(),
                        }
                    })
                }
            })
            .collect()
    }

    /// Scale used to de-normalize a series: the training-time scale when the
    /// id was seen in training, otherwise `1 + mean |history up to origin|`.
    fn scale_for(&self, panel: &SeriesPanel, series: usize, origin_pos: i64) -> f64 {
        let id = &panel.series[series].id;
        if let Ok(pos) = self.series_ids.binary_search(id) {
            return self.scales[pos];
        }
        let hi = (origin_pos + 1).clamp(0, panel.series[series].len() as i64) as usize;
        panel::series_scale(&panel.series[series].values[..hi])
    }

    /// Direct multi-horizon forecast for the given series at one origin (the
    /// timestamp of the last history point to condition on). Inputs shorter
    /// than the model's window are zero-padded; outputs are de-normalized by
    /// the per-series scale.
    pub fn forecast(
        &mut self,
        panel: &SeriesPanel,
        ids: &[&str],
        origin: Stamp,
    ) -> Result<Vec<ForecastResult>> {
        if ids.is_empty() {
            return Err(Error::Config(String::from("no series requested")));
        }
        let spec = self.model.spec().clone();
        let schema = self.model.schema().clone();
        let width = schema.numeric_width();

        struct Prep {
            series: usize,
            origin_pos: i64,
            scale: f64,
            padded: usize,
        }

        let mut preps = Vec::with_capacity(ids.len());
        let mut history = Vec::with_capacity(ids.len() * (1 + width) * spec.input_len);
        let mut future = Vec::with_capacity(ids.len() * spec.horizon * width);
        let mut codes: Vec<Vec<usize>> = alloc::vec![Vec::new(); schema.embedded.len()];

        for id in ids {
            let series = panel
                .series_index(id)
                .ok_or_else(|| Error::Data(format!("unknown series id '{id}'")))?;
            let origin_pos = panel.local_index(series, origin)?;
            if origin_pos >= panel.series[series].len() as i64 {
                return Err(Error::Data(format!(
                    "origin {origin} lies beyond the observed history of series '{id}'"
                )));
            }
            let scale = self.scale_for(panel, series, origin_pos);
            let (input, covs, padded) = panel::cut_forecast_input(
                panel,
                &schema,
                series,
                origin_pos,
                spec.input_len,
                scale,
            )?;
            // channel-major: value channel then covariate channels
            for t in 0..spec.input_len {
                history.push(input[t]);
            }
            for f in 0..width {
                for t in 0..spec.input_len {
                    history.push(covs[t * width + f]);
                }
            }
            future.extend(featurized_future(panel, &schema, series, origin_pos, spec.horizon)?);
            for (f, code) in self.resolve_codes(panel, series)?.into_iter().enumerate() {
                codes[f].push(code);
            }
            preps.push(Prep {
                series,
                origin_pos,
                scale,
                padded,
            });
        }

        let batch = Batch::<f32> {
            history: Tensor::new(alloc::vec![ids.len(), 1 + width, spec.input_len], history)?,
            codes,
            future_numeric: if width > 0 {
                Some(Tensor::new(
                    alloc::vec![ids.len() * spec.horizon, width],
                    future,
                )?)
            } else {
                None
            },
            targets: None,
            batch_size: ids.len(),
        };

        let mut tape = Tape::new();
        let pass = self.model.forward(&mut tape, &batch, Mode::Infer)?;

        let mut out = Vec::with_capacity(ids.len());
        for (i, prep) in preps.iter().enumerate() {
            let rows = i * spec.horizon..(i + 1) * spec.horizon;
            let values = match (&pass.head, self.model.head_kind()) {
                (HeadOutput::Quantile { preds }, HeadKind::Quantile { levels }) => {
                    let t = tape.value(*preds);
                    ForecastValues::Quantile {
                        levels: levels.clone(),
                        rows: rows
                            .clone()
                            .map(|r| {
                                (0..levels.len())
                                    .map(|j| t.at2(r, j) as f64 * prep.scale)
                                    .collect()
                            })
                            .collect(),
                    }
                }
                (HeadOutput::Gaussian { mu, sigma }, HeadKind::Gaussian) => {
                    let tm = tape.value(*mu);
                    let ts = tape.value(*sigma);
                    ForecastValues::Gaussian {
                        mean: rows
                            .clone()
                            .map(|r| tm.data()[r] as f64 * prep.scale)
                            .collect(),
                        std: rows
                            .clone()
                            .map(|r| ts.data()[r] as f64 * prep.scale)
                            .collect(),
                    }
                }
                _ => {
                    return Err(Error::Config(String::from(
                        "head output does not match head kind",
                    )))
                }
            };
            let result = ForecastResult {
                series_id: panel.series[prep.series].id.clone(),
                origin: panel.stamp_at(prep.series, prep.origin_pos),
                stamps: (1..=spec.horizon as i64)
                    .map(|w| panel.stamp_at(prep.series, prep.origin_pos + w))
                    .collect(),
                values,
                scale: prep.scale,
                padded: prep.padded,
            };
            result.validate()?;
            out.push(result);
        }
        Ok(out)
    }
}

fn featurized_future(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    series: usize,
    origin_pos: i64,
    horizon: usize,
) -> Result<Vec<f32>> {
    panel::featurize(panel, schema, series, origin_pos + 1, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamStore;


    #[test]
    fn first_step_magnitude_is_learning_rate() {
        for g in [0.5f32, -2.0, 10.0, 0.01] {
            let mut params = ParamStore::<f32>::new();
            let id = params.add(String::from("w"), Tensor::scalar(1.0));
            let mut state = AdamState::for_params(&params);
            let cfg = AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            };
            adam_step(
                &mut params,
                &[Some(Tensor::scalar(g))],
                &mut state,
                &cfg,
                None,
            )
            .unwrap();
            let moved = (params.get(id).item() - 1.0).abs() as f64;
            assert!(
                (moved - 0.05).abs() <= 0.05 * 1e-5,
                "g={g}: step {moved}"
            );
            // direction opposes the gradient
            let sign = (params.get(id).item() - 1.0).signum();
            assert_eq!(sign, -g.signum());
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParamStore::<f32>::new();
        let id = params.add(String::from("w"), Tensor::from_slice(&[1.5, -2.5]));
        let mut state = AdamState::for_params(&params);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &[None], &mut state, &cfg, None).unwrap();
        assert_eq!(params.get(id).data(), &[1.5, -2.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = ParamStore::<f32>::new();
        params.add(String::from("enc.0.conv1.weight"), Tensor::scalar(1.0));
        let mut state = AdamState::for_params(&params);
        let mut g = Tensor::<f32>::zeros(&[1]);
        g.data_mut()[0] = f32::INFINITY;
        let err = adam_step(
            &mut params,
            &[Some(g)],
            &mut state,
            &AdamConfig::default(),
            None,
        )
        .unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("enc.0.conv1.weight"), "{msg}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // minimize (w-3)^2 from w=0, lr=0.1, 500 steps
        let mut params = ParamStore::<f32>::new();
        let id = params.add(String::from("w"), Tensor::scalar(0.0));
        let mut state = AdamState::for_params(&params);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let w = params.get(id).item();
            let grad = 2.0 * (w - 3.0);
            adam_step(
                &mut params,
                &[Some(Tensor::scalar(grad))],
                &mut state,
                &cfg,
                None,
            )
            .unwrap();
        }
        let w = params.get(id).item();
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut params = ParamStore::<f32>::new();
        let id = params.add(String::from("w"), Tensor::from_slice(&[0.25, -1.75]));
        let before = params.get(id).clone();
        let mut state = AdamState::for_params(&params);
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        adam_step(
            &mut params,
            &[Some(Tensor::from_slice(&[3.0, -4.0]))],
            &mut state,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(params.get(id), &before);
    }

    #[test]
    fn clipping_rescales_to_threshold() {
        let mut params = ParamStore::<f32>::new();
        params.add(String::from("w"), Tensor::from_slice(&[0.0, 0.0]));
        let mut state = AdamState::for_params(&params);
        let cfg = AdamConfig::default();
        // norm 5, clip to 1: both components shrink by 5x before moments
        let g = Tensor::from_slice(&[3.0f32, 4.0]);
        adam_step(&mut params, &[Some(g)], &mut state, &cfg, Some(1.0)).unwrap();
        // moments reflect the clipped gradient
        let m = &state.m[0];
        assert!((m.data()[0] - 0.1 * 3.0 / 5.0).abs() < 1e-7);
        assert!((m.data()[1] - 0.1 * 4.0 / 5.0).abs() < 1e-7);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.selection = Selection::ValidationFraction(0.0);
        assert!(cfg.validate().is_err());
        cfg.selection = Selection::TestTracking;
        cfg.train_before = None;
        assert!(cfg.validate().is_err());
        cfg.selection = Selection::ValidationWindow;
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
    }
}
