//! Full architecture: covariate assembly, encoder, decoder and head wired
//! together from a [`ModelSpec`].
//!
//! The network forecasts all horizon steps jointly from one pass (direct
//! strategy): the encoder summarizes `[value; covariates]` history channels
//! into a latent per series, the decoder adds the latent to a learned
//! projection of each horizon step's covariates, and the shared output dense
//! layer maps every step's latent to the head outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::grad_check;
use crate::heads::{HeadKind, HeadOutput, OutputHead};
use crate::layers::{
    receptive_field, BufStore, Embedding, Encoder, EncoderOptions, Mode, ParamStore, Session,
};
use crate::layers::ResnetV;
use crate::loss;
use crate::panel::{CovariateSchema, TrainingWindow};
use crate::rng::RngState;
use crate::tape::{Tape, VarId};
use crate::tensor::{Element, Tensor};

/// Complete architecture description. `channels`/`latent` of zero resolve to
/// defaults derived from the covariate schema at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// History window length fed to the encoder.
    pub input_len: usize,
    /// Forecast horizon length.
    pub horizon: usize,
    /// Convolution kernel size.
    pub kernel: usize,
    /// One residual block per dilation.
    pub dilations: Vec<usize>,
    /// Hidden channels, constant across blocks. 0 = number of input
    /// features (value channel plus covariate width).
    pub channels: usize,
    /// Decoder hidden width. 0 = same as `channels`.
    pub latent: usize,
    pub head: HeadKind,
    pub seed: u64,
}

impl ModelSpec {
    /// Fill derived defaults and validate every structural constraint.
    pub fn resolve(&self, schema: &CovariateSchema) -> Result<ModelSpec> {
        let mut spec = self.clone();
        let features = 1 + schema.total_width();
        if spec.channels == 0 {
            spec.channels = features;
        }
        if spec.latent == 0 {
            spec.latent = spec.channels;
        }
        spec.validate(schema)?;
        Ok(spec)
    }

    pub fn validate(&self, schema: &CovariateSchema) -> Result<()> {
        if self.input_len == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "input length {} and horizon {} must be positive",
                self.input_len, self.horizon
            )));
        }
        if self.kernel == 0 || self.channels == 0 || self.latent == 0 {
            return Err(Error::Config(alloc::string::String::from(
                "kernel, channels and latent width must be positive",
            )));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "dilations must be non-empty and positive, got {:?}",
                self.dilations
            )));
        }
        // every conv layer must see enough input: kernel · dilation <= input
        for &d in &self.dilations {
            if self.kernel * d > self.input_len {
                return Err(Error::Config(format!(
                    "kernel {} times dilation {d} exceeds input length {}",
                    self.kernel, self.input_len
                )));
            }
        }
        if schema.total_width() == 0 {
            return Err(Error::Config(alloc::string::String::from(
                "the decoder needs at least one covariate feature",
            )));
        }
        self.head.validate()
    }

    /// Receptive field of the final encoder position, counting both
    /// convolutions of every residual block.
    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(&self.dilations, self.kernel, 2)
    }
}

/// Assembled batch ready for a forward pass. Rows of `future_numeric` (and
/// targets) are grouped per window: the `horizon` rows of window `b` are
/// consecutive.
#[derive(Debug, Clone)]
pub struct Batch<T: Element> {
    /// `[batch, 1 + numeric_width, input_len]`.
    pub history: Tensor<T>,
    /// `codes[feature][window]` embedding codes.
    pub codes: Vec<Vec<usize>>,
    /// `[batch · horizon, numeric_width]`; `None` when the schema has no
    /// numeric covariates.
    pub future_numeric: Option<Tensor<T>>,
    /// Scaled targets `[batch · horizon]`.
    pub targets: Option<Tensor<T>>,
    pub batch_size: usize,
}

/// Pack training windows into channel-major tensors.
pub fn assemble_batch<T: Element>(
    windows: &[&TrainingWindow],
    schema: &CovariateSchema,
    input_len: usize,
    horizon: usize,
    with_targets: bool,
) -> Result<Batch<T>> {
    let b = windows.len();
    if b == 0 {
        return Err(Error::Config(alloc::string::String::from("empty batch")));
    }
    let width = schema.numeric_width();
    let channels = 1 + width;

    let mut history = vec![T::ZERO; b * channels * input_len];
    for (wi, w) in windows.iter().enumerate() {
        if w.input.len() != input_len || w.targets.len() != horizon {
            return Err(Error::Dimension {
                op: "assemble_batch",
                detail: format!(
                    "window input {} / targets {} vs expected {input_len}/{horizon}",
                    w.input.len(),
                    w.targets.len()
                ),
            });
        }
        let base = wi * channels * input_len;
        for t in 0..input_len {
            history[base + t] = T::from_f64(w.input[t] as f64);
        }
        for f in 0..width {
            let row = base + (1 + f) * input_len;
            for t in 0..input_len {
                history[row + t] = T::from_f64(w.input_covs[t * width + f] as f64);
            }
        }
    }
    let history = Tensor::new(vec![b, channels, input_len], history)?;

    let codes: Vec<Vec<usize>> = (0..schema.embedded.len())
        .map(|f| windows.iter().map(|w| w.codes[f]).collect())
        .collect();

    let future_numeric = if width > 0 {
        let mut fut = Vec::with_capacity(b * horizon * width);
        for w in windows.iter() {
            for v in &w.future_covs {
                fut.push(T::from_f64(*v as f64));
            }
        }
        Some(Tensor::new(vec![b * horizon, width], fut)?)
    } else {
        None
    };

    let targets = if with_targets {
        let mut t = Vec::with_capacity(b * horizon);
        for w in windows.iter() {
            for v in &w.targets {
                t.push(T::from_f64(*v as f64));
            }
        }
        Some(Tensor::new(vec![b * horizon], t)?)
    } else {
        None
    };

    Ok(Batch {
        history,
        codes,
        future_numeric,
        targets,
        batch_size: b,
    })
}

/// The assembled network. Owns its parameters and batch-norm buffers.
#[derive(Debug, Clone)]
pub struct DeepTcn<T: Element> {
    spec: ModelSpec,
    schema: CovariateSchema,
    pub params: ParamStore<T>,
    pub buffers: BufStore<T>,
    embeddings: Vec<Embedding>,
    pub encoder: Encoder,
    decoder: ResnetV,
    head: OutputHead,
}

impl<T: Element> DeepTcn<T> {
    /// Deterministic build: all weights derive from `spec.seed`.
    pub fn init(spec: &ModelSpec, schema: &CovariateSchema) -> Result<Self> {
        let rng = RngState::new(spec.seed);
        Self::init_with_rng(spec, schema, rng)
    }

    /// Build with an explicit generator (callers that derive several streams
    /// from one seed).
    pub fn init_with_rng(
        spec: &ModelSpec,
        schema: &CovariateSchema,
        mut rng: RngState,
    ) -> Result<Self> {
        let spec = spec.resolve(schema)?;
        let rng = &mut rng;
        let mut params = ParamStore::new();
        let mut buffers = BufStore::new();

        let embeddings: Vec<Embedding> = schema
            .embedded
            .iter()
            .map(|e| Embedding::init(&mut params, rng, &e.name, e.vocab, e.dim))
            .collect();

        let in_channels = 1 + schema.total_width();
        let encoder = Encoder::init(
            &mut params,
            &mut buffers,
            rng,
            in_channels,
            spec.channels,
            spec.kernel,
            &spec.dilations,
            spec.input_len,
        )?;
        let decoder = ResnetV::init(
            &mut params,
            &mut buffers,
            rng,
            schema.total_width(),
            spec.latent,
            spec.channels,
        );
        let head = OutputHead::init(&mut params, rng, spec.channels, spec.head.clone())?;

        Ok(DeepTcn {
            spec,
            schema: schema.clone(),
            params,
            buffers,
            embeddings,
            encoder,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn head_kind(&self) -> &HeadKind {
        &self.head.kind
    }

    /// Structural switches used by the causality diagnostics.
    pub fn encoder_options_mut(&mut self) -> &mut EncoderOptions {
        &mut self.encoder.options
    }

    /// One forward pass over an assembled batch.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        mode: Mode,
    ) -> Result<ForwardPass> {
        self.forward_overriding(tape, batch, mode, &[])
    }

    /// Forward pass with selected parameters redirected to existing tape
    /// leaves; the gradient-check harness probes one parameter at a time
    /// this way.
    pub fn forward_overriding(
        &mut self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        mode: Mode,
        overrides: &[(crate::layers::ParamId, VarId)],
    ) -> Result<ForwardPass> {
        let horizon = self.spec.horizon;
        let mut sess = Session::new(tape, &self.params, &mut self.buffers, mode);
        for &(id, var) in overrides {
            sess.override_param(id, var);
        }
        let bound: Vec<VarId> = sess.bound_vars().to_vec();

        // history: numeric channels plus embedded features broadcast over time
        let mut x = sess.tape.constant(batch.history.clone());
        for (emb, codes) in self.embeddings.iter().zip(&batch.codes) {
            let rows = emb.lookup(&mut sess, codes)?;
            let bt = sess.tape.broadcast_time(rows, self.spec.input_len)?;
            x = sess.tape.concat_channels(x, bt)?;
        }
        let h = self.encoder.forward(&mut sess, x)?;

        // future covariates: numeric rows plus embedded features per step
        let mut fut: Option<VarId> = batch
            .future_numeric
            .as_ref()
            .map(|t| sess.tape.constant(t.clone()));
        for (emb, codes) in self.embeddings.iter().zip(&batch.codes) {
            let per_step: Vec<usize> = codes
                .iter()
                .flat_map(|&c| core::iter::repeat(c).take(horizon))
                .collect();
            let rows = emb.lookup(&mut sess, &per_step)?;
            fut = Some(match fut {
                Some(prev) => sess.tape.concat_cols(prev, rows)?,
                None => rows,
            });
        }
        let fut = fut.ok_or_else(|| {
            Error::Config(alloc::string::String::from(
                "no covariate features to drive the decoder",
            ))
        })?;

        let delta = self.decoder.forward(&mut sess, h, fut, horizon)?;
        let head = self.head.forward(&mut sess, delta)?;

        let targets = batch
            .targets
            .as_ref()
            .map(|t| sess.tape.constant(t.clone()));

        Ok(ForwardPass {
            head,
            targets,
            param_vars: bound,
        })
    }

    /// Training objective for the pass: mean total pinball loss or mean
    /// Gaussian NLL, depending on the head.
    pub fn loss_graph(&self, tape: &mut Tape<T>, pass: &ForwardPass) -> Result<VarId> {
        let targets = pass.targets.ok_or_else(|| {
            Error::Config(alloc::string::String::from(
                "loss requested on a batch assembled without targets",
            ))
        })?;
        match (&self.head.kind, &pass.head) {
            (HeadKind::Quantile { levels }, HeadOutput::Quantile { preds }) => {
                loss::quantile_loss_graph(tape, *preds, targets, levels)
            }
            (HeadKind::Gaussian, HeadOutput::Gaussian { mu, sigma }) => {
                loss::gaussian_nll_graph(tape, *mu, *sigma, targets)
            }
            _ => Err(Error::Config(alloc::string::String::from(
                "head output does not match head kind",
            ))),
        }
    }

    /// Mean absolute error of the point forecast on the pass, in scaled
    /// space. For quantile heads this uses the 0.5-quantile column when
    /// trained, otherwise the middle column; for Gaussian heads, μ.
    pub fn l1_of_pass(&self, tape: &Tape<T>, pass: &ForwardPass, targets: &Tensor<T>) -> f64 {
        let point: Vec<f64> = match (&self.head.kind, &pass.head) {
            (HeadKind::Quantile { levels }, HeadOutput::Quantile { preds }) => {
                let j = levels
                    .iter()
                    .position(|&q| (q - 0.5).abs() < 1e-12)
                    .unwrap_or(levels.len() / 2);
                let t = tape.value(*preds);
                (0..t.shape()[0]).map(|i| t.at2(i, j).to_f64()).collect()
            }
            (_, HeadOutput::Gaussian { mu, .. }) => {
                tape.value(*mu).data().iter().map(|v| v.to_f64()).collect()
            }
            (_, HeadOutput::Quantile { preds }) => {
                let t = tape.value(*preds);
                (0..t.shape()[0]).map(|i| t.at2(i, 0).to_f64()).collect()
            }
        };
        let mut acc = 0.0;
        for (p, t) in point.iter().zip(targets.data()) {
            acc += (p - t.to_f64()).abs();
        }
        acc / point.len().max(1) as f64
    }
}

/// Handles produced by one forward pass.
pub struct ForwardPass {
    pub head: HeadOutput,
    pub targets: Option<VarId>,
    /// Tape leaf per parameter, aligned with the parameter store.
    pub param_vars: Vec<VarId>,
}

/// Finite-difference check of the full encoder-decoder-head-loss composite:
/// returns the worst relative error over every parameter of a small model.
pub fn composite_grad_check(seed: u64, head: HeadKind, mode: Mode) -> Result<f64> {
    let (model, batch) = composite_check_setup(seed, head, mode)?;
    // Smaller step than the per-op battery: the composite's third
    // derivatives reach ~1e4 (likelihood curvature at small sigma chained
    // through batch norm), so the O(eps^2) truncation term needs shrinking
    // while rounding noise stays far below the tolerance.
    let eps = 3e-6;
    let mut worst = 0.0f64;
    for id in model.params.ids() {
        let x0 = model.params.get(id).clone();
        let err = grad_check(
            |tape, probe| {
                let mut m = model.clone();
                let pass = m.forward_overriding(tape, &batch, mode, &[(id, probe)])?;
                m.loss_graph(tape, &pass)
            },
            &x0,
            eps,
        )?;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// The small model and batch the composite check runs on, after rejecting
/// batches that leave any relu input within reach of a central
/// finite-difference step of its kink (pinball-loss kinks are relu
/// applications too, so the rejection pass builds the loss as well).
pub fn composite_check_setup(
    seed: u64,
    head: HeadKind,
    mode: Mode,
) -> Result<(DeepTcn<f64>, Batch<f64>)> {
    let schema = tiny_schema();
    let spec = ModelSpec {
        input_len: 8,
        horizon: 2,
        kernel: 2,
        dilations: vec![1, 2],
        channels: 3,
        latent: 3,
        head,
        seed,
    };
    let model = DeepTcn::<f64>::init(&spec, &schema)?;
    let mut rng = RngState::new(seed ^ 0x5eed);
    let mut batch = tiny_batch(&schema, &spec, &mut rng)?;
    for attempt in 0.. {
        let mut probe_model = model.clone();
        let mut tape = Tape::new();
        let pass = probe_model.forward(&mut tape, &batch, mode)?;
        probe_model.loss_graph(&mut tape, &pass)?;
        if tape.min_abs_relu_input().is_none_or(|m| m > 1e-3) {
            break;
        }
        if attempt > 200 {
            return Err(Error::Config(alloc::string::String::from(
                "no kink-free configuration found for the composite gradient check",
            )));
        }
        batch = tiny_batch(&schema, &spec, &mut rng)?;
    }
    Ok((model, batch))
}

fn tiny_schema() -> CovariateSchema {
    use crate::calendar::CalendarFeature;
    use crate::panel::{EmbedSource, EmbeddedFeature};
    CovariateSchema {
        granularity: crate::calendar::Granularity::Daily,
        calendar: vec![CalendarFeature::DayOfWeek],
        holiday_flag: false,
        real_covariates: vec![],
        embedded: vec![EmbeddedFeature {
            name: alloc::string::String::from("category"),
            vocab: 3,
            dim: 2,
            source: EmbedSource::StaticColumn(0),
        }],
    }
}

fn tiny_batch<T: Element>(
    schema: &CovariateSchema,
    spec: &ModelSpec,
    rng: &mut RngState,
) -> Result<Batch<T>> {
    let b = 2;
    let width = schema.numeric_width();
    let channels = 1 + width;
    let hist: Vec<T> = (0..b * channels * spec.input_len)
        .map(|_| T::from_f64(rng.uniform(-1.0, 1.0)))
        .collect();
    let fut: Vec<T> = (0..b * spec.horizon * width)
        .map(|_| T::from_f64(rng.uniform(-1.0, 1.0)))
        .collect();
    let targets: Vec<T> = (0..b * spec.horizon)
        .map(|_| T::from_f64(rng.uniform(-1.0, 1.0)))
        .collect();
    Ok(Batch {
        history: Tensor::new(vec![b, channels, spec.input_len], hist)?,
        codes: vec![vec![0, 2]],
        future_numeric: Some(Tensor::new(vec![b * spec.horizon, width], fut)?),
        targets: Some(Tensor::new(vec![b * spec.horizon], targets)?),
        batch_size: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_resolution_fills_defaults() {
        let schema = tiny_schema();
        let spec = ModelSpec {
            input_len: 8,
            horizon: 2,
            kernel: 2,
            dilations: vec![1, 2],
            channels: 0,
            latent: 0,
            head: HeadKind::default_quantile(),
            seed: 1,
        };
        let resolved = spec.resolve(&schema).unwrap();
        // 1 value channel + 2 (day-of-week sin/cos) + 2 embedding dims
        assert_eq!(resolved.channels, 5);
        assert_eq!(resolved.latent, 5);
    }

    #[test]
    fn spec_rejects_oversized_dilation() {
        let schema = tiny_schema();
        let spec = ModelSpec {
            input_len: 168,
            horizon: 24,
            kernel: 2,
            dilations: vec![1, 2, 4, 128],
            channels: 4,
            latent: 4,
            head: HeadKind::default_quantile(),
            seed: 1,
        };
        assert!(spec.resolve(&schema).is_err());
    }

    #[test]
    fn receptive_field_counts_two_convs_per_block() {
        let spec = ModelSpec {
            input_len: 32,
            horizon: 2,
            kernel: 2,
            dilations: vec![1, 2, 4, 8],
            channels: 4,
            latent: 4,
            head: HeadKind::Gaussian,
            seed: 1,
        };
        assert_eq!(spec.receptive_field().unwrap(), 31);
    }

    #[test]
    fn same_seed_same_initial_parameters() {
        let schema = tiny_schema();
        let spec = ModelSpec {
            input_len: 8,
            horizon: 2,
            kernel: 2,
            dilations: vec![1, 2],
            channels: 3,
            latent: 3,
            head: HeadKind::default_quantile(),
            seed: 99,
        };
        let a = DeepTcn::<f32>::init(&spec, &schema).unwrap();
        let b = DeepTcn::<f32>::init(&spec, &schema).unwrap();
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.0, pb.0);
            assert_eq!(pa.1, pb.1);
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let schema = tiny_schema();
        let spec = ModelSpec {
            input_len: 8,
            horizon: 3,
            kernel: 2,
            dilations: vec![1, 2],
            channels: 4,
            latent: 4,
            head: HeadKind::Quantile {
                levels: alloc::vec![0.1, 0.5, 0.9],
            },
            seed: 7,
        };
        let mut model = DeepTcn::<f32>::init(&spec, &schema).unwrap();
        let mut rng = RngState::new(3);
        let batch = tiny_batch::<f32>(&schema, &model.spec().clone(), &mut rng).unwrap();

        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, Mode::Infer).unwrap();
        let preds = match pass.head {
            HeadOutput::Quantile { preds } => preds,
            _ => unreachable!(),
        };
        assert_eq!(tape.value(preds).shape(), &[2 * 3, 3]);

        let mut tape2 = Tape::new();
        let pass2 = model.forward(&mut tape2, &batch, Mode::Infer).unwrap();
        let preds2 = match pass2.head {
            HeadOutput::Quantile { preds } => preds,
            _ => unreachable!(),
        };
        assert_eq!(tape.value(preds).data(), tape2.value(preds2).data());
    }

    #[test]
    fn gaussian_head_sigma_positive() {
        let schema = tiny_schema();
        let spec = ModelSpec {
            input_len: 8,
            horizon: 2,
            kernel: 2,
            dilations: vec![1, 2],
            channels: 3,
            latent: 3,
            head: HeadKind::Gaussian,
            seed: 11,
        };
        let mut model = DeepTcn::<f32>::init(&spec, &schema).unwrap();
        let mut rng = RngState::new(4);
        let batch = tiny_batch::<f32>(&schema, &model.spec().clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, Mode::Infer).unwrap();
        match pass.head {
            HeadOutput::Gaussian { sigma, .. } => {
                assert!(tape.value(sigma).data().iter().all(|&s| s > 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn composite_gradcheck_both_heads() {
        for (head, mode) in [
            (HeadKind::default_quantile(), Mode::Train),
            (HeadKind::default_quantile(), Mode::Infer),
            (HeadKind::Gaussian, Mode::Train),
        ] {
            let err = composite_grad_check(42, head.clone(), mode).unwrap();
            assert!(err < 1e-6, "head {head:?} {mode:?}: err {err}");
        }
    }
}
