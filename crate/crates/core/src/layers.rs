//! Neural building blocks: dilated causal convolution, batch normalization,
//! dense, embedding, the encoder residual block, and the two-input residual
//! decoder.
//!
//! Parameters live in a flat [`ParamStore`] so the optimizer and the
//! checkpoint writer see one named, ordered list. Layer structs hold handles
//! plus hyperparameters only. A [`Session`] binds every parameter onto a
//! fresh tape for one forward/backward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tape::{Tape, VarId};
use crate::tensor::{Element, Tensor};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Handle into a [`BufStore`] (non-trained state such as BN running stats).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufId(usize);

/// Flat, named, ordered set of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        debug_assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }
}

/// Non-trained model state (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct BufStore<T: Element> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> Default for BufStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> BufStore<T> {
    pub fn new() -> Self {
        BufStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, value: Tensor<T>) -> BufId {
        self.names.push(name);
        self.values.push(value);
        BufId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: BufId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: BufId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: BufId, value: Tensor<T>) {
        debug_assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = BufId> {
        (0..self.values.len()).map(BufId)
    }
}

/// Forward-pass mode. Training updates BN running statistics; inference
/// freezes them, making the whole network a deterministic function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One forward/backward pass: a tape with every parameter bound as a leaf.
pub struct Session<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub mode: Mode,
    bound: Vec<VarId>,
    buffers: &'a mut BufStore<T>,
}

impl<'a, T: Element> Session<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        params: &ParamStore<T>,
        buffers: &'a mut BufStore<T>,
        mode: Mode,
    ) -> Self {
        let bound = params
            .values
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        Session {
            tape,
            mode,
            bound,
            buffers,
        }
    }

    /// Tape leaf bound to a stored parameter.
    pub fn var(&self, id: ParamId) -> VarId {
        self.bound[id.0]
    }

    /// Redirect one parameter to an existing tape leaf (gradient-check probe).
    pub fn override_param(&mut self, id: ParamId, var: VarId) {
        self.bound[id.0] = var;
    }

    /// Leaf var per parameter index, for gradient collection after backward.
    pub fn bound_vars(&self) -> &[VarId] {
        &self.bound
    }

    pub fn buffer(&self, id: BufId) -> &Tensor<T> {
        self.buffers.get(id)
    }
}

fn he_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor<T> {
    let limit = libm::sqrt(6.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.uniform(-limit, limit)))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Dilated causal convolution over `[batch, in_ch, time]`.
#[derive(Debug, Clone)]
pub struct CausalConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl CausalConv1d {
    pub fn init<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut RngState,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel == 0 || dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "conv {name}: kernel, dilation and channel counts must be positive"
            )));
        }
        let weight = store.add(
            format!("{name}.weight"),
            he_uniform(&[out_channels, in_channels, kernel], in_channels * kernel, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Ok(CausalConv1d {
            weight,
            bias,
            kernel,
            dilation,
            in_channels,
            out_channels,
        })
    }

    /// `kernel · dilation` must fit in the input length the layer will see.
    pub fn validate_input_len(&self, input_len: usize) -> Result<()> {
        if self.kernel * self.dilation > input_len {
            return Err(Error::Dimension {
                op: "causal_conv",
                detail: format!(
                    "kernel {} times dilation {} exceeds input length {}",
                    self.kernel, self.dilation, input_len
                ),
            });
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, sess: &mut Session<'_, T>, x: VarId) -> Result<VarId> {
        sess.tape
            .causal_conv(x, sess.var(self.weight), sess.var(self.bias), self.dilation)
    }
}

/// Batch normalization over the channel dimension.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufId,
    pub running_var: BufId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn init<T: Element>(
        params: &mut ParamStore<T>,
        buffers: &mut BufStore<T>,
        name: &str,
        channels: usize,
    ) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[channels], T::ONE));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let running_mean = buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let running_var = buffers.add(
            format!("{name}.running_var"),
            Tensor::full(&[channels], T::ONE),
        );
        BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn forward<T: Element>(&self, sess: &mut Session<'_, T>, x: VarId) -> Result<VarId> {
        let eps = T::from_f64(self.epsilon);
        match sess.mode {
            Mode::Train => {
                let (y, stats) =
                    sess.tape
                        .batchnorm_train(x, sess.var(self.gamma), sess.var(self.beta), eps)?;
                // running = momentum·running + (1 − momentum)·batch
                let mom = T::from_f64(self.momentum);
                let one_minus = T::ONE - mom;
                let mut mean = sess.buffers.get(self.running_mean).clone();
                for (r, &b) in mean.data_mut().iter_mut().zip(stats.mean.iter()) {
                    *r = *r * mom + b * one_minus;
                }
                sess.buffers.set(self.running_mean, mean);
                let mut var = sess.buffers.get(self.running_var).clone();
                for (r, &b) in var.data_mut().iter_mut().zip(stats.var.iter()) {
                    *r = *r * mom + b * one_minus;
                }
                sess.buffers.set(self.running_var, var);
                Ok(y)
            }
            Mode::Infer => {
                let mean = sess.buffers.get(self.running_mean).data().to_vec();
                let var = sess.buffers.get(self.running_var).data().to_vec();
                sess.tape.batchnorm_infer(
                    x,
                    sess.var(self.gamma),
                    sess.var(self.beta),
                    &mean,
                    &var,
                    eps,
                )
            }
        }
    }
}

/// Fully connected layer `x[n, in] -> [n, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn init<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut RngState,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_uniform(&[in_dim, out_dim], in_dim, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Dense {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Element>(&self, sess: &mut Session<'_, T>, x: VarId) -> Result<VarId> {
        let prod = sess.tape.matmul(x, sess.var(self.weight))?;
        sess.tape.add_bias(prod, sess.var(self.bias))
    }
}

/// Embedding table mapping categorical codes to dense vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
    pub feature: String,
}

impl Embedding {
    /// Table entries start at N(0, 0.01).
    pub fn init<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut RngState,
        feature: &str,
        vocab: usize,
        dim: usize,
    ) -> Self {
        let data: Vec<T> = (0..vocab * dim)
            .map(|_| T::from_f64(rng.normal() * 0.1))
            .collect();
        let table = store.add(
            format!("embed.{feature}"),
            Tensor::new(alloc::vec![vocab, dim], data).unwrap(),
        );
        Embedding {
            table,
            vocab,
            dim,
            feature: String::from(feature),
        }
    }

    pub fn lookup<T: Element>(
        &self,
        sess: &mut Session<'_, T>,
        indices: &[usize],
    ) -> Result<VarId> {
        sess.tape
            .embedding(sess.var(self.table), indices)
            .map_err(|e| match e {
                Error::Index { index, bound, .. } => Error::Index {
                    what: format!("feature column '{}'", self.feature),
                    index,
                    bound,
                },
                other => other,
            })
    }
}

/// Activation applied inside encoder blocks. `Identity` exists for the
/// linear-configuration receptive-field diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Structural switches for the encoder; the production configuration is
/// `Default`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderOptions {
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions {
            activation: Activation::Relu,
            batch_norm: true,
        }
    }
}

/// Residual block: two dilated causal convolutions sharing (kernel, dilation),
/// each followed by batch normalization, with an additive skip connection and
/// a ReLU after the sum. When input and output channel counts differ (first
/// block only) the skip goes through a 1x1 convolution projection.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub conv1: CausalConv1d,
    pub bn1: BatchNorm,
    pub conv2: CausalConv1d,
    pub bn2: BatchNorm,
    pub projection: Option<CausalConv1d>,
}

impl EncoderBlock {
    pub fn init<T: Element>(
        params: &mut ParamStore<T>,
        buffers: &mut BufStore<T>,
        rng: &mut RngState,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let conv1 = CausalConv1d::init(
            params,
            rng,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            kernel,
            dilation,
        )?;
        let bn1 = BatchNorm::init(params, buffers, &format!("{name}.bn1"), out_channels);
        let conv2 = CausalConv1d::init(
            params,
            rng,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            kernel,
            dilation,
        )?;
        let bn2 = BatchNorm::init(params, buffers, &format!("{name}.bn2"), out_channels);
        let projection = if in_channels != out_channels {
            Some(CausalConv1d::init(
                params,
                rng,
                &format!("{name}.skip"),
                in_channels,
                out_channels,
                1,
                1,
            )?)
        } else {
            None
        };
        Ok(EncoderBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        })
    }

    pub fn forward<T: Element>(
        &self,
        sess: &mut Session<'_, T>,
        x: VarId,
        opts: EncoderOptions,
    ) -> Result<VarId> {
        let act = |sess: &mut Session<'_, T>, v: VarId| -> Result<VarId> {
            match opts.activation {
                Activation::Relu => sess.tape.relu(v),
                Activation::Identity => Ok(v),
            }
        };
        let mut out = self.conv1.forward(sess, x)?;
        if opts.batch_norm {
            out = self.bn1.forward(sess, out)?;
        }
        out = act(sess, out)?;
        out = self.conv2.forward(sess, out)?;
        if opts.batch_norm {
            out = self.bn2.forward(sess, out)?;
        }
        let skip = match &self.projection {
            Some(proj) => proj.forward(sess, x)?,
            None => x,
        };
        let sum = sess.tape.add(out, skip)?;
        act(sess, sum)
    }
}

/// Stack of residual blocks; the latent output is the final block's features
/// at the last time step, which aggregates the full receptive field.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<EncoderBlock>,
    pub options: EncoderOptions,
}

impl Encoder {
    /// One block per dilation; all blocks share the kernel size and the
    /// hidden channel count.
    pub fn init<T: Element>(
        params: &mut ParamStore<T>,
        buffers: &mut BufStore<T>,
        rng: &mut RngState,
        in_channels: usize,
        channels: usize,
        kernel: usize,
        dilations: &[usize],
        input_len: usize,
    ) -> Result<Self> {
        if dilations.is_empty() {
            return Err(Error::Config(String::from("dilation list is empty")));
        }
        let mut blocks = Vec::with_capacity(dilations.len());
        for (i, &d) in dilations.iter().enumerate() {
            let block_in = if i == 0 { in_channels } else { channels };
            let block = EncoderBlock::init(
                params,
                buffers,
                rng,
                &format!("enc.{i}"),
                block_in,
                channels,
                kernel,
                d,
            )?;
            block.conv1.validate_input_len(input_len)?;
            blocks.push(block);
        }
        Ok(Encoder {
            blocks,
            options: EncoderOptions::default(),
        })
    }

    /// `x[batch, in_ch, time] -> h[batch, channels]`.
    pub fn forward<T: Element>(&self, sess: &mut Session<'_, T>, x: VarId) -> Result<VarId> {
        let seq = self.forward_sequence(sess, x)?;
        sess.tape.last_step(seq)
    }

    /// Full output sequence `[batch, channels, time]` before the final-step
    /// selection; the causality diagnostics inspect every position.
    pub fn forward_sequence<T: Element>(
        &self,
        sess: &mut Session<'_, T>,
        x: VarId,
    ) -> Result<VarId> {
        let mut cur = x;
        for block in &self.blocks {
            cur = block.forward(sess, cur, self.options)?;
        }
        Ok(cur)
    }
}

/// Trailing input positions that can influence the encoder output at the
/// final step: `1 + convs_per_level · (kernel − 1) · Σ dilations`.
pub fn receptive_field(dilations: &[usize], kernel: usize, convs_per_level: usize) -> Result<usize> {
    if dilations.is_empty() || dilations.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!(
            "dilations must be non-empty and positive, got {dilations:?}"
        )));
    }
    let sum: usize = dilations.iter().sum();
    Ok(1 + convs_per_level * (kernel - 1) * sum)
}

/// Two-input residual decoder: `output = R(future covariates) + h`, with `h`
/// broadcast to every horizon step. `R` projects the covariates through
/// dense -> batch norm -> ReLU -> dense -> batch norm.
#[derive(Debug, Clone)]
pub struct ResnetV {
    pub fc1: Dense,
    pub bn1: BatchNorm,
    pub fc2: Dense,
    pub bn2: BatchNorm,
    pub batch_norm: bool,
}

impl ResnetV {
    pub fn init<T: Element>(
        params: &mut ParamStore<T>,
        buffers: &mut BufStore<T>,
        rng: &mut RngState,
        covariate_width: usize,
        hidden: usize,
        latent: usize,
    ) -> Self {
        let fc1 = Dense::init(params, rng, "dec.fc1", covariate_width, hidden);
        let bn1 = BatchNorm::init(params, buffers, "dec.bn1", hidden);
        let fc2 = Dense::init(params, rng, "dec.fc2", hidden, latent);
        let bn2 = BatchNorm::init(params, buffers, "dec.bn2", latent);
        ResnetV {
            fc1,
            bn1,
            fc2,
            bn2,
            batch_norm: true,
        }
    }

    /// `h[batch, latent]`, `future[batch·horizon, width] -> [batch·horizon, latent]`.
    ///
    /// Rows of `future` are grouped per series: the `horizon` rows of series
    /// `i` are consecutive, matching `repeat_rows` on `h`.
    pub fn forward<T: Element>(
        &self,
        sess: &mut Session<'_, T>,
        h: VarId,
        future: VarId,
        horizon: usize,
    ) -> Result<VarId> {
        let th = sess.tape.value(h).shape().to_vec();
        let tf = sess.tape.value(future).shape().to_vec();
        if tf[0] != th[0] * horizon {
            return Err(Error::Dimension {
                op: "resnet_v",
                detail: format!(
                    "future rows {} != batch {} times horizon {horizon}",
                    tf[0], th[0]
                ),
            });
        }
        let mut r = self.fc1.forward(sess, future)?;
        if self.batch_norm {
            r = self.bn1.forward(sess, r)?;
        }
        r = sess.tape.relu(r)?;
        r = self.fc2.forward(sess, r)?;
        if self.batch_norm {
            r = self.bn2.forward(sess, r)?;
        }
        let h_rep = sess.tape.repeat_rows(h, horizon)?;
        sess.tape.add(r, h_rep)
    }
}
