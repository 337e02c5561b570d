//! Reverse-mode differentiation on an explicit tape.
//!
//! Every primitive application appends one node holding the output value and
//! the ids of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients into every node that transitively depends on a
//! parameter leaf. The graph here is a static feed-forward net, so a plain
//! tape is all the machinery needed.
//!
//! Any primitive that produces a NaN or infinity from finite inputs fails
//! immediately with the producing operation named; silent non-finite values
//! would destroy training reproducibility.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a batch-norm input: channels are dimension 1 in both cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnLayout {
    /// `[n, channels]` — statistics over rows.
    Rows,
    /// `[n, channels, time]` — statistics over rows and time.
    Sequence,
}

/// Per-channel statistics captured by a train-mode batch norm application.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
struct BnAux<T> {
    layout: BnLayout,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    AddScalar(VarId, T),
    MulScalar(VarId, T),
    Relu(VarId),
    Softplus(VarId),
    Exp(VarId),
    Log(VarId),
    Square(VarId),
    Matmul(VarId, VarId),
    AddBias(VarId, VarId),
    Conv {
        x: VarId,
        w: VarId,
        b: VarId,
        kernel: usize,
        dilation: usize,
    },
    BnTrain {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        aux: BnAux<T>,
    },
    BnInfer {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        aux: BnAux<T>,
    },
    Embedding {
        table: VarId,
        indices: Vec<usize>,
    },
    LastStep(VarId),
    RepeatRows(VarId, usize),
    BroadcastTime(VarId, usize),
    ConcatChannels(VarId, VarId),
    ConcatCols(VarId, VarId),
    SelectCol(VarId, usize),
    Reshape(VarId),
    Sum(VarId),
    Mean(VarId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`VarId`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor<T>> {
        self.grads[id.0].take()
    }
}

/// Recording tape. One tape per forward/backward pass; single-threaded.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf that does not require gradients (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.push_leaf(value, false)
    }

    /// Record a leaf that accumulates gradients (weights, or the probe
    /// point of a gradient check).
    pub fn param(&mut self, value: Tensor<T>) -> VarId {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<VarId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = self.op_parents(&op).iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(VarId(self.nodes.len() - 1))
    }

    fn op_parents(&self, op: &Op<T>) -> Vec<VarId> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Matmul(a, b)
            | Op::AddBias(a, b)
            | Op::ConcatChannels(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::AddScalar(a, _)
            | Op::MulScalar(a, _)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::LastStep(a)
            | Op::RepeatRows(a, _)
            | Op::BroadcastTime(a, _)
            | Op::SelectCol(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Conv { x, w, b, .. } => vec![*x, *w, *b],
            Op::BnTrain { x, gamma, beta, .. } | Op::BnInfer { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Embedding { table, .. } => vec![*table],
        }
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data: Vec<T> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op_name, out, op)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(b).data().iter().any(|&x| x == T::ZERO) {
            return Err(Error::Domain {
                op: "div",
                detail: alloc::string::String::from("division by zero"),
            });
        }
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: VarId, c: T) -> Result<VarId> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: VarId, c: T) -> Result<VarId> {
        let out = self.value(a).map(|x| x * c);
        self.push("mul_scalar", out, Op::MulScalar(a, c))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let out = self.value(a).map(|x| x.maximum(T::ZERO));
        self.push("relu", out, Op::Relu(a))
    }

    /// Soft-ReLU `log(1 + exp(z))` in the overflow-safe form
    /// `max(z, 0) + log1p(exp(-|z|))`.
    pub fn softplus(&mut self, a: VarId) -> Result<VarId> {
        let out = self.value(a).map(softplus_scalar);
        self.push("softplus", out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        let out = self.value(a).map(|x| x.exp());
        self.push("exp", out, Op::Exp(a))
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        if self.value(a).data().iter().any(|&x| x <= T::ZERO) {
            return Err(Error::Domain {
                op: "log",
                detail: alloc::string::String::from("log of non-positive value"),
            });
        }
        let out = self.value(a).map(|x| x.ln());
        self.push("log", out, Op::Log(a))
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        let out = self.value(a).map(|x| x * x);
        self.push("square", out, Op::Square(a))
    }

    /// `a[m, k] × b[k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out = matmul_values(ta, tb);
        self.push("matmul", out, Op::Matmul(a, b))
    }

    /// Add a bias row `b[m]` to every row of `x[n, m]`.
    pub fn add_bias(&mut self, x: VarId, b: VarId) -> Result<VarId> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, m) = (tx.shape()[0], tx.shape()[1]);
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = &tx.data()[i * m..(i + 1) * m];
            for j in 0..m {
                data.push(row[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        self.push("add_bias", out, Op::AddBias(x, b))
    }

    /// Dilated causal convolution with implicit left zero padding.
    ///
    /// `x[batch, in_ch, time]`, `w[out_ch, in_ch, kernel]`, `b[out_ch]` ->
    /// `[batch, out_ch, time]`; the output at position `t` reads inputs at
    /// `t, t - d, ..., t - (kernel-1)·d` only.
    pub fn causal_conv(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        dilation: usize,
    ) -> Result<VarId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 3 || tw.rank() != 3 {
            return Err(Error::Dimension {
                op: "causal_conv",
                detail: alloc::format!(
                    "expected x rank 3 and w rank 3, got {:?} and {:?}",
                    tx.shape(),
                    tw.shape()
                ),
            });
        }
        if tx.shape()[1] != tw.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "causal_conv",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if tb.rank() != 1 || tb.shape()[0] != tw.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "causal_conv",
                left: tw.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let kernel = tw.shape()[2];
        let out = conv_forward(tx, tw, tb, dilation);
        self.push(
            "causal_conv",
            out,
            Op::Conv {
                x,
                w,
                b,
                kernel,
                dilation,
            },
        )
    }

    /// Train-mode batch normalization; returns the normalized output and the
    /// batch statistics so the caller can update running buffers.
    pub fn batchnorm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: T,
    ) -> Result<(VarId, BatchStats<T>)> {
        let tx = self.value(x);
        let layout = bn_layout(tx)?;
        let (channels, count) = bn_dims(tx, layout);
        self.check_bn_params(gamma, beta, channels)?;
        if count < 2 {
            return Err(Error::Dimension {
                op: "batchnorm",
                detail: alloc::format!(
                    "train mode needs at least 2 samples per channel, got {count}"
                ),
            });
        }

        let tx = self.value(x);
        let mut mean = vec![T::ZERO; channels];
        let mut var = vec![T::ZERO; channels];
        bn_for_each(tx, layout, |c, v| mean[c] = mean[c] + v);
        let inv_count = T::ONE / T::from_f64(count as f64);
        for m in mean.iter_mut() {
            *m = *m * inv_count;
        }
        bn_for_each(tx, layout, |c, v| {
            let d = v - mean[c];
            var[c] = var[c] + d * d;
        });
        for v in var.iter_mut() {
            *v = *v * inv_count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();

        let out = bn_apply(tx, layout, &mean, &inv_std, self.value(gamma), self.value(beta));
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let id = self.push(
            "batchnorm",
            out,
            Op::BnTrain {
                x,
                gamma,
                beta,
                aux: BnAux {
                    layout,
                    mean,
                    inv_std,
                },
            },
        )?;
        Ok((id, stats))
    }

    /// Inference-mode batch normalization against frozen running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<VarId> {
        let tx = self.value(x);
        let layout = bn_layout(tx)?;
        let (channels, _) = bn_dims(tx, layout);
        self.check_bn_params(gamma, beta, channels)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::Dimension {
                op: "batchnorm",
                detail: alloc::format!(
                    "running stats of length {}/{} for {channels} channels",
                    running_mean.len(),
                    running_var.len()
                ),
            });
        }
        let mean = running_mean.to_vec();
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::ONE / (v + eps).sqrt())
            .collect();
        let tx = self.value(x);
        let out = bn_apply(tx, layout, &mean, &inv_std, self.value(gamma), self.value(beta));
        self.push(
            "batchnorm",
            out,
            Op::BnInfer {
                x,
                gamma,
                beta,
                aux: BnAux {
                    layout,
                    mean,
                    inv_std,
                },
            },
        )
    }

    fn check_bn_params(&self, gamma: VarId, beta: VarId, channels: usize) -> Result<()> {
        for id in [gamma, beta] {
            let t = self.value(id);
            if t.rank() != 1 || t.shape()[0] != channels {
                return Err(Error::Dimension {
                    op: "batchnorm",
                    detail: alloc::format!(
                        "scale/shift shape {:?} does not match {channels} channels",
                        t.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Gather rows of `table[vocab, dim]`; gradients scatter-add back into
    /// the referenced rows only.
    pub fn embedding(&mut self, table: VarId, indices: &[usize]) -> Result<VarId> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(Error::Dimension {
                op: "embedding",
                detail: alloc::format!("table must be rank 2, got {:?}", tt.shape()),
            });
        }
        let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                what: alloc::string::String::from("embedding table row"),
                index: bad,
                bound: vocab,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&tt.data()[i * dim..(i + 1) * dim]);
        }
        let out = Tensor::new(vec![indices.len(), dim], data)?;
        self.push(
            "embedding",
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// `[batch, ch, time] -> [batch, ch]`, features at the final time step.
    pub fn last_step(&mut self, x: VarId) -> Result<VarId> {
        let tx = self.value(x);
        if tx.rank() != 3 {
            return Err(Error::Dimension {
                op: "last_step",
                detail: alloc::format!("expected rank 3, got {:?}", tx.shape()),
            });
        }
        let (b, c, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            for ci in 0..c {
                data.push(tx.at3(bi, ci, t - 1));
            }
        }
        let out = Tensor::new(vec![b, c], data)?;
        self.push("last_step", out, Op::LastStep(x))
    }

    /// Repeat each row of `x[n, d]` `k` times consecutively -> `[n·k, d]`.
    pub fn repeat_rows(&mut self, x: VarId, k: usize) -> Result<VarId> {
        let tx = self.value(x);
        if tx.rank() != 2 || k == 0 {
            return Err(Error::Dimension {
                op: "repeat_rows",
                detail: alloc::format!("rank-2 input and k > 0 required, got {:?}, k={k}", tx.shape()),
            });
        }
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let mut data = Vec::with_capacity(n * k * d);
        for i in 0..n {
            let row = &tx.data()[i * d..(i + 1) * d];
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        let out = Tensor::new(vec![n * k, d], data)?;
        self.push("repeat_rows", out, Op::RepeatRows(x, k))
    }

    /// Broadcast `x[b, c]` along a new trailing time axis -> `[b, c, t]`.
    pub fn broadcast_time(&mut self, x: VarId, time: usize) -> Result<VarId> {
        let tx = self.value(x);
        if tx.rank() != 2 || time == 0 {
            return Err(Error::Dimension {
                op: "broadcast_time",
                detail: alloc::format!("rank-2 input and t > 0 required, got {:?}", tx.shape()),
            });
        }
        let (b, c) = (tx.shape()[0], tx.shape()[1]);
        let mut data = Vec::with_capacity(b * c * time);
        for bi in 0..b {
            for ci in 0..c {
                let v = tx.at2(bi, ci);
                for _ in 0..time {
                    data.push(v);
                }
            }
        }
        let out = Tensor::new(vec![b, c, time], data)?;
        self.push("broadcast_time", out, Op::BroadcastTime(x, time))
    }

    /// Concatenate along the channel axis: `[b,c1,t] ++ [b,c2,t]`.
    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3
            || tb.rank() != 3
            || ta.shape()[0] != tb.shape()[0]
            || ta.shape()[2] != tb.shape()[2]
        {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, c1, t) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let c2 = tb.shape()[1];
        let mut data = Vec::with_capacity(n * (c1 + c2) * t);
        for bi in 0..n {
            data.extend_from_slice(&ta.data()[bi * c1 * t..(bi + 1) * c1 * t]);
            data.extend_from_slice(&tb.data()[bi * c2 * t..(bi + 1) * c2 * t]);
        }
        let out = Tensor::new(vec![n, c1 + c2, t], data)?;
        self.push("concat_channels", out, Op::ConcatChannels(a, b))
    }

    /// Concatenate along columns: `[n,d1] ++ [n,d2]`.
    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, d1) = (ta.shape()[0], ta.shape()[1]);
        let d2 = tb.shape()[1];
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * d1..(i + 1) * d1]);
            data.extend_from_slice(&tb.data()[i * d2..(i + 1) * d2]);
        }
        let out = Tensor::new(vec![n, d1 + d2], data)?;
        self.push("concat_cols", out, Op::ConcatCols(a, b))
    }

    /// Extract column `j` of `x[n, d]` as a vector `[n]`.
    pub fn select_col(&mut self, x: VarId, j: usize) -> Result<VarId> {
        let tx = self.value(x);
        if tx.rank() != 2 || j >= tx.shape()[1] {
            return Err(Error::Index {
                what: alloc::string::String::from("column"),
                index: j,
                bound: if tx.rank() == 2 { tx.shape()[1] } else { 0 },
            });
        }
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let data: Vec<T> = (0..n).map(|i| tx.data()[i * d + j]).collect();
        let out = Tensor::new(vec![n], data)?;
        self.push("select_col", out, Op::SelectCol(x, j))
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let out = self.value(x).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: VarId) -> Result<VarId> {
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        self.push("sum", Tensor::scalar(acc), Op::Sum(x))
    }

    pub fn mean(&mut self, x: VarId) -> Result<VarId> {
        let n = self.value(x).len();
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        let out = Tensor::scalar(acc / T::from_f64(n as f64));
        self.push("mean", out, Op::Mean(x))
    }

    /// Distance of the closest relu input to its kink at zero, over every
    /// relu application recorded so far. Gradient checks use this to reject
    /// configurations where a finite-difference step would cross the kink.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &v in self.nodes[a.0].value.data() {
                    let d = v.to_f64().abs();
                    if min.is_none_or(|m| d < m) {
                        min = Some(d);
                    }
                }
            }
        }
        min
    }

    /// Reverse pass from a scalar root. Gradients flow only into nodes that
    /// transitively depend on a `param` leaf.
    pub fn backward(&self, root: VarId) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                detail: alloc::format!(
                    "root must be scalar, got shape {:?}",
                    self.value(root).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, zip_map(g, tb, |gv, bv| gv * bv));
                self.accum(grads, *b, zip_map(g, ta, |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, zip_map(g, tb, |gv, bv| gv / bv));
                let mut d = Vec::with_capacity(g.len());
                for k in 0..g.len() {
                    let bv = tb.data()[k];
                    d.push(-g.data()[k] * ta.data()[k] / (bv * bv));
                }
                self.accum(grads, *b, Tensor::new(tb.shape().to_vec(), d).unwrap());
            }
            Op::AddScalar(a, _) => self.accum(grads, *a, g.clone()),
            Op::MulScalar(a, c) => {
                let c = *c;
                self.accum(grads, *a, g.map(|x| x * c));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                self.accum(
                    grads,
                    *a,
                    zip_map(g, ta, |gv, x| if x > T::ZERO { gv } else { T::ZERO }),
                );
            }
            Op::Softplus(a) => {
                let ta = self.value(*a);
                self.accum(grads, *a, zip_map(g, ta, |gv, x| gv * sigmoid_scalar(x)));
            }
            Op::Exp(a) => {
                // d exp = exp, reuse the stored output
                let out = &node.value;
                self.accum(grads, *a, zip_map(g, out, |gv, y| gv * y));
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                self.accum(grads, *a, zip_map(g, ta, |gv, x| gv / x));
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                let two = T::from_f64(2.0);
                self.accum(grads, *a, zip_map(g, ta, |gv, x| gv * two * x));
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, matmul_nt(g, tb));
                self.accum(grads, *b, matmul_tn(ta, g));
            }
            Op::AddBias(x, b) => {
                self.accum(grads, *x, g.clone());
                let (n, m) = (g.shape()[0], g.shape()[1]);
                let mut db = vec![T::ZERO; m];
                for i2 in 0..n {
                    for j in 0..m {
                        db[j] = db[j] + g.data()[i2 * m + j];
                    }
                }
                self.accum(grads, *b, Tensor::new(vec![m], db).unwrap());
            }
            Op::Conv {
                x,
                w,
                b,
                kernel,
                dilation,
            } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (dx, dw, db) = conv_backward(g, tx, tw, *kernel, *dilation);
                self.accum(grads, *x, dx);
                self.accum(grads, *w, dw);
                self.accum(grads, *b, db);
            }
            Op::BnTrain { x, gamma, beta, aux } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let (dx, dgamma, dbeta) = bn_train_backward(g, tx, tg, aux);
                self.accum(grads, *x, dx);
                self.accum(grads, *gamma, dgamma);
                self.accum(grads, *beta, dbeta);
            }
            Op::BnInfer { x, gamma, beta, aux } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let (dx, dgamma, dbeta) = bn_infer_backward(g, tx, tg, aux);
                self.accum(grads, *x, dx);
                self.accum(grads, *gamma, dgamma);
                self.accum(grads, *beta, dbeta);
            }
            Op::Embedding { table, indices } => {
                let tt = self.value(*table);
                let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
                let mut dt = vec![T::ZERO; vocab * dim];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..dim {
                        dt[idx * dim + j] = dt[idx * dim + j] + g.data()[r * dim + j];
                    }
                }
                self.accum(grads, *table, Tensor::new(vec![vocab, dim], dt).unwrap());
            }
            Op::LastStep(x) => {
                let tx = self.value(*x);
                let (b, c, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let mut dx = vec![T::ZERO; b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        dx[(bi * c + ci) * t + (t - 1)] = g.data()[bi * c + ci];
                    }
                }
                self.accum(grads, *x, Tensor::new(vec![b, c, t], dx).unwrap());
            }
            Op::RepeatRows(x, k) => {
                let tx = self.value(*x);
                let (n, d) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![T::ZERO; n * d];
                for i2 in 0..n {
                    for r in 0..*k {
                        let src = (i2 * k + r) * d;
                        for j in 0..d {
                            dx[i2 * d + j] = dx[i2 * d + j] + g.data()[src + j];
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(vec![n, d], dx).unwrap());
            }
            Op::BroadcastTime(x, time) => {
                let tx = self.value(*x);
                let (b, c) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![T::ZERO; b * c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * time;
                        let mut acc = T::ZERO;
                        for t in 0..*time {
                            acc = acc + g.data()[base + t];
                        }
                        dx[bi * c + ci] = acc;
                    }
                }
                self.accum(grads, *x, Tensor::new(vec![b, c], dx).unwrap());
            }
            Op::ConcatChannels(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, c1, t) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let c2 = tb.shape()[1];
                let mut da = Vec::with_capacity(n * c1 * t);
                let mut db = Vec::with_capacity(n * c2 * t);
                for bi in 0..n {
                    let base = bi * (c1 + c2) * t;
                    da.extend_from_slice(&g.data()[base..base + c1 * t]);
                    db.extend_from_slice(&g.data()[base + c1 * t..base + (c1 + c2) * t]);
                }
                self.accum(grads, *a, Tensor::new(vec![n, c1, t], da).unwrap());
                self.accum(grads, *b, Tensor::new(vec![n, c2, t], db).unwrap());
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, d1) = (ta.shape()[0], ta.shape()[1]);
                let d2 = tb.shape()[1];
                let mut da = Vec::with_capacity(n * d1);
                let mut db = Vec::with_capacity(n * d2);
                for i2 in 0..n {
                    let base = i2 * (d1 + d2);
                    da.extend_from_slice(&g.data()[base..base + d1]);
                    db.extend_from_slice(&g.data()[base + d1..base + d1 + d2]);
                }
                self.accum(grads, *a, Tensor::new(vec![n, d1], da).unwrap());
                self.accum(grads, *b, Tensor::new(vec![n, d2], db).unwrap());
            }
            Op::SelectCol(x, j) => {
                let tx = self.value(*x);
                let (n, d) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![T::ZERO; n * d];
                for i2 in 0..n {
                    dx[i2 * d + j] = g.data()[i2];
                }
                self.accum(grads, *x, Tensor::new(vec![n, d], dx).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accum(grads, *x, g.reshaped(shape).unwrap());
            }
            Op::Sum(x) => {
                let gv = g.item();
                let tx = self.value(*x);
                self.accum(grads, *x, Tensor::full(tx.shape(), gv));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                let gv = g.item() / T::from_f64(tx.len() as f64);
                self.accum(grads, *x, Tensor::full(tx.shape(), gv));
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], id: VarId, contribution: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), contribution.shape());
                let dst = existing.data_mut();
                for (d, s) in dst.iter_mut().zip(contribution.data()) {
                    *d = *d + *s;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

pub(crate) fn softplus_scalar<T: Element>(z: T) -> T {
    z.maximum(T::ZERO) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn matmul_values<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data()[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// `g[m,n] × bᵀ[n,k] -> [m,k]`
fn matmul_nt<T: Element>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![T::ZERO; m * k];
    for i in 0..m {
        let grow = &g.data()[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b.data()[p * n..(p + 1) * n];
            let mut acc = T::ZERO;
            for j in 0..n {
                acc = acc + grow[j] * brow[j];
            }
            *o = acc;
        }
    }
    Tensor::new(vec![m, k], out).unwrap()
}

/// `aᵀ[k,m] × g[m,n] -> [k,n]`
fn matmul_tn<T: Element>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.shape()[1];
    let mut out = vec![T::ZERO; k * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let grow = &g.data()[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * grow[j];
            }
        }
    }
    Tensor::new(vec![k, n], out).unwrap()
}

fn conv_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
) -> Tensor<T> {
    let (batch, in_ch, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_ch, _, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let mut out = vec![T::ZERO; batch * out_ch * time];
    for bi in 0..batch {
        for o in 0..out_ch {
            let orow = &mut out[(bi * out_ch + o) * time..(bi * out_ch + o + 1) * time];
            let bias = b.data()[o];
            for v in orow.iter_mut() {
                *v = bias;
            }
            for i in 0..in_ch {
                let xrow = &x.data()[(bi * in_ch + i) * time..(bi * in_ch + i + 1) * time];
                for k in 0..kernel {
                    let wv = w.data()[(o * in_ch + i) * kernel + k];
                    let shift = dilation * k;
                    if shift >= time {
                        continue;
                    }
                    for t in shift..time {
                        orow[t] = orow[t] + wv * xrow[t - shift];
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, out_ch, time], out).unwrap()
}

fn conv_backward<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    kernel: usize,
    dilation: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (batch, in_ch, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_ch = w.shape()[0];
    let mut dx = vec![T::ZERO; batch * in_ch * time];
    let mut dw = vec![T::ZERO; out_ch * in_ch * kernel];
    let mut db = vec![T::ZERO; out_ch];

    for bi in 0..batch {
        for o in 0..out_ch {
            let grow = &g.data()[(bi * out_ch + o) * time..(bi * out_ch + o + 1) * time];
            let mut acc = T::ZERO;
            for &gv in grow.iter() {
                acc = acc + gv;
            }
            db[o] = db[o] + acc;
            for i in 0..in_ch {
                let xrow = &x.data()[(bi * in_ch + i) * time..(bi * in_ch + i + 1) * time];
                let dxrow = &mut dx[(bi * in_ch + i) * time..(bi * in_ch + i + 1) * time];
                for k in 0..kernel {
                    let shift = dilation * k;
                    if shift >= time {
                        continue;
                    }
                    let wv = w.data()[(o * in_ch + i) * kernel + k];
                    let mut wacc = T::ZERO;
                    for t in shift..time {
                        let gv = grow[t];
                        wacc = wacc + gv * xrow[t - shift];
                        dxrow[t - shift] = dxrow[t - shift] + gv * wv;
                    }
                    let wi = (o * in_ch + i) * kernel + k;
                    dw[wi] = dw[wi] + wacc;
                }
            }
        }
    }
    (
        Tensor::new(vec![batch, in_ch, time], dx).unwrap(),
        Tensor::new(vec![out_ch, in_ch, kernel], dw).unwrap(),
        Tensor::new(vec![out_ch], db).unwrap(),
    )
}

fn bn_layout<T: Element>(x: &Tensor<T>) -> Result<BnLayout> {
    match x.rank() {
        2 => Ok(BnLayout::Rows),
        3 => Ok(BnLayout::Sequence),
        _ => Err(Error::Dimension {
            op: "batchnorm",
            detail: alloc::format!("expected rank 2 or 3, got {:?}", x.shape()),
        }),
    }
}

fn bn_dims<T: Element>(x: &Tensor<T>, layout: BnLayout) -> (usize, usize) {
    match layout {
        BnLayout::Rows => (x.shape()[1], x.shape()[0]),
        BnLayout::Sequence => (x.shape()[1], x.shape()[0] * x.shape()[2]),
    }
}

fn bn_for_each<T: Element>(x: &Tensor<T>, layout: BnLayout, mut f: impl FnMut(usize, T)) {
    match layout {
        BnLayout::Rows => {
            let (n, c) = (x.shape()[0], x.shape()[1]);
            for i in 0..n {
                for ci in 0..c {
                    f(ci, x.data()[i * c + ci]);
                }
            }
        }
        BnLayout::Sequence => {
            let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            for i in 0..n {
                for ci in 0..c {
                    let base = (i * c + ci) * t;
                    for k in 0..t {
                        f(ci, x.data()[base + k]);
                    }
                }
            }
        }
    }
}

fn bn_apply<T: Element>(
    x: &Tensor<T>,
    layout: BnLayout,
    mean: &[T],
    inv_std: &[T],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Tensor<T> {
    let mut out = vec![T::ZERO; x.len()];
    match layout {
        BnLayout::Rows => {
            let (n, c) = (x.shape()[0], x.shape()[1]);
            for i in 0..n {
                for ci in 0..c {
                    let idx = i * c + ci;
                    let xhat = (x.data()[idx] - mean[ci]) * inv_std[ci];
                    out[idx] = gamma.data()[ci] * xhat + beta.data()[ci];
                }
            }
        }
        BnLayout::Sequence => {
            let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            for i in 0..n {
                for ci in 0..c {
                    let base = (i * c + ci) * t;
                    let (m, s, gm, bt) = (mean[ci], inv_std[ci], gamma.data()[ci], beta.data()[ci]);
                    for k in 0..t {
                        out[base + k] = gm * (x.data()[base + k] - m) * s + bt;
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

fn bn_train_backward<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    aux: &BnAux<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (channels, count) = bn_dims(x, aux.layout);
    let m = T::from_f64(count as f64);

    // Channel-wise sums of dxhat and dxhat·xhat, then the closed-form input
    // gradient dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)).
    let mut sum_dxhat = vec![T::ZERO; channels];
    let mut sum_dxhat_xhat = vec![T::ZERO; channels];
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];

    let xhat_at = |idx: usize, ci: usize| (x.data()[idx] - aux.mean[ci]) * aux.inv_std[ci];

    let mut first = |ci: usize, idx: usize| {
        let gv = g.data()[idx];
        let xh = xhat_at(idx, ci);
        let dxh = gv * gamma.data()[ci];
        sum_dxhat[ci] = sum_dxhat[ci] + dxh;
        sum_dxhat_xhat[ci] = sum_dxhat_xhat[ci] + dxh * xh;
        dgamma[ci] = dgamma[ci] + gv * xh;
        dbeta[ci] = dbeta[ci] + gv;
    };
    for_each_index(x, aux.layout, &mut first);

    let mut dx = vec![T::ZERO; x.len()];
    let mut second = |ci: usize, idx: usize| {
        let xh = xhat_at(idx, ci);
        let dxh = g.data()[idx] * gamma.data()[ci];
        dx[idx] = aux.inv_std[ci] / m * (m * dxh - sum_dxhat[ci] - xh * sum_dxhat_xhat[ci]);
    };
    for_each_index(x, aux.layout, &mut second);

    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(vec![channels], dgamma).unwrap(),
        Tensor::new(vec![channels], dbeta).unwrap(),
    )
}

fn bn_infer_backward<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    aux: &BnAux<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (channels, _) = bn_dims(x, aux.layout);
    let mut dx = vec![T::ZERO; x.len()];
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];
    let mut visit = |ci: usize, idx: usize| {
        let gv = g.data()[idx];
        let xh = (x.data()[idx] - aux.mean[ci]) * aux.inv_std[ci];
        dx[idx] = gv * gamma.data()[ci] * aux.inv_std[ci];
        dgamma[ci] = dgamma[ci] + gv * xh;
        dbeta[ci] = dbeta[ci] + gv;
    };
    for_each_index(x, aux.layout, &mut visit);
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(vec![channels], dgamma).unwrap(),
        Tensor::new(vec![channels], dbeta).unwrap(),
    )
}

fn for_each_index<T: Element>(
    x: &Tensor<T>,
    layout: BnLayout,
    f: &mut impl FnMut(usize, usize),
) {
    match layout {
        BnLayout::Rows => {
            let (n, c) = (x.shape()[0], x.shape()[1]);
            for i in 0..n {
                for ci in 0..c {
                    f(ci, i * c + ci);
                }
            }
        }
        BnLayout::Sequence => {
            let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            for i in 0..n {
                for ci in 0..c {
                    let base = (i * c + ci) * t;
                    for k in 0..t {
                        f(ci, base + k);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t1(values: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(values)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
        let m = tape.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_dot_product() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn softplus_matches_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[0.0]));
        let y = tape.softplus(x).unwrap();
        assert!((tape.value(y).item() - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1000.0]));
        let y = tape.softplus(x).unwrap();
        assert_eq!(tape.value(y).item(), 1000.0);
    }

    #[test]
    fn relu_definition_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[-3.0, 3.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn log_domain_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn div_by_zero_is_domain_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t1(&[1.0]));
        let b = tape.constant(t1(&[0.0]));
        assert!(matches!(tape.div(a, b), Err(Error::Domain { op: "div", .. })));
    }

    #[test]
    fn nan_is_promoted_to_error_naming_the_op() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1e308]));
        // exp overflows to +inf
        match tape.exp(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "exp"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradients_match_manual_product_rule() {
        // f = sum(A·B); dA = 1·Bᵀ broadcast over rows.
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = tape.param(Tensor::new(vec![2, 2], vec![5., 6., 7., 8.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let grads = tape.backward(s).unwrap();
        // dA[i,p] = sum_j B[p,j]
        assert_eq!(grads.get(a).unwrap().data(), &[11., 15., 11., 15.]);
        // dB[p,j] = sum_i A[i,p]
        assert_eq!(grads.get(b).unwrap().data(), &[4., 4., 6., 6.]);
    }

    #[test]
    fn causal_conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 4], vec![1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.]).unwrap());
        let b = tape.constant(t1(&[0.0]));
        let y = tape.causal_conv(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn causal_conv_dilated_sum_kernel() {
        // x=[1..8], K=2, d=2, w=[1,1]: s(t) = x(t) + x(t-2) with zero padding.
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::new(vec![1, 1, 8], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap(),
        );
        let w = tape.constant(Tensor::new(vec![1, 1, 2], vec![1., 1.]).unwrap());
        let b = tape.constant(t1(&[0.0]));
        let y = tape.causal_conv(x, w, b, 2).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1., 2., 4., 6., 8., 10., 12., 14.]
        );
    }

    #[test]
    fn causal_conv_is_causal_bitwise() {
        // bumping a future position leaves earlier outputs bit-identical
        let base = vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 6], base.clone()).unwrap());
        let w = tape.constant(Tensor::new(vec![1, 1, 2], vec![0.3, -0.9]).unwrap());
        let b = tape.constant(t1(&[0.1]));
        let y = tape.causal_conv(x, w, b, 2).unwrap();
        let y0 = tape.value(y).data().to_vec();

        for bump in 1..6 {
            let mut perturbed = base.clone();
            perturbed[bump] += 1.0;
            let mut tape2 = Tape::new();
            let x2 = tape2.constant(Tensor::new(vec![1, 1, 6], perturbed).unwrap());
            let w2 = tape2.constant(Tensor::new(vec![1, 1, 2], vec![0.3, -0.9]).unwrap());
            let b2 = tape2.constant(t1(&[0.1]));
            let y2 = tape2.causal_conv(x2, w2, b2, 2).unwrap();
            for t in 0..bump {
                assert_eq!(tape.value(y).data()[t], tape2.value(y2).data()[t]);
            }
            let _ = y0;
        }
    }

    #[test]
    fn embedding_scatter_adds_duplicate_rows() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let looked = tape.embedding(table, &[0, 0]).unwrap();
        let s = tape.sum(looked).unwrap();
        let grads = tape.backward(s).unwrap();
        // row 0 referenced twice -> gradient 2 per column; rows 1,2 untouched
        assert_eq!(grads.get(table).unwrap().data(), &[2., 2., 0., 0., 0., 0.]);
    }

    #[test]
    fn embedding_out_of_range_errors() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::<f64>::zeros(&[3, 2]));
        assert!(matches!(
            tape.embedding(table, &[3]),
            Err(Error::Index { index: 3, bound: 3, .. })
        ));
    }

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 2], vec![1., 10., 2., 20., 3., 30., 4., 40.]).unwrap());
        let gamma = tape.constant(t1(&[1.0, 1.0]));
        let beta = tape.constant(t1(&[0.0, 0.0]));
        let (y, stats) = tape.batchnorm_train(x, gamma, beta, 1e-12).unwrap();
        let out = tape.value(y);
        for c in 0..2 {
            let col: alloc::vec::Vec<f64> = (0..4).map(|i| out.at2(i, c)).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
        }
        assert!((stats.mean[0] - 2.5).abs() < 1e-12);
        assert!((stats.mean[1] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_needs_two_samples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 3, 1]));
        let gamma = tape.constant(t1(&[1.0, 1.0, 1.0]));
        let beta = tape.constant(t1(&[0.0, 0.0, 0.0]));
        assert!(tape.batchnorm_train(x, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn batchnorm_infer_is_deterministic_affine() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let gamma = tape.constant(t1(&[2.0, 0.5]));
        let beta = tape.constant(t1(&[1.0, -1.0]));
        let y1 = tape
            .batchnorm_infer(x, gamma, beta, &[0.0, 0.0], &[1.0, 1.0], 0.0)
            .unwrap();
        let y2 = tape
            .batchnorm_infer(x, gamma, beta, &[0.0, 0.0], &[1.0, 1.0], 0.0)
            .unwrap();
        assert_eq!(tape.value(y1).data(), tape.value(y2).data());
        assert_eq!(tape.value(y1).data(), &[3., 0., 7., 1.]);
    }

    #[test]
    fn zero_lr_style_identities() {
        // broadcast of scalar 0 under add and scalar 1 under mul are identities
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1.5, -2.5, 3.5]));
        let a = tape.add_scalar(x, 0.0).unwrap();
        let m = tape.mul_scalar(x, 1.0).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(x).data());
        assert_eq!(tape.value(m).data(), tape.value(x).data());
    }

    #[test]
    fn repeat_rows_and_backward_group_sum() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let r = tape.repeat_rows(x, 3).unwrap();
        assert_eq!(tape.value(r).shape(), &[6, 2]);
        let s = tape.sum(r).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3., 3., 3., 3.]);
    }

    #[test]
    fn last_step_picks_final_position() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let h = tape.last_step(x).unwrap();
        assert_eq!(tape.value(h).data(), &[3., 6.]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(t1(&[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }
}
