//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op in creation order, so the tape is already a
//! topological order of the computation. [`Graph::backward`] walks it in
//! reverse once, accumulating vector-Jacobian products into the inputs of
//! each node that carries gradient tracking.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvDims, View};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis over which [`Graph::norm`] computes its moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// Each row of a `C × L` tensor is normalized over its `L` positions.
    Time,
    /// Each column of a `C × L` tensor is normalized over its `C` features.
    Feature,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        dims: ConvDims,
        padded: Vec<f64>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose(Var),
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Sin(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Norm {
        x: Var,
        gain: Var,
        shift: Var,
        axis: NormAxis,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d { input, kernels, bias, .. } => vec![*input, *kernels, *bias],
            Op::Dense { input, weights, bias } => vec![*input, *weights, *bias],
            Op::MatMul { a, b } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Norm { x, gain, shift, .. } => vec![*x, *gain, *shift],
            Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Sin(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Slice { x, .. }
            | Op::Affine { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Computation graph recording values and ops for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rank_check(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::RankMismatch {
            op,
            expected: rank,
            found: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn dim_check(op: &'static str, dim: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: dim.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Shape of a broadcast binary op, or `None` when the operands are incompatible.
fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    if a.shape() == b.shape() {
        Some(a.shape().to_vec())
    } else if b.len() == 1 {
        Some(a.shape().to_vec())
    } else if a.len() == 1 {
        Some(b.shape().to_vec())
    } else {
        None
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, delta: &[f64]) {
    match acc {
        Some(buf) => buf.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *acc = Some(delta.to_vec()),
    }
}

/// Reduces a broadcast gradient back onto an operand of `len` elements.
fn reduce_to(grad: &[f64], len: usize) -> Vec<f64> {
    if grad.len() == len {
        grad.to_vec()
    } else {
        vec![grad.iter().sum()]
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. `requires_grad` leaves receive a gradient on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn get(&self, var: Var) -> Result<&Tensor> {
        self.nodes
            .get(var.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownVar(var.0))
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: name, index });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 1-D convolution (cross-correlation) of `input: C_in × L` with
    /// `kernels: C_out × C_in × K` plus a per-output-channel bias.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        const OP: &str = "conv1d";
        let (x, w, b) = (self.get(input)?, self.get(kernels)?, self.get(bias)?);
        rank_check(OP, x, 2)?;
        rank_check(OP, w, 3)?;
        rank_check(OP, b, 1)?;
        dim_check(OP, "input channels (kernel dim 1)", x.shape()[0], w.shape()[1])?;
        dim_check(OP, "bias length (kernel dim 0)", w.shape()[0], b.shape()[0])?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "stride must be at least 1".into(),
            });
        }
        let dims = ConvDims {
            c_in: x.shape()[0],
            c_out: w.shape()[0],
            len: x.shape()[1],
            k: w.shape()[2],
            padding,
            stride,
        };
        if dims.k == 0 || dims.k > dims.padded_len() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!(
                    "kernel size {} exceeds padded length {}",
                    dims.k,
                    dims.padded_len()
                ),
            });
        }
        let padded = kernels::pad(x.data(), &dims);
        let out = kernels::conv1d_forward(&padded, w.data(), b.data(), &dims);
        let value = Tensor::new(vec![dims.c_out, dims.out_len()], out)?;
        self.push(
            OP,
            Op::Conv1d {
                input,
                kernels,
                bias,
                dims,
                padded,
            },
            value,
        )
    }

    /// Affine map `W·x + b`. `input` is either a vector `[d]` or a `d × L`
    /// matrix whose columns are mapped independently.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (x, w, b) = (self.get(input)?, self.get(weights)?, self.get(bias)?);
        rank_check(OP, w, 2)?;
        rank_check(OP, b, 1)?;
        let (h, d) = (w.shape()[0], w.shape()[1]);
        let (xd, cols) = match x.rank() {
            1 => (x.shape()[0], 1),
            2 => (x.shape()[0], x.shape()[1]),
            _ => {
                return Err(TensorError::RankMismatch {
                    op: OP,
                    expected: 2,
                    found: x.shape().to_vec(),
                })
            }
        };
        dim_check(OP, "input features (weight dim 1)", d, xd)?;
        dim_check(OP, "bias length (weight dim 0)", h, b.shape()[0])?;
        let mut out = vec![0.0; h * cols];
        for (i, row) in out.chunks_mut(cols).enumerate() {
            row.fill(b.data()[i]);
        }
        kernels::gemm(
            h,
            d,
            cols,
            1.0,
            w.data(),
            View::row_major(d),
            x.data(),
            View::row_major(cols),
            1.0,
            &mut out,
            View::row_major(cols),
        );
        let shape = if x.rank() == 1 { vec![h] } else { vec![h, cols] };
        let value = Tensor::new(shape, out)?;
        self.push(OP, Op::Dense { input, weights, bias }, value)
    }

    /// Matrix product of `a: m × k` with `b: k × n` or a vector `b: [k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        rank_check(OP, ta, 2)?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let n = match tb.rank() {
            1 => 1,
            2 => tb.shape()[1],
            _ => {
                return Err(TensorError::RankMismatch {
                    op: OP,
                    expected: 2,
                    found: tb.shape().to_vec(),
                })
            }
        };
        dim_check(OP, "inner dimension", k, tb.shape()[0])?;
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            View::row_major(k),
            tb.data(),
            View::row_major(n),
            0.0,
            &mut out,
            View::row_major(n),
        );
        let shape = if tb.rank() == 1 { vec![m] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        self.push(OP, Op::MatMul { a, b }, value)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.transpose()?;
        self.push("transpose", Op::Transpose(x), value)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.get(x)?.reshape(shape)?;
        self.push("reshape", Op::Reshape(x), value)
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        const OP: &str = "slice";
        let t = self.get(x)?;
        if axis >= t.rank() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("axis {axis} out of range for shape {:?}", t.shape()),
            });
        }
        let dim = t.shape()[axis];
        if start + len > dim {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: format!("axis {axis}"),
                expected: start + len,
                found: dim,
            });
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        self.push(OP, Op::Slice { x, axis, start }, value)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.map(|v| v.max(0.0));
        self.push("relu", Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.map(sigmoid);
        self.push("sigmoid", Op::Sigmoid(x), value)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.map(f64::sin);
        self.push("sin", Op::Sin(x), value)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.map(|v| v * v);
        self.push("square", Op::Square(x), value)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.get(x)?.data().iter().sum());
        self.push("sum", Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        if t.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "mean of an empty tensor".into(),
            });
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push("mean", Op::Mean(x), value)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        let shape = broadcast_shape(ta, tb).ok_or_else(|| TensorError::Incompatible {
            op: name,
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let out = (0..n).map(|i| f(pick(da, i), pick(db, i))).collect();
        Tensor::new(shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", Op::Mul(a, b), value)
    }

    /// `scale · x`.
    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let value = self.get(x)?.map(|v| scale * v + offset);
        self.push("affine", Op::Affine { x, scale }, value)
    }

    /// Normalizes a `C × L` tensor to zero mean and unit (biased) variance
    /// along `axis`, then applies the per-row `gain` and `shift`.
    pub fn norm(&mut self, x: Var, gain: Var, shift: Var, axis: NormAxis, epsilon: f64) -> Result<Var> {
        const OP: &str = "norm";
        let (t, g, s) = (self.get(x)?, self.get(gain)?, self.get(shift)?);
        rank_check(OP, t, 2)?;
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        dim_check(OP, "gain length (input dim 0)", rows, g.len())?;
        dim_check(OP, "shift length (input dim 0)", rows, s.len())?;
        if !(epsilon >= 0.0) {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("epsilon must be non-negative, got {epsilon}"),
            });
        }
        let group = match axis {
            NormAxis::Time => cols,
            NormAxis::Feature => rows,
        };
        if group < 2 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("normalization needs at least 2 positions, got {group}"),
            });
        }
        let data = t.data();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std;
        match axis {
            NormAxis::Time => {
                inv_std = vec![0.0; rows];
                for r in 0..rows {
                    let row = &data[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + epsilon).sqrt();
                    inv_std[r] = inv;
                    for c in 0..cols {
                        xhat[r * cols + c] = (row[c] - mean) * inv;
                    }
                }
            }
            NormAxis::Feature => {
                inv_std = vec![0.0; cols];
                let mut mean = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        mean[c] += data[r * cols + c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        var[c] += (data[r * cols + c] - mean[c]).powi(2);
                    }
                }
                for c in 0..cols {
                    inv_std[c] = 1.0 / (var[c] / rows as f64 + epsilon).sqrt();
                }
                for r in 0..rows {
                    for c in 0..cols {
                        xhat[r * cols + c] = (data[r * cols + c] - mean[c]) * inv_std[c];
                    }
                }
            }
        }
        let (gd, sd) = (g.data(), s.data());
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| gd[i / cols] * v + sd[i / cols])
            .collect();
        let value = Tensor::new(vec![rows, cols], out)?;
        self.push(
            OP,
            Op::Norm {
                x,
                gain,
                shift,
                axis,
                xhat,
                inv_std,
            },
            value,
        )
    }

    /// Per-channel normalization over the temporal axis of a `C × L` tensor.
    pub fn seq_norm(&mut self, x: Var, gain: Var, shift: Var, epsilon: f64) -> Result<Var> {
        self.norm(x, gain, shift, NormAxis::Time, epsilon)
    }

    /// Inverted dropout: each element is zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`. Identity outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_rate(rate)?;
        let len = self.get(x)?.len();
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.apply_mask(x, mask)
    }

    /// Inverted dropout with one draw per row of a `C × L` tensor, so a
    /// dropped channel is silent at every position.
    pub fn dropout_rows<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_rate(rate)?;
        let t = self.get(x)?;
        rank_check("dropout_rows", t, 2)?;
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut mask = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let m = if rng.random::<f64>() < rate { 0.0 } else { keep };
            mask.extend(std::iter::repeat_n(m, cols));
        }
        self.apply_mask(x, mask)
    }

    fn apply_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.get(x)?;
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("dropout", Op::Dropout { x, mask }, value)
    }

    /// Reverse-mode pass from a scalar `loss`. Every gradient-tracked leaf
    /// receives a gradient of its own shape (zeros when unreachable).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.get(loss)?;
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for input in node.op.inputs() {
                if input.0 >= i {
                    return Err(TensorError::CycleDetected { node: i, input: input.0 });
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => Some(
                    Tensor::new(
                        node.value.shape().to_vec(),
                        g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                    )
                    .expect("gradient shape matches leaf"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernels,
                bias,
                dims,
                padded,
            } => {
                let (dx, dw, db) = kernels::conv1d_backward(padded, val(kernels).data(), g, dims);
                if wants(input) {
                    add_into(&mut grads[input.0], &dx);
                }
                if wants(kernels) {
                    add_into(&mut grads[kernels.0], &dw);
                }
                if wants(bias) {
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::Dense { input, weights, bias } => {
                let (x, w) = (val(input), val(weights));
                let (h, d) = (w.shape()[0], w.shape()[1]);
                let cols = if x.rank() == 1 { 1 } else { x.shape()[1] };
                if wants(input) {
                    let mut dx = vec![0.0; d * cols];
                    kernels::gemm(
                        d,
                        h,
                        cols,
                        1.0,
                        w.data(),
                        View::transposed(d),
                        g,
                        View::row_major(cols),
                        0.0,
                        &mut dx,
                        View::row_major(cols),
                    );
                    add_into(&mut grads[input.0], &dx);
                }
                if wants(weights) {
                    let mut dw = vec![0.0; h * d];
                    kernels::gemm(
                        h,
                        cols,
                        d,
                        1.0,
                        g,
                        View::row_major(cols),
                        x.data(),
                        View::transposed(cols),
                        0.0,
                        &mut dw,
                        View::row_major(d),
                    );
                    add_into(&mut grads[weights.0], &dw);
                }
                if wants(bias) {
                    let db: Vec<f64> = g.chunks(cols).map(|r| r.iter().sum()).collect();
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = if tb.rank() == 1 { 1 } else { tb.shape()[1] };
                if wants(a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(
                        m,
                        n,
                        k,
                        1.0,
                        g,
                        View::row_major(n),
                        tb.data(),
                        View::transposed(n),
                        0.0,
                        &mut da,
                        View::row_major(k),
                    );
                    add_into(&mut grads[a.0], &da);
                }
                if wants(b) {
                    let mut dbv = vec![0.0; k * n];
                    kernels::gemm(
                        k,
                        m,
                        n,
                        1.0,
                        ta.data(),
                        View::transposed(k),
                        g,
                        View::row_major(n),
                        0.0,
                        &mut dbv,
                        View::row_major(n),
                    );
                    add_into(&mut grads[b.0], &dbv);
                }
            }
            Op::Transpose(x) => {
                if wants(x) {
                    let out = &node.value;
                    let gt = Tensor::new(out.shape().to_vec(), g.to_vec())
                        .and_then(|t| t.transpose())
                        .expect("transpose of a rank-2 gradient");
                    add_into(&mut grads[x.0], gt.data());
                }
            }
            Op::Reshape(x) => {
                if wants(x) {
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::Slice { x, axis, start } => {
                if wants(x) {
                    let src = val(x);
                    let dim = src.shape()[*axis];
                    let len = node.value.shape()[*axis];
                    let outer: usize = src.shape()[..*axis].iter().product();
                    let inner: usize = src.shape()[*axis + 1..].iter().product();
                    let mut dx = vec![0.0; src.len()];
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        let srcg = o * len * inner;
                        dx[dst..dst + len * inner].copy_from_slice(&g[srcg..srcg + len * inner]);
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Relu(x) => {
                if wants(x) {
                    let dx: Vec<f64> = val(x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                        .collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Sigmoid(x) => {
                if wants(x) {
                    let dx: Vec<f64> = node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&s, &gi)| gi * s * (1.0 - s))
                        .collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Sin(x) => {
                if wants(x) {
                    let dx: Vec<f64> = val(x).data().iter().zip(g).map(|(&v, &gi)| gi * v.cos()).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Square(x) => {
                if wants(x) {
                    let dx: Vec<f64> = val(x).data().iter().zip(g).map(|(&v, &gi)| 2.0 * v * gi).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Sum(x) => {
                if wants(x) {
                    add_into(&mut grads[x.0], &vec![g[0]; val(x).len()]);
                }
            }
            Op::Mean(x) => {
                if wants(x) {
                    let n = val(x).len();
                    add_into(&mut grads[x.0], &vec![g[0] / n as f64; n]);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    add_into(&mut grads[a.0], &reduce_to(g, val(a).len()));
                }
                if wants(b) {
                    let gb: Vec<f64> = g.iter().map(|v| sign * v).collect();
                    add_into(&mut grads[b.0], &reduce_to(&gb, val(b).len()));
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(a).data(), val(b).data());
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                if wants(a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(db, i)).collect();
                    add_into(&mut grads[a.0], &reduce_to(&ga, da.len()));
                }
                if wants(b) {
                    let gb: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(da, i)).collect();
                    add_into(&mut grads[b.0], &reduce_to(&gb, db.len()));
                }
            }
            Op::Affine { x, scale } => {
                if wants(x) {
                    let dx: Vec<f64> = g.iter().map(|v| scale * v).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Norm {
                x,
                gain,
                shift,
                axis,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = (node.value.shape()[0], node.value.shape()[1]);
                let gd = val(gain).data();
                if wants(x) {
                    let mut dx = vec![0.0; rows * cols];
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * gd[i / cols]).collect();
                    match axis {
                        NormAxis::Time => {
                            let n = cols as f64;
                            for r in 0..rows {
                                let span = r * cols..(r + 1) * cols;
                                let s1: f64 = dxhat[span.clone()].iter().sum();
                                let s2: f64 = dxhat[span.clone()].iter().zip(&xhat[span.clone()]).map(|(a, b)| a * b).sum();
                                for i in span {
                                    dx[i] = inv_std[r] / n * (n * dxhat[i] - s1 - xhat[i] * s2);
                                }
                            }
                        }
                        NormAxis::Feature => {
                            let n = rows as f64;
                            let mut s1 = vec![0.0; cols];
                            let mut s2 = vec![0.0; cols];
                            for r in 0..rows {
                                for c in 0..cols {
                                    let i = r * cols + c;
                                    s1[c] += dxhat[i];
                                    s2[c] += dxhat[i] * xhat[i];
                                }
                            }
                            for r in 0..rows {
                                for c in 0..cols {
                                    let i = r * cols + c;
                                    dx[i] = inv_std[c] / n * (n * dxhat[i] - s1[c] - xhat[i] * s2[c]);
                                }
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if wants(gain) {
                    let dg: Vec<f64> = (0..rows)
                        .map(|r| (0..cols).map(|c| g[r * cols + c] * xhat[r * cols + c]).sum())
                        .collect();
                    add_into(&mut grads[gain.0], &dg);
                }
                if wants(shift) {
                    let ds: Vec<f64> = g.chunks(cols).map(|r| r.iter().sum()).collect();
                    add_into(&mut grads[shift.0], &ds);
                }
            }
            Op::Dropout { x, mask } => {
                if wants(x) {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            reason: format!("rate must lie in [0, 1), got {rate}"),
        });
    }
    Ok(())
}
