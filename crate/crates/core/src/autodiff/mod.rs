//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] evaluates eagerly, stores its output and
//! appends a node that remembers its parents. Nodes are only ever appended,
//! so parents always precede children and a single reverse sweep visits each
//! node once. [`Tape::backward`] adds parameter gradients into the
//! [`ParamStore`]; gradients accumulate until [`ParamStore::zero_grad`].

mod kernels;

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::shift::{self, ShiftGroup, ShiftSpec};
use crate::tensor::Tensor;

pub use kernels::ConvGeometry;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined differentiable operation.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// One gradient per input, each shaped like that input.
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MulBroadcast { x: Var, g: Var },
    Gelu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: kernels::LayerNormStats },
    MeanPool(Var),
    DepthwiseConv { x: Var, k: Var, b: Var },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Shift { x: Var, dims: [usize; 5], groups: Vec<ShiftGroup> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Bmm(Var, Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl fmt::Debug for kernels::LayerNormStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LayerNormStats({} rows)", self.mean.len())
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Per-node gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter onto the tape; repeated loads return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `y = x w + b` over the trailing axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
        )?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &parents))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Multiplies `x: [N, .., C]` by `g: [N, K]` broadcast over every middle
    /// axis, with `K == C` (per-channel gate) or `K == 1` (per-sample mask).
    pub fn mul_broadcast(&mut self, x: Var, g: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(g));
        let (n, c) = (tx.shape()[0], tx.last_dim());
        let k = match tg.shape() {
            &[gn, k] if gn == n && (k == c || k == 1) => k,
            s => return Err(Error::dim("mul_broadcast", tx.shape(), s)),
        };
        let per_sample = tx.len() / n;
        let mut out = tx.clone();
        for (xb, gb) in out
            .data_mut()
            .chunks_mut(per_sample)
            .zip(tg.data().chunks(k))
        {
            if k == 1 {
                xb.iter_mut().for_each(|v| *v *= gb[0]);
            } else {
                for row in xb.chunks_mut(c) {
                    row.iter_mut().zip(gb).for_each(|(v, &s)| *v *= s);
                }
            }
        }
        Ok(self.push(out, Op::MulBroadcast { x, g }, &[x, g]))
    }

    /// GELU, tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let out = kernels::softmax_forward(t, axis);
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalizes every token over the trailing axis, then applies the
    /// per-channel affine `gamma, beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (out, stats) =
            kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean over all positions: `[N, .., C] -> [N, C]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::pool_mean_forward(self.value(x))?;
        Ok(self.push(out, Op::MeanPool(x), &[x]))
    }

    /// `[N, T, H, W, C] -> [N, 1, 1, 1, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, .., c] = self.value(x).dims5()?;
        let pooled = self.mean_pool(x)?;
        self.reshape(pooled, &[n, 1, 1, 1, c])
    }

    /// Per-frame depthwise convolution with a `[k, k, C]` kernel, stride 1
    /// and zero padding `k / 2`.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        kernel_size: usize,
    ) -> Result<Var> {
        let ks = self.value(kernel).shape();
        if ks.len() != 3 || ks[0] != kernel_size || ks[1] != kernel_size {
            return Err(Error::Config(format!(
                "depthwise kernel shape {ks:?} does not match configured size {kernel_size}"
            )));
        }
        let out = kernels::dwconv_forward(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(
            out,
            Op::DepthwiseConv {
                x,
                k: kernel,
                b: bias,
            },
            &[x, kernel, bias],
        ))
    }

    /// Channels-last cross-correlation of `x: [N, T, H, W, Cin]` with
    /// `w: [kt, kh, kw, Cin, Cout]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let out =
            kernels::conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, geom }, &parents))
    }

    pub fn shift(&mut self, x: Var, spec: &ShiftSpec) -> Result<Var> {
        let out = shift::shift(self.value(x), spec)?;
        let dims = out.dims5()?;
        let groups = spec.partition()?;
        Ok(self.push(out, Op::Shift { x, dims, groups }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(x), perm)?;
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::bmm_forward(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Bmm(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum() as f32);
        self.push(out, Op::Sum(x), &[x])
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, k) = match t.shape() {
            &[n, k] => (n, k),
            s => return Err(Error::Shape(format!("cross_entropy expects [N, K], got {s:?}"))),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels (max class {k}) for logits {:?}",
                labels.len(),
                t.shape()
            )));
        }
        let mut total = 0f64;
        for (row, &label) in t.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            total += lse - row[label] as f64;
        }
        let out = Tensor::scalar((total / n as f64) as f32);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        ))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var, params: &mut ParamStore) -> Result<Gradients> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                t.shape()
            )));
        }
        self.backward_with_grad(loss, Tensor::full(t.shape(), 1.0)?, params)
    }

    /// Vector-Jacobian product: back-propagates `seed` (shaped like
    /// `output`) to every node and parameter.
    pub fn backward_with_grad(
        &self,
        output: Var,
        seed: Tensor,
        params: &mut ParamStore,
    ) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(Error::dim("backward seed", self.shape(output), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.node_vjp(node, &g, &mut grads, params)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn node_vjp(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParamStore,
    ) -> Result<()> {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params.accumulate_grad(*id, g),
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = kernels::linear_backward(self.value(*x), self.value(*w), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, tb, |g, y| g * y);
                let gb = zip_map(g, ta, |g, x| g * x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::MulBroadcast { x, g: gate } => {
                let (tx, tg) = (self.value(*x), self.value(*gate));
                let (n, c) = (tx.shape()[0], tx.last_dim());
                let k = tg.last_dim();
                let per_sample = tx.len() / n;
                let mut gx = g.clone();
                let mut gg = vec![0f64; n * k];
                for (b, (gxb, xb)) in gx
                    .data_mut()
                    .chunks_mut(per_sample)
                    .zip(tx.data().chunks(per_sample))
                    .enumerate()
                {
                    let gate_row = &tg.data()[b * k..(b + 1) * k];
                    let acc = &mut gg[b * k..(b + 1) * k];
                    for (grow, xrow) in gxb.chunks_mut(c).zip(xb.chunks(c)) {
                        for ch in 0..c {
                            let kk = if k == 1 { 0 } else { ch };
                            acc[kk] += grow[ch] as f64 * xrow[ch] as f64;
                            grow[ch] *= gate_row[kk];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gate, kernels::to_f32_tensor(tg.shape(), &gg));
            }
            Op::Gelu(x) => {
                let gx = zip_map(g, self.value(*x), |g, x| g * kernels::gelu_grad(x));
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(g, &node.value, |g, y| g * y * (1.0 - y));
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                self.accumulate(grads, *x, kernels::softmax_backward(&node.value, g, *axis));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (gx, gg, gb) =
                    kernels::layer_norm_backward(self.value(*x), self.value(*gamma), stats, g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::MeanPool(x) => {
                self.accumulate(grads, *x, kernels::pool_mean_backward(self.shape(*x), g));
            }
            Op::DepthwiseConv { x, k, b } => {
                let (gx, gk, gb) = kernels::dwconv_backward(self.value(*x), self.value(*k), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *b, gb);
            }
            Op::Conv { x, w, b, geom } => {
                let (gx, gw, gb) =
                    kernels::conv_backward(self.value(*x), self.value(*w), geom, g)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Shift { x, dims, groups } => {
                self.accumulate(grads, *x, shift::translate_groups(g, *dims, groups, -1));
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Permute { x, perm } => {
                let gx = kernels::permute(g, &kernels::inverse_permutation(perm))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Bmm(a, b) => {
                let (ga, gb) = kernels::bmm_backward(self.value(*a), self.value(*b), g);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.shape(*x), g.data()[0])?;
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy { logits, labels } => {
                let t = self.value(*logits);
                let probs = kernels::softmax_forward(t, 1);
                let k = t.last_dim();
                let scale = g.data()[0] as f64 / labels.len() as f64;
                let mut gx = probs;
                for (row, &label) in gx.data_mut().chunks_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v = (*v as f64 * scale) as f32);
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.vjp(&values, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Usage(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if gv.shape() != self.shape(v) {
                        return Err(Error::dim("custom vjp", self.shape(v), gv.shape()));
                    }
                    self.accumulate(grads, v, gv);
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests;
