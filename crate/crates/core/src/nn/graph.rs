//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters
//! enter through [`Graph::bind`], which returns a [`BoundParams`] handle used
//! later to route gradients back into the owning [`ParamSet`].

use indexmap::IndexMap;

use super::functional::{self, info_nce_row, log_sum_exp, normalize_into};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{ensure_finite, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a 3x3, padding-1 convolution lowered to a matrix product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub const KERNEL: usize = 3;
    pub const PAD: usize = 1;

    pub fn out_height(&self) -> usize {
        (self.height + 2 * Self::PAD - Self::KERNEL) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * Self::PAD - Self::KERNEL) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        Self::KERNEL * Self::KERNEL * self.channels
    }

    /// Visits every (patch element, input element) pair that falls inside
    /// the padded image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (ho, wo) = (self.out_height(), self.out_width());
        let patch = self.patch_len();
        for b in 0..self.batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (b * ho + oy) * wo + ox;
                    for ky in 0..Self::KERNEL {
                        let iy = (oy * self.stride + ky) as isize - Self::PAD as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for kx in 0..Self::KERNEL {
                            let ix = (ox * self.stride + kx) as isize - Self::PAD as isize;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            let src = ((b * self.height + iy as usize) * self.width + ix as usize)
                                * self.channels;
                            let col = (ky * Self::KERNEL + kx) * self.channels;
                            for c in 0..self.channels {
                                f(row * patch + col + c, src + c);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    Reshape(Var),
    Im2Col { x: Var, geom: ConvGeometry },
    Sum(Var),
    Scale(Var, f64),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    InfoNce(Box<InfoNceTape>),
}

#[derive(Debug)]
struct InfoNceTape {
    q: Var,
    k: Var,
    negatives: Vec<f64>,
    /// Row-major `batch x negatives` keep mask.
    keep: Vec<bool>,
    temperature: f64,
    p_pos: Vec<f64>,
    /// Per-row probabilities of the kept negatives, in order.
    p_neg: Vec<Vec<f64>>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of a forward computation.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

/// Mapping from parameter names to the graph leaves they were bound to.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }
}

/// Gradients of a scalar loss with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of bound parameters into `params`. Parameters the
    /// loss does not depend on receive an explicit zero gradient.
    pub fn accumulate_into(&self, bound: &BoundParams, params: &mut ParamSet) -> Result<()> {
        for (name, tensor) in params.iter_mut() {
            let var = bound.var(name)?;
            match self.get(var) {
                Some(g) => {
                    ensure_finite(&format!("gradient of `{name}`"), g)?;
                    tensor.accumulate_grad(g)?;
                }
                None => tensor.ensure_grad(),
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

/// `c = a * b + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths were checked against the logical extents above,
    // and strides describe in-bounds row-major or transposed views of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// A graph whose results can be differentiated.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A forward-only graph; [`Graph::backward`] is rejected.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, what: &str, value: Tensor, op: Op) -> Result<Var> {
        ensure_finite(what, value.data())?;
        Ok(self.push(value, op))
    }

    /// Constant input; no gradient is routed anywhere from it.
    pub fn input(&mut self, mut value: Tensor) -> Var {
        value.clear_grad();
        self.push(value, Op::Input)
    }

    pub fn bind(&mut self, params: &ParamSet) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let mut v = t.clone();
                v.clear_grad();
                (name.to_string(), self.push(v, Op::Param))
            })
            .collect();
        BoundParams { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims()?;
        let (k2, n) = self.value(b).matrix_dims()?;
        if k != k2 {
            return Err(Error::Contract(format!(
                "matmul of {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push_checked("matmul", value, Op::MatMul(a, b))
    }

    /// Adds a length-`n` bias to each row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims()?;
        if self.value(bias).numel() != n {
            return Err(Error::Contract(format!(
                "bias of length {} for {m}x{n} input",
                self.value(bias).numel()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push_checked("add_bias", value, Op::AddBias(x, bias))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let out = src.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Relu(x)))
    }

    /// Scales each row of a matrix to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let mut norms = Vec::with_capacity(m);
        for (row, dst) in src.chunks(n).zip(out.chunks_mut(n)) {
            norms.push(normalize_into(row, dst));
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push_checked("l2_normalize", value, Op::L2Normalize { x, norms })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Lowers a `B x H x W x C` batch to `(B·Ho·Wo) x (9·C)` patches for a
    /// 3x3 convolution with zero padding 1.
    pub fn im2col(&mut self, x: Var, stride: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let &[batch, height, width, channels] = shape.as_slice() else {
            return Err(Error::Contract(format!("im2col expects BxHxWxC, got {shape:?}")));
        };
        if stride == 0 {
            return Err(Error::Contract("im2col stride must be positive".into()));
        }
        let geom = ConvGeometry {
            batch,
            height,
            width,
            channels,
            stride,
        };
        let rows = batch * geom.out_height() * geom.out_width();
        let mut out = vec![0.0; rows * geom.patch_len()];
        let src = self.value(x).data();
        geom.for_each_tap(|dst, s| out[dst] = src[s]);
        let value = Tensor::new(vec![rows, geom.patch_len()], out)?;
        Ok(self.push(value, Op::Im2Col { x, geom }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(total), Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let src = self.value(x);
        let out = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        self.push_checked("scale", value, Op::Scale(x, factor))
    }

    /// Mean softmax cross-entropy of `B x C` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).matrix_dims()?;
        if labels.len() != b {
            return Err(Error::Contract(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} outside [0, {c})")));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for ((row, p), &y) in data.chunks(c).zip(probs.chunks_mut(c)).zip(labels) {
            let lse = log_sum_exp(row);
            total += lse - row[y];
            p.iter_mut().zip(row).for_each(|(pi, l)| *pi = (l - lse).exp());
        }
        let value = Tensor::scalar(total / b as f64);
        self.push_checked(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean InfoNCE over a batch of queries.
    ///
    /// `q` and `k` are `B x d` unit rows; `negatives` is a row-major `K x d`
    /// constant matrix and `keep` a `B x K` mask selecting which negatives
    /// enter each row's denominator.
    pub fn info_nce(
        &mut self,
        q: Var,
        k: Var,
        negatives: Vec<f64>,
        keep: Vec<bool>,
        temperature: f64,
    ) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        let (b, d) = self.value(q).matrix_dims()?;
        if self.value(k).shape() != [b, d] {
            return Err(Error::Contract(format!(
                "query shape {:?} vs key shape {:?}",
                [b, d],
                self.value(k).shape()
            )));
        }
        if !negatives.len().is_multiple_of(d) {
            return Err(Error::Contract(format!(
                "negatives of length {} are not rows of width {d}",
                negatives.len()
            )));
        }
        let n_neg = negatives.len() / d;
        if keep.len() != b * n_neg {
            return Err(Error::Contract(format!(
                "mask of length {} for {b} queries and {n_neg} negatives",
                keep.len()
            )));
        }
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let mut total = 0.0;
        let mut p_pos = Vec::with_capacity(b);
        let mut p_neg = Vec::with_capacity(b);
        for i in 0..b {
            let mask = &keep[i * n_neg..(i + 1) * n_neg];
            let kept = negatives
                .chunks(d)
                .zip(mask)
                .filter_map(|(n, &keep)| keep.then_some(n));
            let row = info_nce_row(&qd[i * d..(i + 1) * d], &kd[i * d..(i + 1) * d], kept, temperature);
            total += row.loss;
            p_pos.push(row.p_pos);
            p_neg.push(row.p_neg);
        }
        let value = Tensor::scalar(total / b as f64);
        let tape = InfoNceTape {
            q,
            k,
            negatives,
            keep,
            temperature,
            p_pos,
            p_neg,
        };
        self.push_checked("info_nce", value, Op::InfoNce(Box::new(tape)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Usage(
                "backward called on a graph recorded without gradients".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss does not belong to this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, (n, 1), bv.data(), (1, n), &mut da, 0.0);
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), (1, k), g, (n, 1), &mut db, 0.0);
                add_into(&mut grads[a.0], &da);
                add_into(&mut grads[b.0], &db);
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).numel();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                add_into(&mut grads[x.0], g);
                add_into(&mut grads[bias.0], &db);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let n = node.value.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for (((yr, gr), dr), norm) in y
                    .chunks(n)
                    .zip(g.chunks(n))
                    .zip(dx.chunks_mut(n))
                    .zip(norms)
                {
                    let proj = functional::dot(yr, gr);
                    for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / norm;
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Im2Col { x, geom } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                geom.for_each_tap(|col, src| dx[src] += g[col]);
                add_into(&mut grads[x.0], &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).numel()];
                add_into(&mut grads[x.0], &dx);
            }
            Op::Scale(x, factor) => {
                let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dx = probs.clone();
                for (row, &y) in dx.chunks_mut(c).zip(labels) {
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                add_into(&mut grads[logits.0], &dx);
            }
            Op::InfoNce(tape) => {
                let qv = self.value(tape.q).data();
                let kv = self.value(tape.k).data();
                let d = self.value(tape.q).shape()[1];
                let b = tape.p_pos.len();
                let n_neg = tape.keep.len() / b;
                let scale = g[0] / (b as f64 * tape.temperature);
                let mut dq = vec![0.0; b * d];
                let mut dk = vec![0.0; b * d];
                for i in 0..b {
                    let coef = tape.p_pos[i] - 1.0;
                    let qi = &qv[i * d..(i + 1) * d];
                    let ki = &kv[i * d..(i + 1) * d];
                    let dqi = &mut dq[i * d..(i + 1) * d];
                    dqi.iter_mut().zip(ki).for_each(|(o, kx)| *o = coef * kx);
                    let mask = &tape.keep[i * n_neg..(i + 1) * n_neg];
                    let kept = tape
                        .negatives
                        .chunks(d)
                        .zip(mask)
                        .filter_map(|(n, &keep)| keep.then_some(n));
                    for (neg, p) in kept.zip(&tape.p_neg[i]) {
                        dqi.iter_mut().zip(neg).for_each(|(o, nx)| *o += p * nx);
                    }
                    dqi.iter_mut().for_each(|o| *o *= scale);
                    dk[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(qi)
                        .for_each(|(o, qx)| *o = coef * qx * scale);
                }
                add_into(&mut grads[tape.q.0], &dq);
                add_into(&mut grads[tape.k.0], &dk);
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}
