//! Primitive set: forward values and adjoint rules.

use std::sync::Arc;

use super::scalar::Scalar;
use super::tensor::{numel, Tensor};

pub type NodeId = usize;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1/sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Debug)]
pub enum Op {
    /// Trainable leaf; the payload is the parameter's position in the record.
    Param(usize),
    Constant,
    /// `[.., m, k] x [.., k, n]`, or `[.., m, k] x [k, n]` with the right
    /// operand shared across the batch.
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a vector along the last axis of every row.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    /// Softmax over the last axis. With `causal`, the last two axes must be
    /// square and entries above the diagonal get probability exactly zero.
    Softmax {
        x: NodeId,
        causal: bool,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    Embedding {
        table: NodeId,
        indices: Arc<[usize]>,
    },
    Reshape(NodeId),
    Transpose(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    /// Mean over rows of `logsumexp(z) - z[target]`.
    CrossEntropy {
        logits: NodeId,
        targets: Arc<[usize]>,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::Softmax { x, .. }
            | Op::Reshape(x)
            | Op::Transpose(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Reshape(_) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

// c[m,n] += a[m,k] b[k,n]
fn gemm<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

// c[m,k] += g[m,n] b[k,n]^T
fn gemm_nt<S: Scalar>(g: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            c[i * k + p] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T g[m,n]
fn gemm_tn<S: Scalar>(a: &[S], g: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += aip * gv;
            }
        }
    }
}

pub(crate) struct MatMulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(MatMulDims, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return None;
    }
    let lead = &a[..a.len() - 2];
    let shared_rhs = b.len() == 2;
    if !shared_rhs && b[..b.len() - 2] != *lead {
        return None;
    }
    let mut out = lead.to_vec();
    out.extend([m, n]);
    Some((
        MatMulDims {
            batch: numel(lead),
            m,
            k,
            n,
            shared_rhs,
        },
        out,
    ))
}

pub(crate) fn transpose_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn transpose_data<S: Scalar>(x: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let in_shape = x.shape();
    let out_shape = transpose_shape(in_shape, perm);
    let in_strides = strides(in_shape);
    // stride in the input for each output axis
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    let xd = x.data();
    for _ in 0..n {
        out.push(xd[offset]);
        // odometer increment over output axes
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            offset += src[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("transpose preserves element count")
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[inline]
fn gelu<S: Scalar>(x: S) -> S {
    x * (S::one() + x.scale(FRAC_1_SQRT_2).erf()).scale(0.5)
}

#[inline]
fn gelu_prime<S: Scalar>(x: S) -> S {
    let cdf = (S::one() + x.scale(FRAC_1_SQRT_2).erf()).scale(0.5);
    let pdf = (-(x * x).scale(0.5)).exp().scale(INV_SQRT_2PI);
    cdf + x * pdf
}

/// Row length and number of active entries for row `r` of a softmax.
#[inline]
fn softmax_active(r: usize, cols: usize, causal: bool) -> usize {
    if causal {
        (r % cols) + 1
    } else {
        cols
    }
}

fn softmax_row<S: Scalar>(x: &[S], y: &mut [S]) {
    let mut max = x[0];
    for &v in &x[1..] {
        if v.re() > max.re() {
            max = v;
        }
    }
    let mut total = S::zero();
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = (xv - max).exp();
        total += *yv;
    }
    for yv in y.iter_mut() {
        *yv = *yv / total;
    }
}

fn logsumexp<S: Scalar>(x: &[S]) -> S {
    let mut max = x[0];
    for &v in &x[1..] {
        if v.re() > max.re() {
            max = v;
        }
    }
    let mut total = S::zero();
    for &v in x {
        total += (v - max).exp();
    }
    max + total.ln()
}

fn layer_norm_row<S: Scalar>(x: &[S], eps: f64) -> (Vec<S>, S) {
    let d = x.len() as f64;
    let mut mean = S::zero();
    for &v in x {
        mean += v;
    }
    mean = mean.scale(1.0 / d);
    let mut var = S::zero();
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var = var.scale(1.0 / d);
    let inv = S::one() / (var + S::from_f64(eps)).sqrt();
    (x.iter().map(|&v| (v - mean) * inv).collect(), inv)
}

/// Forward value of a non-leaf node.
pub(crate) fn forward<S: Scalar>(op: &Op, shape: &[usize], vals: &[Tensor<S>]) -> Tensor<S> {
    match op {
        Op::Param(_) | Op::Constant => unreachable!("leaf values are supplied by the record"),
        Op::MatMul(a, b) => {
            let (a, b) = (&vals[*a], &vals[*b]);
            let (dims, out_shape) = matmul_dims(a.shape(), b.shape()).expect("checked at build");
            let mut out = Tensor::zeros(out_shape);
            let (m, k, n) = (dims.m, dims.k, dims.n);
            for bi in 0..dims.batch {
                let boff = if dims.shared_rhs { 0 } else { bi * k * n };
                gemm(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[boff..boff + k * n],
                    &mut out.data_mut()[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            out
        }
        Op::Add(a, b) => {
            let mut out = vals[*a].clone();
            out.add_assign(&vals[*b]);
            out
        }
        Op::AddRow(a, row) => {
            let mut out = vals[*a].clone();
            let r = vals[*row].data();
            for chunk in out.data_mut().chunks_mut(r.len()) {
                for (o, &rv) in chunk.iter_mut().zip(r) {
                    *o += rv;
                }
            }
            out
        }
        Op::Mul(a, b) => {
            let (a, b) = (&vals[*a], &vals[*b]);
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        }
        Op::Scale(x, c) => vals[*x].map(|v| v.scale(*c)),
        Op::Gelu(x) => vals[*x].map(gelu),
        Op::Softmax { x, causal } => {
            let x = &vals[*x];
            let cols = x.last_dim();
            let mut out = Tensor::zeros(x.shape().to_vec());
            for (r, (xr, yr)) in x
                .data()
                .chunks(cols)
                .zip(out.data_mut().chunks_mut(cols))
                .enumerate()
            {
                let active = softmax_active(r, cols, *causal);
                softmax_row(&xr[..active], &mut yr[..active]);
            }
            out
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let x = &vals[*x];
            let (g, b) = (vals[*gain].data(), vals[*bias].data());
            let cols = x.last_dim();
            let mut out = Vec::with_capacity(x.len());
            for xr in x.data().chunks(cols) {
                let (xhat, _) = layer_norm_row(xr, *eps);
                out.extend(xhat.iter().zip(g).zip(b).map(|((&h, &gv), &bv)| gv * h + bv));
            }
            Tensor::new(x.shape().to_vec(), out).expect("same shape")
        }
        Op::Embedding { table, indices } => {
            let t = &vals[*table];
            let cols = t.last_dim();
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices.iter() {
                out.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::new(shape.to_vec(), out).expect("embedding shape")
        }
        Op::Reshape(x) => vals[*x].clone().with_shape(shape.to_vec()),
        Op::Transpose(x, perm) => transpose_data(&vals[*x], perm),
        Op::Sum(x) => {
            let mut acc = S::zero();
            for &v in vals[*x].data() {
                acc += v;
            }
            Tensor::scalar(acc)
        }
        Op::Mean(x) => {
            let x = &vals[*x];
            let mut acc = S::zero();
            for &v in x.data() {
                acc += v;
            }
            Tensor::scalar(acc.scale(1.0 / x.len() as f64))
        }
        Op::CrossEntropy { logits, targets } => {
            let z = &vals[*logits];
            let cols = z.last_dim();
            let mut acc = S::zero();
            for (zr, &t) in z.data().chunks(cols).zip(targets.iter()) {
                acc += logsumexp(zr) - zr[t];
            }
            Tensor::scalar(acc.scale(1.0 / targets.len() as f64))
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn grad_slot<'a, S: Scalar>(
    grads: &'a mut [Option<Tensor<S>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Tensor<S> {
    grads[id].get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
}

/// Propagates the adjoint `gout` of node `id` into its parents.
pub(crate) fn backward<S: Scalar>(
    op: &Op,
    id: NodeId,
    gout: &Tensor<S>,
    vals: &[Tensor<S>],
    grads: &mut [Option<Tensor<S>>],
) {
    match op {
        Op::Param(_) | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&vals[*a], &vals[*b]);
            let (dims, _) = matmul_dims(av.shape(), bv.shape()).expect("checked at build");
            let (m, k, n) = (dims.m, dims.k, dims.n);
            let mut ga = Tensor::zeros(av.shape().to_vec());
            let mut gb = Tensor::zeros(bv.shape().to_vec());
            for bi in 0..dims.batch {
                let boff = if dims.shared_rhs { 0 } else { bi * k * n };
                let g = &gout.data()[bi * m * n..(bi + 1) * m * n];
                gemm_nt(
                    g,
                    &bv.data()[boff..boff + k * n],
                    &mut ga.data_mut()[bi * m * k..(bi + 1) * m * k],
                    m,
                    k,
                    n,
                );
                gemm_tn(
                    &av.data()[bi * m * k..(bi + 1) * m * k],
                    g,
                    &mut gb.data_mut()[boff..boff + k * n],
                    m,
                    k,
                    n,
                );
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, gout.clone());
            accumulate(grads, *b, gout.clone());
        }
        Op::AddRow(a, row) => {
            accumulate(grads, *a, gout.clone());
            let cols = vals[*row].len();
            let gr = grad_slot(grads, *row, vals[*row].shape());
            for chunk in gout.data().chunks(cols) {
                for (o, &g) in gr.data_mut().iter_mut().zip(chunk) {
                    *o += g;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&vals[*a], &vals[*b]);
            let ga = gout.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
            let gb = gout.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
            accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
            accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
        }
        Op::Scale(x, c) => accumulate(grads, *x, gout.map(|g| g.scale(*c))),
        Op::Gelu(x) => {
            let xv = &vals[*x];
            let data = gout
                .data()
                .iter()
                .zip(xv.data())
                .map(|(&g, &v)| g * gelu_prime(v))
                .collect();
            accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data).expect("shape"));
        }
        Op::Softmax { x, causal } => {
            let y = &vals[id];
            let cols = y.last_dim();
            let mut gx = Tensor::zeros(y.shape().to_vec());
            for (r, ((yr, gr), xr)) in y
                .data()
                .chunks(cols)
                .zip(gout.data().chunks(cols))
                .zip(gx.data_mut().chunks_mut(cols))
                .enumerate()
            {
                let active = softmax_active(r, cols, *causal);
                let mut dot = S::zero();
                for j in 0..active {
                    dot += gr[j] * yr[j];
                }
                for j in 0..active {
                    xr[j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, *x, gx);
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let xv = &vals[*x];
            let g = vals[*gain].data().to_vec();
            let cols = xv.last_dim();
            let inv_d = 1.0 / cols as f64;
            let mut gx = Vec::with_capacity(xv.len());
            let mut ggain = vec![S::zero(); cols];
            let mut gbias = vec![S::zero(); cols];
            for (xr, gr) in xv.data().chunks(cols).zip(gout.data().chunks(cols)) {
                let (xhat, inv) = layer_norm_row(xr, *eps);
                let mut mean_gh = S::zero();
                let mut mean_ghx = S::zero();
                for j in 0..cols {
                    let gh = gr[j] * g[j];
                    mean_gh += gh;
                    mean_ghx += gh * xhat[j];
                    ggain[j] += gr[j] * xhat[j];
                    gbias[j] += gr[j];
                }
                mean_gh = mean_gh.scale(inv_d);
                mean_ghx = mean_ghx.scale(inv_d);
                for j in 0..cols {
                    gx.push(inv * (gr[j] * g[j] - mean_gh - xhat[j] * mean_ghx));
                }
            }
            accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx).expect("shape"));
            accumulate(grads, *gain, Tensor::vector(ggain).with_shape(vals[*gain].shape().to_vec()));
            accumulate(grads, *bias, Tensor::vector(gbias).with_shape(vals[*bias].shape().to_vec()));
        }
        Op::Embedding { table, indices } => {
            let tshape = vals[*table].shape().to_vec();
            let cols = *tshape.last().expect("table is 2-D");
            let gt = grad_slot(grads, *table, &tshape);
            for (r, &i) in indices.iter().enumerate() {
                let src = &gout.data()[r * cols..(r + 1) * cols];
                for (o, &g) in gt.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                    *o += g;
                }
            }
        }
        Op::Reshape(x) => {
            accumulate(grads, *x, gout.clone().with_shape(vals[*x].shape().to_vec()));
        }
        Op::Transpose(x, perm) => {
            accumulate(grads, *x, transpose_data(gout, &inverse_perm(perm)));
        }
        Op::Sum(x) => {
            let g = gout.data()[0];
            accumulate(grads, *x, vals[*x].map(|_| g));
        }
        Op::Mean(x) => {
            let g = gout.data()[0].scale(1.0 / vals[*x].len() as f64);
            accumulate(grads, *x, vals[*x].map(|_| g));
        }
        Op::CrossEntropy { logits, targets } => {
            let z = &vals[*logits];
            let cols = z.last_dim();
            let w = gout.data()[0].scale(1.0 / targets.len() as f64);
            let mut gz = Tensor::zeros(z.shape().to_vec());
            for ((zr, gr), &t) in z
                .data()
                .chunks(cols)
                .zip(gz.data_mut().chunks_mut(cols))
                .zip(targets.iter())
            {
                softmax_row(zr, gr);
                gr[t] = gr[t] - S::one();
                for v in gr.iter_mut() {
                    *v = *v * w;
                }
            }
            accumulate(grads, *logits, gz);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trip() {
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let perm = [2, 0, 1];
        let y = transpose_data(&x, &perm);
        assert_eq!(y.shape(), &[4, 2, 3]);
        // y[c, a, b] = x[a, b, c]
        assert_eq!(y.data()[1 * 6 + 1 * 3 + 2], x.data()[1 * 12 + 2 * 4 + 1]);
        let back = transpose_data(&y, &inverse_perm(&perm));
        assert_eq!(back, x);
    }

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu(0.0), 0.0);
        // x·Φ(x) at x = 1
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }
}
