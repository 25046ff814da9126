use std::sync::Arc;

use super::ops::{self, matmul_dims, transpose_shape, NodeId, Op};
use super::scalar::{Dual, Scalar};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

/// Builds a [`ComputationRecord`] while evaluating forward values eagerly.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and the record is acyclic by construction.
#[derive(Default)]
pub struct RecordBuilder {
    nodes: Vec<Node>,
    values: Vec<Tensor<f64>>,
    params: Vec<NodeId>,
}

impl RecordBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        let value = match op {
            Op::Param(_) | Op::Constant => unreachable!(),
            _ => ops::forward(&op, &shape, &self.values),
        };
        self.nodes.push(Node { op, shape });
        self.values.push(value);
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<f64> {
        &self.values[id]
    }

    /// Trainable leaf. Parameters are flattened in insertion order.
    pub fn param(&mut self, value: Tensor<f64>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Param(self.params.len()),
            shape: value.shape().to_vec(),
        });
        self.values.push(value);
        self.params.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor<f64>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Constant,
            shape: value.shape().to_vec(),
        });
        self.values.push(value);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, out) =
            matmul_dims(self.shape(a), self.shape(b)).ok_or_else(|| self.mismatch("matmul", a, b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape))
    }

    /// Broadcast add of a vector along the last axis.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.len() != 1 || sa.last() != sr.first() {
            return Err(self.mismatch("add_row", a, row));
        }
        let shape = sa.to_vec();
        Ok(self.push(Op::AddRow(a, row), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, c), shape)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Gelu(x), shape)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_impl(x, false)
    }

    /// Softmax over the last axis with a lower-triangular mask on the last
    /// two (square) axes.
    pub fn causal_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: NodeId, causal: bool) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let ok = match shape.len() {
            0 => false,
            1 => !causal && shape[0] > 0,
            r => shape[r - 1] > 0 && (!causal || shape[r - 1] == shape[r - 2]),
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: shape,
                rhs: vec![],
            });
        }
        Ok(self.push(Op::Softmax { x, causal }, shape))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let d = self.shape(x).last().copied().unwrap_or(0);
        if self.shape(gain) != [d] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [d] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, shape))
    }

    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                lhs: ts,
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ts[0]) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: ts[0],
            });
        }
        let indices: Arc<[usize]> = indices.into();
        Ok(self.push(Op::Embedding { table, indices: indices.clone() }, vec![indices.len(), ts[1]]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if numel(&shape) != numel(self.shape(x)) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        Ok(self.push(Op::Reshape(x), shape))
    }

    pub fn transpose(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: self.shape(x).to_vec(),
                rhs: perm.to_vec(),
            });
        }
        let shape = transpose_shape(self.shape(x), perm);
        Ok(self.push(Op::Transpose(x, perm.to_vec()), shape))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), vec![])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        if numel(self.shape(x)) == 0 {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        Ok(self.push(Op::Mean(x), vec![]))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 || s[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: s,
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(Error::TokenOutOfRange { token: bad, vocab: s[1] });
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.into(),
            },
            vec![],
        ))
    }

    pub fn finish(self, output: NodeId) -> ComputationRecord {
        ComputationRecord {
            nodes: self.nodes,
            values: self.values,
            params: self.params,
            output,
        }
    }
}

/// Topologically ordered primitive applications ending in one output node.
#[derive(Clone, Debug)]
pub struct ComputationRecord {
    nodes: Vec<Node>,
    values: Vec<Tensor<f64>>,
    params: Vec<NodeId>,
    output: NodeId,
}

impl ComputationRecord {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> &Tensor<f64> {
        &self.values[self.output]
    }

    /// Scalar output value.
    pub fn value(&self) -> Result<f64> {
        self.check_scalar()?;
        Ok(self.values[self.output].data()[0])
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|&p| self.values[p].len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for &p in &self.params {
            out.extend_from_slice(self.values[p].data());
        }
        out
    }

    fn check_scalar(&self) -> Result<()> {
        let shape = &self.nodes[self.output].shape;
        if numel(shape) != 1 {
            return Err(Error::NonScalarOutput(shape.clone()));
        }
        Ok(())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let d = self.param_count();
        if n != d {
            return Err(Error::DimensionMismatch { expected: d, got: n });
        }
        Ok(())
    }

    fn evaluate<S: Scalar>(&self, leaf: impl Fn(NodeId, &Tensor<f64>) -> Tensor<S>) -> Vec<Tensor<S>> {
        let mut vals: Vec<Tensor<S>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Param(_) | Op::Constant => leaf(id, &self.values[id]),
                ref op => ops::forward(op, &node.shape, &vals),
            };
            vals.push(v);
        }
        vals
    }

    /// Re-runs every primitive from the stored leaves.
    pub fn replay(&self) -> Tensor<f64> {
        let mut vals = self.evaluate(|_, v| v.clone());
        vals.swap_remove(self.output)
    }

    /// Same structure re-evaluated at new parameter values.
    pub fn with_params(&self, theta: &[f64]) -> Result<ComputationRecord> {
        self.check_dim(theta.len())?;
        let mut rec = self.clone();
        let mut offset = 0;
        for &p in &self.params {
            let n = rec.values[p].len();
            rec.values[p].data_mut().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
        rec.values = rec.evaluate(|_, v| v.clone());
        Ok(rec)
    }

    fn backprop<S: Scalar>(&self, vals: &[Tensor<S>]) -> Vec<S> {
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(Tensor::scalar(S::one()));
        for id in (0..=self.output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Param(_)) {
                grads[id] = Some(g);
                continue;
            }
            ops::backward(&node.op, id, &g, vals, &mut grads);
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for &p in &self.params {
            match &grads[p] {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(std::iter::repeat_n(S::zero(), self.values[p].len())),
            }
        }
        flat
    }

    /// Gradient of the scalar output with respect to every parameter, flattened
    /// in parameter insertion order.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        self.check_scalar()?;
        Ok(self.backprop(&self.values))
    }

    /// Hessian-vector product by differentiating the adjoint program along `v`.
    pub fn hvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.grad_and_hvp(v)?.1)
    }

    /// Gradient and Hessian-vector product from one dual-number sweep.
    pub fn grad_and_hvp(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_scalar()?;
        self.check_dim(v.len())?;
        let mut offsets = vec![0usize; self.nodes.len()];
        let mut offset = 0;
        for &p in &self.params {
            offsets[p] = offset;
            offset += self.values[p].len();
        }
        let vals = self.evaluate(|id, t| {
            let data = match self.nodes[id].op {
                Op::Param(_) => {
                    let o = offsets[id];
                    t.data()
                        .iter()
                        .zip(&v[o..o + t.len()])
                        .map(|(&x, &dx)| Dual::new(x, dx))
                        .collect()
                }
                _ => t.data().iter().map(|&x| Dual::from_f64(x)).collect(),
            };
            Tensor::new(t.shape().to_vec(), data).expect("leaf shape")
        });
        let g = self.backprop(&vals);
        Ok(g.iter().map(|d| (d.re, d.eps)).unzip())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_square_norm(theta: &[f64]) -> ComputationRecord {
        let mut b = RecordBuilder::new();
        let t = b.param(Tensor::vector(theta.to_vec()));
        let sq = b.mul(t, t).unwrap();
        let s = b.sum(sq);
        let out = b.scale(s, 0.5);
        b.finish(out)
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let rec = half_square_norm(&[1.0, 2.0]);
        assert_eq!(rec.value().unwrap(), 2.5);
        assert_eq!(rec.gradient().unwrap(), vec![1.0, 2.0]);
        assert_eq!(rec.hvp(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
    }

    #[test]
    fn scaled_penalty_hvp() {
        // (λ/2)‖θ‖² has Hessian λI.
        let lambda = 0.37;
        let mut b = RecordBuilder::new();
        let t = b.param(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let sq = b.mul(t, t).unwrap();
        let s = b.sum(sq);
        let out = b.scale(s, lambda / 2.0);
        let rec = b.finish(out);
        let hv = rec.hvp(&[1.0, 2.0, 3.0]).unwrap();
        for (h, v) in hv.iter().zip([1.0, 2.0, 3.0]) {
            assert!((h - lambda * v).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut b = RecordBuilder::new();
        b.param(Tensor::vector(vec![1.0, 2.0]));
        let c = b.constant(Tensor::scalar(4.0));
        let rec = b.finish(c);
        assert_eq!(rec.gradient().unwrap(), vec![0.0, 0.0]);
        assert_eq!(rec.hvp(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut b = RecordBuilder::new();
        let t = b.param(Tensor::vector(vec![1.0, 2.0]));
        let rec = b.finish(t);
        assert!(matches!(rec.gradient(), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn hvp_dimension_mismatch() {
        let rec = half_square_norm(&[1.0, 2.0]);
        assert!(matches!(
            rec.hvp(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut b = RecordBuilder::new();
        let x = b.param(Tensor::zeros(vec![2, 3]));
        let y = b.param(Tensor::zeros(vec![2, 3]));
        let err = b.matmul(x, y).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_symmetric_input() {
        let mut b = RecordBuilder::new();
        let x = b.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = b.softmax(x).unwrap();
        assert_eq!(b.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let mut b = RecordBuilder::new();
        let x = b.constant(Tensor::new(vec![1, 4], vec![3.0; 4]).unwrap());
        let g = b.constant(Tensor::vector(vec![2.0, 2.0, 2.0, 2.0]));
        let bias = b.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
        let y = b.layer_norm(x, g, bias, 1e-5).unwrap();
        assert_eq!(b.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn cross_entropy_hand_value() {
        let mut b = RecordBuilder::new();
        let z = b
            .constant(Tensor::new(vec![1, 3], vec![3f64.ln(), 0.0, 0.0]).unwrap());
        let ce = b.cross_entropy(z, &[0]).unwrap();
        let want = -(3.0f64 / 5.0).ln();
        assert!((b.value(ce).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut b = RecordBuilder::new();
        let x = b.constant(Tensor::new(vec![2, 2], vec![5.0, 9.0, 1.0, 1.0]).unwrap());
        let s = b.causal_softmax(x).unwrap();
        assert_eq!(b.value(s).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn out_of_range_target() {
        let mut b = RecordBuilder::new();
        let z = b.constant(Tensor::zeros(vec![1, 3]));
        assert!(matches!(
            b.cross_entropy(z, &[3]),
            Err(Error::TokenOutOfRange { token: 3, vocab: 3 })
        ));
    }
}
