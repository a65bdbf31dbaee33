//! A minimal reverse-mode tape over flat `f64` buffers.
//!
//! Nodes are created either as leaves or as the output of a [`Primitive`]
//! applied to earlier nodes, so record order is a topological order and the
//! backward pass simply walks records in reverse.

use super::ops;
use super::Matrix;
use crate::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation with a hand-written backward pass.
pub trait Primitive: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>>;

    /// Vector-Jacobian product: one gradient buffer per input, each the same
    /// length as that input.
    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>>;
}

struct Record {
    op: Box<dyn Primitive>,
    inputs: Vec<NodeId>,
    output: NodeId,
}

#[derive(Default)]
pub struct GradTape {
    values: Vec<Vec<f64>>,
    records: Vec<Record>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.values.push(value);
        NodeId(self.values.len() - 1)
    }

    pub fn apply<P: Primitive + 'static>(&mut self, op: P, inputs: &[NodeId]) -> Result<NodeId> {
        let out = {
            let args: Vec<&[f64]> = inputs
                .iter()
                .map(|id| self.values[id.0].as_slice())
                .collect();
            op.forward(&args)?
        };
        let output = self.leaf(out);
        self.records.push(Record {
            op: Box::new(op),
            inputs: inputs.to_vec(),
            output,
        });
        Ok(output)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Names of the recorded primitives, in forward order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.op.name()).collect()
    }

    /// Back-propagates from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.values[root.0].len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar root",
                format!("[{}]", self.values[root.0].len()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[root.0] = Some(vec![1.0]);
        for rec in self.records.iter().rev() {
            let Some(g_out) = grads[rec.output.0].take() else {
                continue;
            };
            let args: Vec<&[f64]> = rec
                .inputs
                .iter()
                .map(|id| self.values[id.0].as_slice())
                .collect();
            let g_in = rec.op.backward(&args, &self.values[rec.output.0], &g_out);
            grads[rec.output.0] = Some(g_out);
            for (id, g) in rec.inputs.iter().zip(g_in) {
                match &mut grads[id.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients(grads))
    }
}

/// Result of [`GradTape::backward`]; nodes the root does not depend on have
/// no gradient.
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.0[id.0].as_deref()
    }

    /// Gradient of `id`, or zeros of length `len` if the root ignores it.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        self.get(id).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// `m · v + b` with inputs `[m (flat, row-major), v, b]`.
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
}

impl Affine {
    fn matrix(&self, flat: &[f64]) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, flat.to_vec())
    }
}

impl Primitive for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let m = self.matrix(inputs[0])?;
        ops::affine(&m, inputs[1], inputs[2])
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        // The matrix was validated in forward.
        let m = self.matrix(inputs[0]).expect("validated in forward");
        let (gm, gv, gb) = ops::affine_backward(&m, inputs[1], grad_out);
        vec![gm, gv, gb]
    }
}

pub struct LeakyRelu {
    pub slope: f64,
}

impl Primitive for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(ops::leaky_relu(inputs[0], self.slope))
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![ops::leaky_relu_backward(inputs[0], self.slope, grad_out)]
    }
}

/// Sum-of-magnitudes normalization. `eps = 0` makes a degenerate input an
/// error instead of being smoothed over.
pub struct Normalize {
    pub eps: f64,
}

impl Primitive for Normalize {
    fn name(&self) -> &'static str {
        "normalize"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        ops::abs_normalize(inputs[0], self.eps)
            .ok_or_else(|| Error::Numeric("normalization of an all-zero vector".into()))
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![ops::abs_normalize_backward(inputs[0], self.eps, grad_out)]
    }
}

pub struct ClampAlpha {
    pub gamma: f64,
}

impl Primitive for ClampAlpha {
    fn name(&self) -> &'static str {
        "clamp"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(ops::clamp_alpha_bounds(inputs[0], self.gamma).0)
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        let (_, mask) = ops::clamp_alpha_bounds(inputs[0], self.gamma);
        vec![ops::clamp_alpha_backward(&mask, grad_out)]
    }
}

/// Dot product with a fixed vector; handy for reducing to a scalar in tests.
#[cfg(test)]
pub(crate) struct DotConst(pub Vec<f64>);

#[cfg(test)]
impl Primitive for DotConst {
    fn name(&self) -> &'static str {
        "dot_const"
    }
    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![super::dot(inputs[0], &self.0)])
    }
    fn backward(&self, _inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![self.0.iter().map(|w| w * grad_out[0]).collect()]
    }
}
