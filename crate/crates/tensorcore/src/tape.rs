//! Computation record for reverse-mode differentiation.
//!
//! Every kernel appends one node holding its output value, the ids of its
//! inputs and whatever it saved for the backward pass. Node ids grow
//! monotonically, so walking the node list backwards is a valid reverse
//! topological order.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded kernel.
pub(crate) trait Backward: Send + Sync {
    /// Returns one gradient per input (in input order); `None` means zero.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    branches: DefaultHasher,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            branches: DefaultHasher::new(),
        }
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Hash of every discrete decision taken so far (ReLU signs, argmax
    /// indices, clamp states, hinge activity). Two evaluations with the same
    /// signature lie on the same smooth piece of the recorded function.
    pub fn signature(&self) -> u64 {
        self.branches.clone().finish()
    }

    /// Folds an externally made discrete decision into [`Tape::signature`].
    pub fn note_branch(&mut self, value: u64) {
        self.branches.write_u64(value);
    }

    pub(crate) fn note_flag(&mut self, flag: bool) {
        self.branches.write_u8(flag as u8);
    }

    pub(crate) fn note_index(&mut self, index: usize) {
        self.branches.write_usize(index);
    }

    pub(crate) fn record(&mut self, value: Tensor, inputs: Vec<Var>, rule: Box<dyn Backward>) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, inputs, Some(rule), needs_grad)
    }

    fn push_node(&mut self, value: Tensor, inputs: Vec<Var>, rule: Option<Box<dyn Backward>>, needs_grad: bool) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            inputs,
            rule,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(output)/d(node) for every node that `output` depends on.
    ///
    /// A tape supports a single backward pass.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let out_shape = self.nodes[output.0].value.shape().to_vec();
        if self.nodes[output.0].value.len() != 1 {
            return Err(TensorError::NotScalar(out_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(&out_shape, 1.0));
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Intermediate gradients are not kept; only leaves are queried.
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.filter(|_| self.nodes[id].rule.is_none()))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
        let y = tape.sum(x);
        assert!(tape.backward(y).is_ok());
        assert_eq!(tape.backward(y).err(), Some(TensorError::BackwardTwice));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![5.0]).unwrap());
        let y = tape.add(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }
}
