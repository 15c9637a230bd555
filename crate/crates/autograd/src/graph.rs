//! Dynamic reverse-mode graph.
//!
//! Every [`Var`] owns its forward value and, when it depends on a
//! gradient-requiring input, a closure mapping the output gradient to input
//! gradients. Node ids grow monotonically, so descending id order is a valid
//! reverse topological order for backpropagation.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Arguments handed to a backward closure.
pub struct BackwardArgs<'a> {
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: &'a [Var],
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A value in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var#{}({:?}, grad={})",
            self.0.id, self.0.value, self.0.requires_grad
        )
    }
}

impl Var {
    fn make(value: Tensor, requires_grad: bool, inputs: Vec<Var>, backward: Option<BackwardFn>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            inputs,
            backward,
        }))
    }

    /// A leaf that does not receive gradients.
    pub fn constant(value: Tensor) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    /// A leaf whose gradient is reported by [`Var::backward`].
    pub fn leaf(value: Tensor) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// Builds an op node. The closure must return one entry per input; `None`
    /// entries are treated as zero. If no input requires a gradient the
    /// closure and inputs are dropped and the result is a constant.
    pub fn from_op<F>(value: Tensor, inputs: Vec<Var>, backward: F) -> Self
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        if inputs.iter().any(Var::requires_grad) {
            Self::make(value, true, inputs, Some(Box::new(backward)))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Backpropagates from a single-element output.
    pub fn backward(&self) -> Gradients {
        assert_eq!(
            self.value().len(),
            1,
            "backward() needs a scalar output; use backward_with"
        );
        self.backward_with(Tensor::ones(self.shape()))
    }

    /// Backpropagates an explicit output gradient. Only leaf gradients are
    /// retained in the result.
    pub fn backward_with(&self, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(), "seed shape mismatch");
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return out;
        }

        let mut nodes: Vec<Var> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            stack.extend(v.0.inputs.iter().cloned());
            nodes.push(v);
        }
        nodes.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in nodes {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    out.map.insert(node.id(), grad);
                }
                Some(f) => {
                    let grads = f(&BackwardArgs {
                        grad: &grad,
                        output: &node.0.value,
                        inputs: &node.0.inputs,
                    });
                    debug_assert_eq!(grads.len(), node.0.inputs.len());
                    for (inp, g) in node.0.inputs.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), inp.shape(), "gradient shape for input");
                        match pending.get_mut(&inp.id()) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                pending.insert(inp.id(), g);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Leaf gradients keyed by node id.
#[derive(Default, Debug)]
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.map.get(&v.id())
    }

    /// Gradient of `v`, zeros if it did not influence the output.
    pub fn get_or_zeros(&self, v: &Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn take(&mut self, v: &Var) -> Option<Tensor> {
        self.map.remove(&v.id())
    }
}
