//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] records one forward pass as a list of nodes in topological
//! order (parents are always recorded before children). [`Tape::backward`]
//! replays the tape in reverse, handing each node's upstream gradient to its
//! backward rule and accumulating the results on the parents. The tape is
//! immutable during backward, so repeated backward passes over the same tape
//! are allowed and produce identical results.
//!
//! Tapes are single-threaded by design; concurrent work uses one tape per
//! worker over shared frozen parameter values.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

pub mod gradcheck;
pub mod ops;

/// Stable identity of a parameter tensor, unique within the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    pub fn fresh() -> ParamId {
        static NEXT: AtomicU64 = AtomicU64::new(0);
        ParamId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Maps an upstream gradient to one gradient per parent.
type BackwardRule = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardRule>,
    needs_grad: bool,
}

/// Errors from gradient propagation.
#[derive(Clone, Debug, PartialEq)]
pub enum AutogradError {
    /// `backward` was called on a value with more than one element.
    NonScalarRoot { elements: usize },
}

impl fmt::Display for AutogradError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutogradError::NonScalarRoot { elements } => {
                write!(f, "backward root must be scalar, got {elements} elements")
            }
        }
    }
}

impl std::error::Error for AutogradError {}

/// Gradients keyed by parameter id after a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(ParamId, usize)>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable leaf and tracks it under `id`.
    pub fn param(&self, id: ParamId, value: Tensor) -> Var {
        let var = self.push(value, vec![], None, true);
        self.params.borrow_mut().push((id, var.0));
        var
    }

    /// Records a non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, vec![], None, false)
    }

    /// Records an interior node. `parents` must already live on this tape.
    pub fn push(
        &self,
        value: Tensor,
        parents: Vec<Var>,
        backward: Option<BackwardRule>,
        leaf_requires_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = if parents.is_empty() {
            leaf_requires_grad
        } else {
            parents.iter().any(|p| nodes[p.0].needs_grad)
        };
        nodes.push(Node {
            value,
            parents: parents.into_iter().map(|v| v.0).collect(),
            backward,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Value held by a node (cheap clone of the shared buffer).
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Propagates d`root`/d`param` to every tracked parameter.
    ///
    /// Parameters never touched by the computation receive zero gradients.
    /// The tape is not consumed; calling this twice yields identical results.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutogradError> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(AutogradError::NonScalarRoot {
                elements: root_node.value.len(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.0] = Some(Tensor::full(&[1], 1.0, root_node.value.dtype()));
        for idx in (0..=root.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = grads[idx].clone() else {
                continue;
            };
            let Some(rule) = &node.backward else {
                continue;
            };
            let parent_grads = rule(&up);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pi, g) in node.parents.iter().zip(parent_grads) {
                if !nodes[*pi].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    nodes[*pi].value.shape(),
                    "gradient shape must match parent value shape"
                );
                grads[*pi] = Some(match grads[*pi].take() {
                    Some(acc) => acc.add(&g).expect("gradient accumulation shapes"),
                    None => g,
                });
            }
        }
        let mut out = Gradients::default();
        for (id, idx) in self.params.borrow().iter() {
            let node = &nodes[*idx];
            let g = grads[*idx]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape(), node.value.dtype()));
            out.by_param.insert(*id, g);
        }
        Ok(out)
    }
}
