//! Tensor-granular reverse-mode tape.
//!
//! Every node owns a flat `f64` buffer plus a logical shape. Operations
//! append nodes in evaluation order, so a reverse sweep over the node list
//! is a valid topological order for the backward pass. Each op supplies a
//! closure that maps the upstream gradient to one optional gradient per
//! parent; the engine sums those into the parents' accumulators.

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Data handed to an op's backward closure.
pub struct BackwardCtx<'a> {
    inputs: Vec<&'a [f64]>,
    needs: Vec<bool>,
    pub output: &'a [f64],
    pub grad: &'a [f64],
}

impl<'a> BackwardCtx<'a> {
    pub fn input(&self, i: usize) -> &'a [f64] {
        self.inputs[i]
    }

    /// Whether parent `i` participates in differentiation. Closures may
    /// skip computing (and return `None` for) parents that do not.
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

enum Origin {
    Constant,
    Param(ParamId),
    Op {
        name: &'static str,
        parents: Vec<Var>,
        backward: BackwardFn,
    },
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    origin: Origin,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(
        &mut self,
        value: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        origin: Origin,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            origin,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "constant shape mismatch"
        );
        self.push(value, shape.to_vec(), false, Origin::Constant)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![v], vec![1], false, Origin::Constant)
    }

    /// Registers a leaf that reads the current values of `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.values.clone(), p.shape.clone(), true, Origin::Param(id))
    }

    /// Appends a custom op. `backward` is dropped when no parent needs a
    /// gradient.
    pub fn op(
        &mut self,
        name: &'static str,
        parents: &[Var],
        value: Vec<f64>,
        shape: &[usize],
        backward: BackwardFn,
    ) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "op `{name}` produced a value that does not match its shape"
        );
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let origin = if requires_grad {
            Origin::Op {
                name,
                parents: parents.to_vec(),
                backward,
            }
        } else {
            Origin::Constant
        };
        self.push(value, shape.to_vec(), requires_grad, origin)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        let value = &self.nodes[v.0].value;
        assert_eq!(value.len(), 1, "item() on a non-scalar node");
        value[0]
    }

    /// Reverse sweep from `loss`, returning per-node gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::NotScalar(node.shape.clone()));
        }
        if !node.value[0].is_finite() {
            return Err(Error::NonFiniteObjective(node.value[0]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Origin::Op {
                parents, backward, ..
            } = &node.origin
            {
                // Intermediate gradients are released as soon as they are consumed.
                let ctx = BackwardCtx {
                    inputs: parents
                        .iter()
                        .map(|p| self.nodes[p.0].value.as_slice())
                        .collect(),
                    needs: parents
                        .iter()
                        .map(|p| self.nodes[p.0].requires_grad)
                        .collect(),
                    output: &node.value,
                    grad: &grad,
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), parents.len());
                for (p, g) in parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p.0].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), self.nodes[p.0].value.len());
                    match &mut grads[p.0] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            } else {
                grads[i] = Some(grad);
            }
        }
        Ok(Gradients { grads })
    }

    /// Backpropagates `loss` and accumulates into every reachable parameter.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Origin::Param(id) = node.origin {
                if let Some(g) = grads.get(Var(i)) {
                    store.accumulate(id, g);
                }
            }
        }
        Ok(())
    }

    /// Name of the op that produced `v` (`"constant"` / `"param"` for leaves).
    pub fn op_name(&self, v: Var) -> &'static str {
        match &self.nodes[v.0].origin {
            Origin::Constant => "constant",
            Origin::Param(_) => "param",
            Origin::Op { name, .. } => name,
        }
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
