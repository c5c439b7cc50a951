//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, so a reverse sweep over node ids is a valid topological order.
//! Nodes whose inputs are all constants never store a backward closure.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Parent gradients from the upstream gradient. The `needs` flags say which
/// parents require a gradient; entries for the others may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, false, Vec::new(), None)
    }

    /// A differentiable input whose gradient is kept after [`Graph::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, true, Vec::new(), None)
    }

    /// Trainable parameter `name` from `store`. Repeated lookups of the same
    /// name return the same node so that gradients accumulate.
    pub fn param<'g>(&'g self, store: &ParamStore, name: &str) -> Var<'g> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { graph: self, id };
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        let var = self.leaf(value);
        self.params.borrow_mut().insert(name.to_string(), var.id);
        var
    }

    /// Parameter `name` read as a constant (frozen network).
    pub fn frozen<'g>(&'g self, store: &ParamStore, name: &str) -> Var<'g> {
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        self.constant(value)
    }

    pub(crate) fn push<'g>(&'g self, value: Tensor, parents: &[Var<'g>], backward: BackwardFn) -> Var<'g> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        if requires_grad {
            self.push_node(value, true, parents.iter().map(|p| p.id).collect(), Some(backward))
        } else {
            self.push_node(value, false, Vec::new(), None)
        }
    }

    pub(crate) fn requires_grad(&self, var: Var<'_>) -> bool {
        self.nodes.borrow()[var.id].requires_grad
    }

    fn push_node(
        &self,
        value: Tensor,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, requires_grad, parents, backward });
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from `output`, seeded with ones.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(output.graph, self), "variable from another graph");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[output.id].requires_grad {
            return Gradients { grads, shapes: Vec::new(), params: self.params.borrow().clone() };
        }
        grads[output.id] = Some(vec![1.0; nodes[output.id].value.len()]);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.len(), nodes[p].value.len(), "gradient size for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Gradients { grads, shapes, params: self.params.borrow().clone() }
    }
}

/// Gradients of leaf nodes after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: HashMap<String, usize>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if it did not influence the output.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(var.id)?.as_ref()?;
        Some(Tensor::new(self.shapes[var.id].clone(), g.clone()))
    }

    /// Gradient of a leaf, zeros if it did not influence the output.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
    }

    /// Gradients of every parameter registered through [`Graph::param`] that
    /// received one, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, &id)| {
                let g = self.grads.get(id)?.as_ref()?;
                Some((name.clone(), Tensor::new(self.shapes[id].clone(), g.clone())))
            })
            .collect()
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(*self)
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.value())
    }
}
