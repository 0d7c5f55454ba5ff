use std::cell::{Ref, RefCell};
use std::collections::{BTreeMap, HashMap};

use super::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so
/// the node list is already topologically sorted.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<String, Var>>,
    trainable: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A tape on which parameters are differentiable leaves.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            trainable: true,
        }
    }

    /// A tape on which parameters are constants; no backward rules are kept.
    pub fn inference() -> Self {
        Graph {
            trainable: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        })
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    /// Looks up a named parameter, placing it on the tape on first use.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.borrow().get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .clone();
        let v = if self.trainable {
            self.leaf(value)
        } else {
            self.constant(value)
        };
        self.params.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Makes later [`Graph::param`] lookups of `name` resolve to `v`.
    pub fn bind_param(&self, name: &str, v: Var) {
        self.params.borrow_mut().insert(name.to_string(), v);
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Runs `forward` on the input values and records `backward` for the
    /// result. The backward rule is dropped when no input needs a gradient.
    pub fn custom_op<F, B>(&self, inputs: &[Var], forward: F, backward: B) -> Result<Var>
    where
        F: FnOnce(&[&Tensor<T>]) -> Result<Tensor<T>>,
        B: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let rg = inputs.iter().any(|v| nodes[v.0].requires_grad);
            (forward(&vals)?, rg)
        };
        Ok(self.push_node(Node {
            value,
            parents: inputs.to_vec(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        }))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.into_inner();
        let params = self.params.into_inner();
        let loss_node = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract("loss is not on this tape".into()))?;
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), T::one()));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.backward {
                Some(rule) => {
                    let ctx = BackwardCtx {
                        grad: &g,
                        inputs: node.parents.iter().map(|p| &nodes[p.0].value).collect(),
                        output: &node.value,
                        needs: node.parents.iter().map(|p| nodes[p.0].requires_grad).collect(),
                    };
                    let input_grads = rule(&ctx);
                    debug_assert_eq!(input_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(input_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p.0].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[p.0].value.shape());
                        match &mut grads[p.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None if node.parents.is_empty() && node.requires_grad => {
                    leaves.insert(i, g);
                }
                None => {}
            }
        }

        let mut param_grads = BTreeMap::new();
        for (name, v) in params {
            let g = leaves
                .get(&v.0)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(nodes[v.0].value.shape()));
            param_grads.insert(name, g);
        }
        Ok(Gradients {
            leaves,
            params: param_grads,
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf created with [`Graph::leaf`]; `None` when the
    /// loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradient for `v`, or zeros of `shape` when unused.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Gradients for every parameter touched on the tape, by name.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}
