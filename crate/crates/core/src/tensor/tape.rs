//! Reverse-mode gradient tape.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Computes input gradients from the output gradient. The second argument
/// says which inputs actually need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Op,
    Input,
    Param { store: u64, id: ParamId },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    origin: Origin,
}

/// Ordered record of executed differentiable operations.
///
/// Values live on the tape until it is dropped. Backward walks the records in
/// exact reverse execution order and may run only once per tape.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<(u64, ParamId), usize>>,
    consumed: Cell<bool>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `tensor` as a leaf. It requires a gradient iff the tensor does.
    pub fn input(&self, tensor: &Tensor<T>) -> Var<'_, T> {
        let requires_grad = self.grad_enabled && tensor.requires_grad();
        self.push_node(tensor.detached(), requires_grad, Vec::new(), None, Origin::Input)
    }

    /// Records a leaf that never requires a gradient.
    pub fn constant(&self, tensor: &Tensor<T>) -> Var<'_, T> {
        self.push_node(tensor.detached(), false, Vec::new(), None, Origin::Input)
    }

    /// Leaf for a parameter. Repeated requests for the same parameter return
    /// the same node, so uses accumulate into one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let key = (store.uid(), id);
        if let Some(&node) = self.params.borrow().get(&key) {
            return Var { tape: self, id: node };
        }
        let tensor = store.get(id);
        let requires_grad = self.grad_enabled && tensor.requires_grad();
        let var = self.push_node(
            tensor.detached(),
            requires_grad,
            Vec::new(),
            None,
            Origin::Param { store: key.0, id },
        );
        self.params.borrow_mut().insert(key, var.id);
        var
    }

    fn push_node(
        &self,
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        origin: Origin,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
            origin,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the result of an operation over `inputs`.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        inputs: &[Var<'_, T>],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let parents = inputs.iter().map(|v| v.id).collect();
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(value, requires_grad, parents, backward, Origin::Op)
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        let mut out = Gradients {
            inputs: HashMap::new(),
            params: HashMap::new(),
        };
        if !nodes[loss.id].requires_grad {
            return Ok(out);
        }
        grads[loss.id] = Some(vec![T::one()]);

        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            match nodes[i].origin {
                Origin::Input => {
                    out.inputs.insert(i, g);
                    continue;
                }
                Origin::Param { store, id } => {
                    out.params.insert((store, id), g);
                    continue;
                }
                Origin::Op => {}
            }
            // Closures are released as soon as they have run.
            let Some(backward) = nodes[i].backward.take() else { continue };
            let parents = nodes[i].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            drop(backward);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, pg), need) in parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else { continue };
                debug_assert_eq!(pg.len(), nodes[p].value.numel(), "gradient size");
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                    slot => *slot = Some(pg),
                }
            }
        }
        nodes.iter_mut().for_each(|n| n.backward = None);
        Ok(out)
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// The recorded value (shares storage with the tape).
    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T: Scalar> {
    inputs: HashMap<usize, Vec<T>>,
    params: HashMap<(u64, ParamId), Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an input leaf, if one reached it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.inputs.get(&var.id).map(Vec::as_slice).or_else(|| {
            self.params
                .iter()
                .find(|((s, id), _)| {
                    var.tape.params.borrow().get(&(*s, *id)) == Some(&var.id)
                })
                .map(|(_, g)| g.as_slice())
        })
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Option<&[T]> {
        self.param_by_key(store.uid(), id)
    }

    pub(crate) fn param_by_key(&self, store: u64, id: ParamId) -> Option<&[T]> {
        self.params.get(&(store, id)).map(Vec::as_slice)
    }

    /// True if any gradient reached a parameter of `store`.
    pub fn touches(&self, store: &ParamStore<T>) -> bool {
        self.params.keys().any(|(s, _)| *s == store.uid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_backward_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::full(vec![3], 2.0).with_requires_grad());
        let loss = x.sum();
        assert!(tape.backward(loss).is_ok());
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::full(vec![3], 2.0).with_requires_grad());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn sum_gives_ones_and_reuse_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap().with_requires_grad());
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

        let tape = Tape::<f64>::new();
        let x = tape.input(&Tensor::new(vec![2], vec![0.5, 4.0]).unwrap().with_requires_grad());
        let y = x.add(x).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn no_grad_tape_records_nothing_differentiable() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.input(&Tensor::full(vec![2], 1.0).with_requires_grad());
        assert!(!x.requires_grad());
        let g = tape.backward(x.sum()).unwrap();
        assert!(g.wrt(x).is_none());
    }
}
