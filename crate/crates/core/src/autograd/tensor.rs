use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{bail_shape, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Maps the upstream gradient (and the node's own forward output) to one
/// optional gradient per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense row-major f64 tensor that records the operations producing it.
///
/// Cloning is cheap (reference counted). Graphs are built per forward pass
/// and are not `Send`; persistent state lives in [`crate::autograd::ParamStore`].
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape())?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

impl Tensor {
    fn make(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            parents,
            backward,
        }))
    }

    /// Constant (non-trainable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail_shape!("{} values do not fill shape {:?}", data.len(), shape);
        }
        Ok(Self::make(data, shape.to_vec(), false, vec![], None))
    }

    /// Leaf tensor whose gradient is tracked.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail_shape!("{} values do not fill shape {:?}", data.len(), shape);
        }
        Ok(Self::make(data, shape.to_vec(), true, vec![], None))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::make(vec![v], vec![], false, vec![], None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(0.0, shape)
    }

    pub fn full(v: f64, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::make(vec![v; n], shape.to_vec(), false, vec![], None)
    }

    /// Result of an operation. Parents and the backward closure are only kept
    /// when some parent participates in differentiation.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::make(data, shape, true, parents, Some(backward))
        } else {
            Self::make(data, shape, false, vec![], None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn to_scalar(&self) -> Result<f64> {
        if self.numel() != 1 {
            bail_shape!("expected a single element, got shape {:?}", self.shape());
        }
        Ok(self.0.data[0])
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => bail_shape!("expected a rank-4 tensor, got {:?}", s),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            &[a, b] => Ok((a, b)),
            s => bail_shape!("expected a rank-2 tensor, got {:?}", s),
        }
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        if !self.requires_grad() {
            return self.clone();
        }
        Self::make(self.to_vec(), self.shape().to_vec(), false, vec![], None)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode differentiation from a single-element tensor.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            bail_shape!("backward needs a scalar root, got shape {:?}", self.shape());
        }
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads });
        }

        // Post-order DFS: every node lands after all of its parents.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.contains(&t.id()) {
                continue;
            }
            visited.insert(t.id());
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        grads.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(backward) = &node.0.backward else {
                continue;
            };
            // Interior gradients are not kept; leaves are.
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let parent_grads = backward(&g, node.data());
            for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel());
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf tensors after a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::variable(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        let c = Tensor::new(vec![5.0, 5.0], &[2]).unwrap();
        let g = x.mul(&c).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(g.get(&c).is_none());
        assert_eq!(g.get(&x).unwrap(), &[5.0, 5.0]);
    }

    #[test]
    fn detach_blocks_flow() {
        let x = Tensor::variable(vec![2.0], &[1]).unwrap();
        let y = x.detach().mul(&x).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[2.0]);
    }
}
