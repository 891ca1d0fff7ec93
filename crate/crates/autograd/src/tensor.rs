use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Maps the gradient of a node's output to one optional gradient per parent,
/// in parent order. `None` means "no contribution".
pub type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Rc<Vec<f32>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense row-major f32 tensor that records the operations producing it.
///
/// Cloning is cheap (reference counted). Tensors are immutable; every
/// operation allocates a fresh output.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(data: Rc<Vec<f32>>, shape: &[usize], requires_grad: bool) -> Tensor {
        assert_eq!(
            data.len(),
            numel_of(shape),
            "data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Constant tensor (never receives a gradient).
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Tensor {
        Tensor::leaf(Rc::new(data), shape, false)
    }

    /// Leaf tensor that collects a gradient during `backward`.
    pub fn var(data: Vec<f32>, shape: &[usize]) -> Tensor {
        Tensor::leaf(Rc::new(data), shape, true)
    }

    pub fn from_shared(data: Rc<Vec<f32>>, shape: &[usize], requires_grad: bool) -> Tensor {
        Tensor::leaf(data, shape, requires_grad)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; numel_of(shape)], shape)
    }

    pub fn full(value: f32, shape: &[usize]) -> Tensor {
        Tensor::new(vec![value; numel_of(shape)], shape)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::new(vec![value], &[])
    }

    /// Builds the output of a custom operation.
    ///
    /// `backward` receives the gradient w.r.t. the output and must return
    /// one entry per parent. If no parent requires a gradient the closure is
    /// dropped and the result is a constant.
    pub fn from_op<F>(data: Vec<f32>, shape: &[usize], parents: Vec<Tensor>, backward: F) -> Tensor
    where
        F: Fn(&[f32]) -> Vec<Option<Vec<f32>>> + 'static,
    {
        assert_eq!(
            data.len(),
            numel_of(shape),
            "op output length does not match shape {shape:?}"
        );
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Tensor::new(data, shape);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            data: Rc::new(data),
            requires_grad,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn shared_data(&self) -> Rc<Vec<f32>> {
        Rc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// (N, C, H, W) of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape() {
            &[n, c, h, w] => (n, c, h, w),
            s => panic!("expected a rank-4 tensor, got shape {s:?}"),
        }
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_shared(self.shared_data(), self.shape(), false)
    }

    /// Reverse-mode sweep from a single-element tensor.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.numel(), 1, "backward() requires a scalar output");
        self.backward_with(vec![1.0])
    }

    /// Reverse-mode sweep seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<f32>) -> Gradients {
        assert_eq!(seed.len(), self.numel());
        let mut grads: HashMap<usize, Vec<f32>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let order = self.topo_order();
        grads.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel());
                match grads.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        Gradients { grads }
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (tensor, children already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

/// Gradients of leaf tensors collected by [`Tensor::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Vec<f32>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros when `t` did not influence the output.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f32> {
        self.get(t).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Vec<f32>> {
        self.grads.remove(&t.id())
    }
}
