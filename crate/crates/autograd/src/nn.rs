//! Parameter storage and convolution layers.

use std::rc::Rc;

use rand::Rng;

use crate::tensor::{numel_of, Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    value: Rc<Vec<f32>>,
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct Params {
    entries: Vec<Entry>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f32>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), numel_of(shape), "parameter {name}: bad length");
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name,
            shape: shape.to_vec(),
            value: Rc::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f32> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Binds every parameter as a gradient-collecting leaf.
    pub fn bind(&self) -> Bound {
        self.bind_where(|_| true)
    }

    /// Binds every parameter as a constant (no graph is recorded).
    pub fn bind_frozen(&self) -> Bound {
        self.bind_where(|_| false)
    }

    /// Binds parameters for which `trainable` holds as leaves, the rest as constants.
    pub fn bind_where(&self, trainable: impl Fn(&str) -> bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| Tensor::from_shared(Rc::clone(&e.value), &e.shape, trainable(&e.name)))
                .collect(),
        }
    }
}

/// Parameters materialized as tensors for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.vars[id.0]
    }

    /// Gradient per parameter (`None` for constants and unused parameters).
    pub fn collect(&self, grads: &Gradients) -> Vec<Option<Vec<f32>>> {
        self.vars
            .iter()
            .map(|v| {
                if v.requires_grad() {
                    Some(grads.get_or_zeros(v))
                } else {
                    None
                }
            })
            .collect()
    }
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// He-uniform bound for leaky-ReLU stacks.
fn he_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in as f32).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square-kernel convolution with "same"-style padding `k / 2`.
    pub fn new(
        params: &mut Params,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [cout, cin, kernel, kernel];
        let w = uniform(rng, numel_of(&shape), he_bound(cin * kernel * kernel));
        Self::with_weights(params, name, &shape, w, stride)
    }

    /// Convolution whose weights and bias start at zero.
    pub fn zeroed(params: &mut Params, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let shape = [cout, cin, kernel, kernel];
        Self::with_weights(params, name, &shape, vec![0.0; numel_of(&shape)], stride)
    }

    fn with_weights(params: &mut Params, name: &str, shape: &[usize; 4], w: Vec<f32>, stride: usize) -> Self {
        let weight = params.add(format!("{name}.weight"), shape, w);
        let bias = params.add(format!("{name}.bias"), &[shape[0]], vec![0.0; shape[0]]);
        Self {
            weight,
            bias,
            stride,
            pad: shape[2] / 2,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        x.conv2d(p.get(self.weight), Some(p.get(self.bias)), self.stride, self.pad)
    }
}

/// Stride-2 transposed convolution that exactly doubles the spatial size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl ConvTranspose2d {
    /// `kernel` must be odd; padding `k / 2` and output padding 1 give a 2× upsample.
    pub fn new(params: &mut Params, name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "transposed conv kernel must be odd");
        let shape = [cin, cout, kernel, kernel];
        let w = uniform(rng, numel_of(&shape), he_bound((cin * kernel * kernel / 4).max(1)));
        let weight = params.add(format!("{name}.weight"), &shape, w);
        let bias = params.add(format!("{name}.bias"), &[cout], vec![0.0; cout]);
        Self { weight, bias, kernel }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        x.conv_transpose2d(p.get(self.weight), Some(p.get(self.bias)), 2, self.kernel / 2, 1)
    }
}
