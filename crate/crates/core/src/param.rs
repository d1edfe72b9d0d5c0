//! Named trainable parameters and their gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::rng::{self, Prng};
use crate::tensor::Tensor;

/// A trainable tensor plus its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat registry of parameters; networks hold one and hand out ids.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique; they key checkpoints.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: String::from(name),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.axpy(1.0, g);
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Kaiming-uniform fan-in initialization for a conv/linear weight.
/// `fan_in` is input channels times receptive-field size.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Prng) -> Tensor {
    assert!(fan_in > 0);
    let bound = math::sqrtf(6.0 / fan_in as f32);
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(rng::uniform(rng, -bound, bound));
    }
    Tensor::from_vec(shape, data)
}
