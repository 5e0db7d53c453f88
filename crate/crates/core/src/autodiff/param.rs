use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::Tensor;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a [`Parameter`], used to route gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// First/second moment estimates and step count of one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

/// A trainable tensor with a stable name such as `E_S/conv1/weight`.
#[derive(Debug)]
pub struct Parameter {
    id: ParamId,
    name: String,
    tensor: Tensor,
    adam: AdamState,
}

impl Clone for Parameter {
    /// The copy gets a new identity so gradients never leak between the two.
    fn clone(&self) -> Self {
        Parameter {
            id: ParamId::fresh(),
            name: self.name.clone(),
            tensor: self.tensor.clone(),
            adam: self.adam.clone(),
        }
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.set_requires_grad(true);
        let n = tensor.numel();
        Parameter {
            id: ParamId::fresh(),
            name: name.into(),
            tensor,
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    /// Weight initialised uniformly in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let tensor = Tensor::new(shape.to_vec(), data).expect("shape/product agree");
        Parameter::new(name, tensor)
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f32) -> Self {
        Parameter::new(name, Tensor::full(shape, value))
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn value(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.tensor.grad()
    }

    pub fn zero_grad(&mut self) {
        self.tensor.zero_grad();
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Tensor, &mut AdamState) {
        (&mut self.tensor, &mut self.adam)
    }

    /// Overwrites values and optimizer state with those of `src`.
    pub(crate) fn copy_from(&mut self, src: &Parameter) {
        self.tensor = src.tensor.clone();
        self.tensor.set_requires_grad(true);
        self.adam = src.adam.clone();
    }

    /// Replaces the values; resets the optimizer state.
    pub(crate) fn load_values(&mut self, data: Vec<f32>) {
        let shape = self.tensor.shape().to_vec();
        let mut t = Tensor::new(shape, data).expect("caller validated length");
        t.set_requires_grad(true);
        let n = t.numel();
        self.tensor = t;
        self.adam = AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clone_gets_new_identity() {
        let p = Parameter::constant("w", &[2], 1.0);
        let q = p.clone();
        assert_ne!(p.id(), q.id());
        assert_eq!(p.value(), q.value());
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Parameter::glorot("w", &[20, 30], 20, 30, &mut rng);
        let bound = (6.0f32 / 50.0).sqrt();
        assert!(p.value().iter().all(|v| v.abs() <= bound));
        assert_eq!(p.adam_state().m.len(), 600);
    }
}
