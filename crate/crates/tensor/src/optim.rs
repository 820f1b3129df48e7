//! Named parameters with gradient accumulators and the Adam optimizer.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A named trainable value plus its Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub m: Tensor<F>,
    pub v: Tensor<F>,
}

/// Ordered collection of named parameters. Insertion order is part of
/// the contract: checkpoints and update sweeps walk it deterministically.
pub struct ParamStore<F> {
    entries: Vec<Parameter<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::invalid(
                "param_store",
                format!("duplicate parameter name `{name}`"),
            ));
        }
        let shape = value.shape().to_vec();
        let id = ParamId(self.entries.len());
        self.entries.push(Parameter {
            name: name.clone(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.entries.iter_mut()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor<F>) {
        let g = &mut self.entries[id.0].grad;
        for (o, &d) in g.data_mut().iter_mut().zip(delta.data()) {
            *o += d;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            for v in p.grad.data_mut() {
                *v = F::zero();
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}

/// Bias-corrected Adam.
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: F) -> Self {
        Adam {
            lr,
            beta1: F::c(0.9),
            beta2: F::c(0.999),
            eps: F::c(1e-8),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the store using its
    /// accumulated gradient. Gradients are left untouched; call
    /// [`ParamStore::zero_grad`] before the next backward pass.
    pub fn step(&mut self, store: &mut ParamStore<F>) {
        self.step += 1;
        let t = F::c(self.step as f64);
        let bc1 = F::one() - self.beta1.powf(t);
        let bc2 = F::one() - self.beta2.powf(t);
        for p in store.entries_mut() {
            for k in 0..p.value.len() {
                let g = p.grad.data()[k];
                let m = self.beta1 * p.m.data()[k] + (F::one() - self.beta1) * g;
                let v = self.beta2 * p.v.data()[k] + (F::one() - self.beta2) * g * g;
                p.m.data_mut()[k] = m;
                p.v.data_mut()[k] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data_mut()[k] =
                    p.value.data()[k] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_exactly_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Tensor::new(&[2], vec![1.5, -0.5]).unwrap())
            .unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        assert_eq!(store.value(id).data(), &[1.5, -0.5]);
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(0.0)).unwrap();
        let mut adam = Adam::new(0.01);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..500 {
            store.zero_grad();
            store.accumulate_grad(id, &Tensor::scalar(3.0));
            adam.step(&mut store);
            let cur = store.value(id).item();
            last_delta = (cur - prev).abs();
            prev = cur;
        }
        // |update| -> lr * sign(g) in the constant-gradient limit
        assert!((last_delta - 0.01).abs() < 1e-4, "delta {last_delta}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, grad 2w
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            store.zero_grad();
            let g = 2.0 * store.value(id).item();
            store.accumulate_grad(id, &Tensor::scalar(g));
            adam.step(&mut store);
        }
        assert!(store.value(id).item().abs() < 1e-3);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::scalar(0.0)).unwrap();
        assert!(store.add("w", Tensor::scalar(0.0)).is_err());
    }
}
