//! Named trainable parameters and their gradient buffers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::{Element, Matrix};

/// One trainable tensor: a value matrix plus a same-shape gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter<F: Element> {
    pub name: String,
    pub value: Matrix<F>,
    pub grad: Matrix<F>,
}

/// Ordered collection of parameters; the order defines checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParameterRegistry<F: Element> {
    params: Vec<Parameter<F>>,
}

impl<F: Element> ParameterRegistry<F> {
    pub fn new() -> Self {
        ParameterRegistry { params: Vec::new() }
    }

    /// Registers a parameter, returning its slot. Panics on duplicate names:
    /// parameter paths are assembled by the model builders and a collision is
    /// a construction bug, not a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<F>) -> usize {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name: {name}"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, slot: usize) -> &Matrix<F> {
        &self.params[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Matrix<F> {
        &mut self.params[slot].value
    }

    pub fn grad(&self, slot: usize) -> &Matrix<F> {
        &self.params[slot].grad
    }

    pub fn grad_mut(&mut self, slot: usize) -> &mut Matrix<F> {
        &mut self.params[slot].grad
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.params[slot].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    pub fn scale_grads(&mut self, s: F) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm over all gradient buffers.
    pub fn grad_norm(&self) -> F {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|&g| g * g)
            .sum::<F>()
            .sqrt()
    }

    pub fn to_f64_registry(&self) -> ParameterRegistry<f64> {
        ParameterRegistry {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.to_f64_matrix(),
                    grad: p.grad.to_f64_matrix(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn scalar_count_sums_shapes() {
        let mut reg = ParameterRegistry::<f32>::new();
        reg.add("a", Matrix::zeros(2, 3));
        reg.add("b", Matrix::zeros(4, 1));
        assert_eq!(reg.scalar_count(), 10);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut reg = ParameterRegistry::<f32>::new();
        reg.add("w", Matrix::zeros(1, 1));
        reg.add("w", Matrix::zeros(1, 1));
    }

    #[test]
    fn grad_norm_matches_hand_value() {
        let mut reg = ParameterRegistry::<f64>::new();
        let a = reg.add("a", Matrix::zeros(1, 2));
        *reg.grad_mut(a) = Matrix::from_vec(1, 2, vec![3.0, 4.0]);
        assert!((reg.grad_norm() - 5.0).abs() < 1e-12);
    }
}
