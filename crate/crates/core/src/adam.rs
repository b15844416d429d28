//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Optimizer state: one pair of moment buffers per parameter, aligned with
/// the store's registration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step_count: u64,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(learning_rate: f32, store: &ParamStore) -> Self {
        let first_moment = store
            .iter()
            .map(|(_, _, t)| vec![0.0f32; t.numel()])
            .collect::<Vec<_>>();
        let second_moment = first_moment.clone();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter, then zero all gradients.
    /// Fails if any parameter is missing its gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (id, name, t) in store.iter() {
            if t.grad().is_none() {
                let _ = id;
                return Err(Error::MissingGrad(name.to_string()));
            }
        }
        self.step_count += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step_count as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step_count as i32);
        for i in 0..store.len() {
            let id = crate::tensor::ParamId(i);
            let t = store.tensor_mut(id);
            let grad = t.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = (m[j] as f64 / bc1) as f32;
                let v_hat = (v[j] as f64 / bc2) as f32;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            t.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_param(value: f32) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::new(vec![1], vec![value]).unwrap());
        store
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = single_param(0.37);
        let id = store.id_of("p").unwrap();
        store.tensor_mut(id).accumulate_grad(&[0.0]);
        let mut adam = AdamState::new(0.1, &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.tensor(id).data(), &[0.37]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // p = 0, grad = 1, lr = 0.1: bias-corrected first step gives
        // m_hat = v_hat = 1, so p goes to about -0.1.
        let mut store = single_param(0.0);
        let id = store.id_of("p").unwrap();
        store.tensor_mut(id).accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(0.1, &store);
        adam.step(&mut store).unwrap();
        let p = store.tensor(id).data()[0];
        assert!((p + 0.1).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn two_steps_differ_from_one_double_step() {
        let run = |grads: &[f32], lr: f32| {
            let mut store = single_param(0.0);
            let id = store.id_of("p").unwrap();
            let mut adam = AdamState::new(lr, &store);
            for &g in grads {
                store.tensor_mut(id).accumulate_grad(&[g]);
                adam.step(&mut store).unwrap();
            }
            store.tensor(id).data()[0]
        };
        let twice = run(&[1.0, 1.0], 0.1);
        let once_double = run(&[2.0], 0.1);
        assert!((twice - once_double).abs() > 1e-4, "{twice} vs {once_double}");
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = single_param(1.0);
        let mut adam = AdamState::new(0.1, &store);
        assert!(matches!(adam.step(&mut store), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn step_count_increments_and_grads_zeroed() {
        let mut store = single_param(0.0);
        let id = store.id_of("p").unwrap();
        let mut adam = AdamState::new(0.1, &store);
        store.tensor_mut(id).accumulate_grad(&[1.0]);
        adam.step(&mut store).unwrap();
        assert_eq!(adam.step_count(), 1);
        assert_eq!(store.tensor(id).grad().unwrap(), &[0.0]);
    }
}
