//! Adam with bias-corrected moment estimates over a flat parameter slice.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// One descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_coordinate_by_the_learning_rate() {
        let mut adam = Adam::new(3, 0.05);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[3.0, -0.01, 100.0]);
        let moved: Vec<f64> = p.iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        assert!((moved[0] + 0.05).abs() < 1e-6);
        assert!((moved[1] - 0.05).abs() < 1e-5);
        assert!((moved[2] + 0.05).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.3, 0.7];
        for _ in 0..100 {
            adam.step(&mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn identical_optimizers_stay_identical() {
        let mut a = Adam::new(2, 0.01);
        let mut b = a.clone();
        let (mut pa, mut pb) = (vec![1.0, 2.0], vec![1.0, 2.0]);
        for k in 0..20 {
            let g = [k as f64 - 7.0, (k as f64).sin()];
            a.step(&mut pa, &g);
            b.step(&mut pb, &g);
        }
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = Adam::new(1, 0.1);
        let mut p = vec![5.0];
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 1.0)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
