use serde::{Deserialize, Serialize};

/// Adam with L2 weight decay folded into the gradient.
///
/// Moments are stored as `f32` so optimizer state round-trips through
/// checkpoints exactly; each update is computed in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f32>>,
    #[serde(skip)]
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(shapes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                let theta = p[j] as f64;
                let grad = g[j] + self.weight_decay * theta;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * grad;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * grad * grad;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = m[j] as f64 / bc1;
                let vhat = v[j] as f64 / bc2;
                p[j] = (theta - lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_without_decay_leave_params() {
        let mut params = vec![vec![0.5f32, -1.25, 3.0], vec![0.1]];
        let before = params.clone();
        let mut adam = Adam::new(&[3, 1], 0.0);
        for _ in 0..10 {
            adam.update(&mut params, &[vec![0.0; 3], vec![0.0]], 1e-3);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr * sign(g)
        let mut params = vec![vec![1.0f32]];
        let mut adam = Adam::new(&[1], 0.0);
        adam.update(&mut params, &[vec![0.3]], 0.01);
        assert!((params[0][0] as f64 - 0.99).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut params = vec![vec![2.0f32]];
        let mut adam = Adam::new(&[1], 0.1);
        adam.update(&mut params, &[vec![0.0]], 0.01);
        assert!(params[0][0] < 2.0);
    }
}
