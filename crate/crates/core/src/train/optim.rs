//! Adam with per-group learning rates and exponential decay.

use crate::scene::{DynamicScene, ParamGroup, SceneGrad};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(scene: &DynamicScene) -> Self {
        let shapes: Vec<usize> = scene.tensors().iter().map(|t| t.len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update; `lr` maps each parameter group to its current step size.
    pub fn step(&mut self, scene: &mut DynamicScene, grad: &SceneGrad, lr: impl Fn(ParamGroup) -> f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (slot, params) in scene.tensors_mut().into_iter().enumerate() {
            let rate = lr(DynamicScene::group_of(slot)) / c1;
            let g = &grad.tensors[slot];
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            for i in 0..params.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                params[i] -= rate * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
