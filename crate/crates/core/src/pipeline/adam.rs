use serde::{Deserialize, Serialize};

use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// Adam with bias correction. Each parameter keeps its own step count, so a
/// parameter that receives no gradient in a step (a prompt whose chunk was
/// not sampled) is left untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    state: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            config,
            state: sizes
                .into_iter()
                .map(|n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    steps: 0,
                })
                .collect(),
        }
    }

    /// Updates parameter `index` in place.
    pub fn step(&mut self, index: usize, param: &mut Tensor4<f32>, grad: &Tensor4<f32>, lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        let st = &mut self.state[index];
        st.steps += 1;
        let c1 = 1.0 - beta1.powi(st.steps as i32);
        let c2 = 1.0 - beta2.powi(st.steps as i32);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(st.m.iter_mut())
            .zip(st.v.iter_mut())
        {
            let g = *g as f64;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = (*p as f64 - update) as f32;
        }
    }
}
