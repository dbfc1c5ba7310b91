use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction; moments are kept per parameter in store order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| vec![0.0; p.tensor.len()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on each parameter.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, p) in store.iter_mut().enumerate() {
            let Some(grad) = p.tensor.grad.clone() else {
                continue;
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i] + c.weight_decay * *w;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}
