use serde::{Deserialize, Serialize};

use super::Module;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers follow the module's visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) {
        if self.m.is_empty() {
            let n = model.num_params();
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut at = 0;
        model.visit(&mut |p| {
            for (w, g) in p.value.iter_mut().zip(&p.grad) {
                let mi = &mut m[at];
                let vi = &mut v[at];
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                *w -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
                at += 1;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct Quad(Param);

    impl Module for Quad {
        fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut q = Quad(Param::filled(1, 3.0));
        q.0.grad[0] = 6.0;
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut q);
        assert!((q.0.value[0] - (3.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut q = Quad(Param::filled(1, 3.0));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            q.zero_grad();
            q.0.grad[0] = 2.0 * q.0.value[0];
            opt.step(&mut q);
        }
        assert!(q.0.value[0].abs() < 1e-2);
    }
}
