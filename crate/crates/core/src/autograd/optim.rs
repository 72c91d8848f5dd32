//! First-order optimizers over [`Parameter`]s.

use super::Parameter;

pub trait Optimizer {
    /// Applies one update using the gradients currently stored on `params`.
    fn step(&mut self, params: &mut [&mut Parameter]);
}

/// Plain gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Parameter]) {
        for p in params.iter_mut().filter(|p| p.trainable) {
            let lr = self.lr;
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data().to_vec()) {
                *v -= lr * g;
            }
        }
    }
}

/// Adam with bias correction. Moment buffers are matched to parameters by
/// position, so pass the same parameter list in the same order every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = p.grad.data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_grad_leaves_parameter() {
        let mut p = Parameter::new(Tensor::full(&[3], 1.5));
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]);
        assert_eq!(p.value, Tensor::full(&[3], 1.5));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new(Tensor::scalar(2.0));
        p.grad = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]);
        assert!((p.value.item() - 1.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_is_skipped_and_runs_repeat() {
        let run = || {
            let mut a = Parameter::new(Tensor::from_fn(&[4], |i| i as f32));
            let mut b = Parameter::frozen(Tensor::full(&[2], 1.0));
            let mut opt = Adam::new(0.01);
            for s in 0..5 {
                a.grad = Tensor::from_fn(&[4], |i| (i + s) as f32 * 0.3 - 0.5);
                b.grad = Tensor::full(&[2], 1.0);
                opt.step(&mut [&mut a, &mut b]);
            }
            (a.value, b.value)
        };
        let (a1, b1) = run();
        let (a2, _) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, Tensor::full(&[2], 1.0));
    }

    #[test]
    fn sgd_step() {
        let mut p = Parameter::new(Tensor::scalar(1.0));
        p.grad = Tensor::scalar(0.5);
        Sgd { lr: 0.2 }.step(&mut [&mut p]);
        assert!((p.value.item() - 0.9).abs() < 1e-7);
    }
}
