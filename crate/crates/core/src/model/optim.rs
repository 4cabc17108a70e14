//! Momentum SGD with step learning-rate decay.

use super::params::{ModelParams, Scalar};

/// `v ← μ·v + g; w ← w − lr·v` applied to every trainable tensor.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    pub momentum: f64,
    velocity: ModelParams<S>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(params: &ModelParams<S>, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: ModelParams::zeros(&params.config),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &ModelParams<S>, lr: f64) {
        let mu = S::of(self.momentum);
        let lr = S::of(lr);
        let grads = grads.tensors();
        for (((kind, w), (_, v)), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.velocity.tensors_mut())
            .zip(grads)
        {
            if !kind.trainable() {
                continue;
            }
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + *g;
                *w = *w - lr * *v;
            }
        }
    }
}

/// Learning rate for `epoch` (0-based): `base · 0.1^k`, `k` = milestones reached.
pub fn step_lr(base: f64, milestones: &[usize], epoch: usize) -> f64 {
    let k = milestones.iter().filter(|m| epoch >= **m).count();
    base * 0.1f64.powi(k as i32)
}
