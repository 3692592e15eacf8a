use serde::{Deserialize, Serialize};

use super::{Real, Result, Tensor, TensorError};

/// Trainable tensor with its gradient slot and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub velocity: Vec<T>,
    /// Multiplier on the global learning rate for this parameter.
    pub lr_scale: f64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let velocity = vec![T::zero(); value.numel()];
        Self {
            name: name.into(),
            value,
            grad: None,
            velocity,
            lr_scale: 1.0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[T]) {
        match &mut self.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(a, &b)| *a += b),
            None => {
                self.grad = Some(Tensor::new(self.value.shape(), g.to_vec()).expect("grad shape"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 100,
            warmup_epochs: 10,
            decay_epochs: vec![20, 50],
            decay_factor: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.base_lr > 0.0) {
            return Err(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
        }
    }
}

/// Linear warm-up from `0.01 * base_lr` followed by step decay.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let start = 0.01 * self.base_lr;
            return start + (self.base_lr - start) * epoch as f64 / self.warmup_epochs as f64;
        }
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }
}

/// One Nesterov momentum step with L2 weight decay folded into the gradient.
///
/// `g' = g + wd * p`, `v = mu * v + g'`, `p -= lr * (g' + mu * v)`.
pub fn sgd_nesterov_step<T: Real>(
    params: &mut [Parameter<T>],
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(TensorError::MissingGrad(p.name.clone()));
    }
    let (lr, mu, wd) = (T::cst(lr), T::cst(cfg.momentum), T::cst(cfg.weight_decay));
    for p in params.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        let lr = lr * T::cst(p.lr_scale);
        for ((w, v), &g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.velocity.iter_mut())
            .zip(grad.data())
        {
            let g = g + wd * *w;
            *v = mu * *v + g;
            *w -= lr * (g + mu * *v);
        }
    }
    Ok(())
}
