use serde::{Deserialize, Serialize};

use crate::tensor::ParamGroup;

/// SGD with momentum and weight decay.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> SgdConfig {
        SgdConfig {
            learning_rate,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }

    pub fn plain(learning_rate: f64) -> SgdConfig {
        SgdConfig {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// velocity <- momentum*velocity - lr*(grad + wd*value); value <- value + velocity.
/// Frozen groups are left untouched except that their grads are cleared.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut ParamGroup>, cfg: &SgdConfig) {
    for p in params {
        if !p.frozen {
            for i in 0..p.value.len() {
                let g = p.grad.data()[i] + cfg.weight_decay * p.value.data()[i];
                let v = cfg.momentum * p.velocity.data()[i] - cfg.learning_rate * g;
                p.velocity.data_mut()[i] = v;
                p.value.data_mut()[i] += v;
            }
        }
        p.clear_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn group(value: f64, grad: f64) -> ParamGroup {
        let mut p = ParamGroup::new("p", Tensor::from_vec(&[1], vec![value]).unwrap());
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn plain_step() {
        let mut p = group(1.0, 0.5);
        sgd_step([&mut p], &SgdConfig::plain(1.0));
        assert_eq!(p.value.data()[0], 0.5);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn weight_decay_only() {
        let mut p = group(2.0, 0.0);
        let cfg = SgdConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0005,
        };
        sgd_step([&mut p], &cfg);
        assert!((p.value.data()[0] - 1.999).abs() < 1e-12);
    }

    #[test]
    fn momentum_recurrence() {
        // two steps with constant grad g: second delta = -lr*g*(1+momentum)
        let lr = 0.1;
        let g = 0.7;
        let mut p = group(0.0, g);
        let cfg = SgdConfig {
            learning_rate: lr,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step([&mut p], &cfg);
        let after_first = p.value.data()[0];
        p.grad.data_mut()[0] = g;
        sgd_step([&mut p], &cfg);
        let second_delta = p.value.data()[0] - after_first;
        assert!((second_delta - (-lr * g * 1.9)).abs() < 1e-12);
    }

    #[test]
    fn frozen_group_untouched() {
        let mut p = group(3.0, 1.0);
        p.velocity.data_mut()[0] = 0.25;
        p.frozen = true;
        let before_value = p.value.clone();
        let before_velocity = p.velocity.clone();
        sgd_step([&mut p], &SgdConfig::new(0.1));
        assert_eq!(p.value, before_value);
        assert_eq!(p.velocity, before_velocity);
        assert_eq!(p.grad.data()[0], 0.0);
    }
}
