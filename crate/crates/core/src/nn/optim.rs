use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

/// Optimizer and loop settings shared by every training entry point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn new(learning_rate: f64, momentum: f64, batch_size: usize, epochs: usize, seed: u64) -> Result<Self> {
        let config = Self {
            learning_rate,
            momentum,
            batch_size,
            epochs,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Learning rate may be 0 (a frozen run); everything else is strict.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Classical momentum: `v = mu*v + g; p -= lr*v`, then clears the gradients.
pub fn sgd_step(params: &mut ParamSet, config: &TrainConfig) {
    let (lr, mu) = (config.learning_rate, config.momentum);
    for ((p, g), v) in params
        .params
        .iter_mut()
        .zip(params.grads.iter_mut())
        .zip(params.velocity.iter_mut())
    {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data_mut()).zip(v.data_mut()) {
            *vv = mu * *vv + *gv;
            // lr == 0 must leave parameters bit-identical, including signed zeros.
            if lr != 0.0 {
                *pv -= lr * *vv;
            }
            *gv = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(p: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::from_params(vec![Tensor::new(&[1], vec![p]).unwrap()]);
        ps.grads[0].data_mut()[0] = g;
        ps
    }

    fn cfg(lr: f64, mu: f64) -> TrainConfig {
        TrainConfig::new(lr, mu, 1, 1, 0).unwrap()
    }

    #[test]
    fn plain_step() {
        let mut ps = single(1.0, 2.0);
        sgd_step(&mut ps, &cfg(0.1, 0.0));
        assert!((ps.params[0].data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(ps.grads[0].data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_no_change() {
        let mut ps = single(1.5, 0.0);
        sgd_step(&mut ps, &cfg(0.1, 0.0));
        assert_eq!(ps.params[0].data()[0], 1.5);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let (lr, mu) = (0.05, 0.9);
        let (p0, g1, g2) = (0.3, 1.7, -0.6);
        let mut ps = single(p0, g1);
        sgd_step(&mut ps, &cfg(lr, mu));
        ps.grads[0].data_mut()[0] = g2;
        sgd_step(&mut ps, &cfg(lr, mu));

        let v1 = g1;
        let p1 = p0 - lr * v1;
        let v2 = mu * v1 + g2;
        let p2 = p1 - lr * v2;
        assert!((ps.params[0].data()[0] - p2).abs() < 1e-12);
        assert!((ps.velocity[0].data()[0] - v2).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut ps = single(-0.0, -3.0);
        sgd_step(&mut ps, &cfg(0.0, 0.9));
        assert_eq!(ps.params[0].data()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::new(0.1, 1.0, 1, 1, 0).is_err());
        assert!(TrainConfig::new(-0.1, 0.0, 1, 1, 0).is_err());
        assert!(TrainConfig::new(0.1, 0.0, 0, 1, 0).is_err());
        assert!(TrainConfig::new(0.1, 0.0, 1, 0, 0).is_err());
    }
}
