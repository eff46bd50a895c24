use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the gradient-reversal coefficient evolves over training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrlConfig {
    /// Fixed coefficient for the whole run.
    Constant { lambda0: f64 },
    /// `2 / (1 + exp(-gamma * p)) - 1` over training progress `p`.
    Annealed { gamma: f64 },
}

impl Default for GrlConfig {
    fn default() -> Self {
        GrlConfig::Constant { lambda0: 1.0 }
    }
}

impl GrlConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GrlConfig::Constant { lambda0 } if !(lambda0 >= 0.0 && lambda0.is_finite()) => Err(Error::Config(
                format!("lambda0 must be finite and >= 0, got {lambda0}"),
            )),
            GrlConfig::Annealed { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(Error::Config(format!(
                "gamma must be finite and > 0, got {gamma}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Largest `f64` below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Reversal coefficient at training progress `progress ∈ [0, 1]`.
pub fn lambda_at(config: &GrlConfig, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::Input(format!(
            "progress must be in [0, 1], got {progress}"
        )));
    }
    Ok(match *config {
        GrlConfig::Constant { lambda0 } => lambda0,
        // Rounds to 1.0 once gamma * progress exceeds about 37; keep it below.
        GrlConfig::Annealed { gamma } => (2.0 / (1.0 + (-gamma * progress).exp()) - 1.0).min(BELOW_ONE),
    })
}

/// Forward pass of the reversal layer: the identity.
pub fn grl_forward(x: &Tensor) -> Tensor {
    x.clone()
}

/// Backward pass of the reversal layer: `-lambda * grad_out`.
pub fn grl_backward(grad_out: &Tensor, lambda: f64) -> Tensor {
    grad_out.scale(-lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_identity() {
        let x = Tensor::new(&[2], vec![1.5, -2.0]).unwrap();
        assert!(grl_forward(&x).bit_eq(&x));
        let empty = Tensor::zeros(&[0]);
        assert!(grl_forward(&empty).is_empty());
    }

    #[test]
    fn backward_negates_and_scales() {
        let g = Tensor::new(&[2], vec![0.2, -0.4]).unwrap();
        assert_eq!(grl_backward(&g, 1.0).data(), &[-0.2, 0.4]);
        assert!(grl_backward(&g, 0.0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedule() {
        let c = GrlConfig::Constant { lambda0: 0.7 };
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(lambda_at(&c, p).unwrap(), 0.7);
        }
        let a = GrlConfig::Annealed { gamma: 10.0 };
        assert_eq!(lambda_at(&a, 0.0).unwrap(), 0.0);
        // 2/(1+e^-10) - 1 = 0.99990920...
        assert!((lambda_at(&a, 1.0).unwrap() - 0.999909).abs() < 1e-6);
        assert!(lambda_at(&a, 1.5).is_err());
        assert!(lambda_at(&a, -0.1).is_err());
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&GrlConfig::default()).unwrap();
        assert_eq!(json, r#"{"mode":"constant","lambda0":1.0}"#);
        let back: GrlConfig = serde_json::from_str(r#"{"mode":"annealed","gamma":10.0}"#).unwrap();
        assert_eq!(back, GrlConfig::Annealed { gamma: 10.0 });
    }
}
