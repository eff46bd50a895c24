use super::{softmax_cross_entropy, LayerKind, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst relative error per parameter tensor, as found by [`grad_check_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `(layer index, layer kind, max relative error)` per parameter tensor.
    pub per_tensor: Vec<(usize, LayerKind, f64)>,
    pub max_error: f64,
}

impl GradCheckReport {
    /// The layer holding the worst parameter, if the network has any.
    pub fn worst(&self) -> Option<(usize, LayerKind, f64)> {
        self.per_tensor
            .iter()
            .copied()
            .max_by(|a, b| a.2.total_cmp(&b.2))
    }
}

fn mean_loss(net: &Network, input: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = net.infer(input)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Compares backprop gradients of mean softmax cross-entropy over `network`
/// against central differences. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`; 0 for a network
/// without parameters.
pub fn grad_check(network: &Network, input: &Tensor, labels: &[usize], epsilon: f64) -> Result<f64> {
    Ok(grad_check_report(network, input, labels, epsilon, None)?.max_error)
}

/// [`grad_check`] with per-tensor detail. `fault` adds a constant to every
/// analytic gradient flowing out of layers of the given kind before the
/// comparison, which must then fail.
pub fn grad_check_report(
    network: &Network,
    input: &Tensor,
    labels: &[usize],
    epsilon: f64,
    fault: Option<(LayerKind, f64)>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "epsilon must be in [1e-7, 1e-3], got {epsilon}"
        )));
    }
    let mut net = network.clone();
    net.params.zero_grads();
    let (logits, cache) = net.forward(input)?;
    let (_, grad_logits) = softmax_cross_entropy(&logits, labels)?;
    let mut hook = |kind: LayerKind, g: &mut Tensor| {
        if let Some((target, delta)) = fault {
            if kind == target {
                g.data_mut().iter_mut().for_each(|v| *v += delta);
            }
        }
    };
    net.backward_with(&cache, &grad_logits, &mut hook)?;
    let analytic = std::mem::take(&mut net.params.grads);

    let owners = net.param_owners();
    let mut per_tensor = Vec::with_capacity(owners.len());
    let mut max_error = 0.0f64;
    for (t, (layer, kind)) in owners.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..analytic[t].len() {
            let original = net.params.params[t].data()[k];
            net.params.params[t].data_mut()[k] = original + epsilon;
            let plus = mean_loss(&net, input, labels)?;
            net.params.params[t].data_mut()[k] = original - epsilon;
            let minus = mean_loss(&net, input, labels)?;
            net.params.params[t].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[t].data()[k];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
        max_error = max_error.max(worst);
        per_tensor.push((layer, kind, worst));
    }
    Ok(GradCheckReport {
        per_tensor,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::rng;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::rng(seed);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_linear() {
        let net = Network::new(
            &[4],
            vec![LayerSpec::Linear { inputs: 4, outputs: 3 }],
            &mut rng::rng(1),
        )
        .unwrap();
        let err = grad_check(&net, &random(&[5, 4], 2), &[0, 1, 2, 1, 0], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_relu_pool_flatten_linear() {
        let specs = vec![
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 12, outputs: 2 },
        ];
        let net = Network::new(&[2, 4, 4], specs, &mut rng::rng(3)).unwrap();
        let err = grad_check(&net, &random(&[3, 2, 4, 4], 4), &[0, 1, 1], 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn parameter_free_network_is_zero() {
        let net = Network::new(&[3], vec![LayerSpec::Relu], &mut rng::rng(0)).unwrap();
        assert_eq!(grad_check(&net, &random(&[2, 3], 5), &[0, 2], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn injected_fault_is_caught_and_located() {
        let specs = vec![
            LayerSpec::Linear { inputs: 4, outputs: 5 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 5, outputs: 2 },
        ];
        let net = Network::new(&[4], specs, &mut rng::rng(6)).unwrap();
        let x = random(&[3, 4], 7);
        let report = grad_check_report(&net, &x, &[0, 1, 0], 1e-5, Some((LayerKind::Relu, 1e-3))).unwrap();
        assert!(report.max_error > 1e-5);
        // The corrupted signal only reaches the layer before the relu.
        assert_eq!(report.worst().unwrap().0, 0);
    }

    #[test]
    fn epsilon_bounds() {
        let net = Network::new(&[3], vec![LayerSpec::Relu], &mut rng::rng(0)).unwrap();
        assert!(grad_check(&net, &random(&[1, 3], 5), &[0], 1e-2).is_err());
    }
}
