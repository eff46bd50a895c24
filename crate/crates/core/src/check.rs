//! Self-checks behind the `gradcheck` command: finite-difference checks of
//! every layer kind on random shapes, and of the extractor gradient of a
//! small two-head model.

use rand::Rng as _;

use crate::dann::{compute_gradients, dann_forward, dann_loss, DannModel, DomainBatch, GrlConfig};
use crate::error::Result;
use crate::nn::{grad_check_report, LayerKind, LayerSpec, Network};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-5;
pub const EPSILON: f64 = 1e-5;

/// Worst error of one component of the suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub component: String,
    pub max_error: f64,
    /// Layer index and kind of the worst parameter tensor, if any.
    pub worst: Option<(usize, LayerKind)>,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

fn random_tensor(r: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// A small random network exercising `kind`, with its per-sample input
/// shape. Parameter-free kinds sit between parameterized layers so their
/// backward pass shapes the checked gradients.
pub fn random_case(kind: LayerKind, r: &mut Rng) -> (Vec<usize>, Vec<LayerSpec>) {
    let classes = r.gen_range(2..=4);
    match kind {
        LayerKind::Linear => {
            let inputs = r.gen_range(1..=8);
            let hidden = r.gen_range(1..=8);
            (
                vec![inputs],
                vec![
                    LayerSpec::Linear { inputs, outputs: hidden },
                    LayerSpec::Linear {
                        inputs: hidden,
                        outputs: classes,
                    },
                ],
            )
        }
        LayerKind::Relu => {
            let inputs = r.gen_range(1..=6);
            let hidden = r.gen_range(2..=8);
            (
                vec![inputs],
                vec![
                    LayerSpec::Linear { inputs, outputs: hidden },
                    LayerSpec::Relu,
                    LayerSpec::Linear {
                        inputs: hidden,
                        outputs: classes,
                    },
                ],
            )
        }
        LayerKind::Conv2d => {
            let in_channels = r.gen_range(1..=3);
            let out_channels = r.gen_range(1..=3);
            let kernel = r.gen_range(1..=3);
            let stride = r.gen_range(1..=2);
            let padding = r.gen_range(0..=1);
            // Sides for which the strided windows tile the padded input exactly.
            let mut side = || loop {
                let s = (kernel + stride * r.gen_range(0..=3usize)).checked_sub(2 * padding);
                if let Some(s @ 1..) = s {
                    break s;
                }
            };
            let (h, w) = (side(), side());
            let spec = LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            };
            let flat = spec
                .output_shape(&[in_channels, h, w])
                .expect("sampled shapes are valid")
                .iter()
                .product();
            (vec![in_channels, h, w], conv_tail(spec, flat, classes))
        }
        LayerKind::Maxpool => {
            let window = r.gen_range(1..=3);
            let stride = r.gen_range(1..=window);
            let channels = r.gen_range(1..=2);
            let h = window + stride * r.gen_range(0..=2);
            let w = window + stride * r.gen_range(0..=2);
            let conv = LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: channels,
                kernel: 3,
                stride: 1,
                padding: 1,
            };
            let pooled = channels * ((h - window) / stride + 1) * ((w - window) / stride + 1);
            (
                vec![1, h, w],
                vec![
                    conv,
                    LayerSpec::Maxpool { window, stride },
                    LayerSpec::Flatten,
                    LayerSpec::Linear {
                        inputs: pooled,
                        outputs: classes,
                    },
                ],
            )
        }
        LayerKind::Flatten => {
            let channels = r.gen_range(1..=3);
            let h = r.gen_range(1..=4);
            let w = r.gen_range(1..=4);
            let conv = LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: 2,
                kernel: 1,
                stride: 1,
                padding: 0,
            };
            (vec![channels, h, w], conv_tail(conv, 2 * h * w, classes))
        }
    }
}

fn conv_tail(conv: LayerSpec, flat: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        conv,
        LayerSpec::Flatten,
        LayerSpec::Linear {
            inputs: flat,
            outputs: classes,
        },
    ]
}

/// `trials` random networks exercising `kind`. `fault` is passed on to
/// [`grad_check_report`].
pub fn check_layer_kind(kind: LayerKind, trials: usize, seed: u64, fault: Option<(LayerKind, f64)>) -> Result<CheckLine> {
    let mut line = CheckLine {
        component: kind.name().to_string(),
        max_error: 0.0,
        worst: None,
    };
    for trial in 0..trials {
        let mut r = rng::rng(rng::mix(seed, trial as u64));
        let (input_shape, specs) = random_case(kind, &mut r);
        let net = Network::new(&input_shape, specs, &mut r)?;
        let batch = r.gen_range(1..=3);
        let mut shape = vec![batch];
        shape.extend_from_slice(&input_shape);
        let x = random_tensor(&mut r, &shape);
        let classes = net.output_width();
        let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..classes)).collect();
        let report = grad_check_report(&net, &x, &labels, EPSILON, fault)?;
        if report.max_error > line.max_error || line.worst.is_none() {
            line.max_error = line.max_error.max(report.max_error);
            line.worst = report.worst().map(|(layer, kind, _)| (layer, kind));
        }
    }
    Ok(line)
}

/// A two-head model with well under 2000 parameters.
pub fn tiny_model(seed: u64) -> Result<DannModel> {
    let mut r = rng::rng(seed);
    let feature = Network::new(
        &[6],
        vec![
            LayerSpec::Linear { inputs: 6, outputs: 10 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 10, outputs: 8 },
            LayerSpec::Relu,
        ],
        &mut r,
    )?;
    let source_head = Network::new(&[8], vec![LayerSpec::Linear { inputs: 8, outputs: 2 }], &mut r)?;
    let domain_head = Network::new(
        &[8],
        vec![
            LayerSpec::Linear { inputs: 8, outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 6, outputs: 2 },
        ],
        &mut r,
    )?;
    DannModel::from_parts(feature, source_head, domain_head, GrlConfig::default())
}

pub fn tiny_batch(seed: u64) -> Result<DomainBatch> {
    let mut r = rng::rng(seed);
    let source = random_tensor(&mut r, &[4, 6]);
    let labels = (0..4).map(|_| r.gen_range(0..2)).collect();
    let target = random_tensor(&mut r, &[3, 6]);
    DomainBatch::new(source, labels, target)
}

/// Largest relative error between the extractor gradient of
/// [`compute_gradients`] and central differences of
/// `l_source - lambda * l_domain` with respect to the extractor parameters.
pub fn routing_error(model: &DannModel, batch: &DomainBatch, lambda: f64) -> Result<f64> {
    let mut m = model.clone();
    compute_gradients(&mut m, batch, lambda)?;
    let analytic = m.feature.params.grads.clone();
    let objective = |m: &DannModel| -> Result<f64> {
        let f = dann_forward(m, batch)?;
        let l = dann_loss(&f.source_logits, &batch.source_labels, &f.domain_logits)?;
        Ok(l.l_source - lambda * l.l_domain)
    };
    let mut worst = 0.0f64;
    for t in 0..analytic.len() {
        for k in 0..analytic[t].len() {
            let original = m.feature.params.params[t].data()[k];
            m.feature.params.params[t].data_mut()[k] = original + EPSILON;
            let plus = objective(&m)?;
            m.feature.params.params[t].data_mut()[k] = original - EPSILON;
            let minus = objective(&m)?;
            m.feature.params.params[t].data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let a = analytic[t].data()[k];
            worst = worst.max((a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs()));
        }
    }
    Ok(worst)
}

/// Every layer kind over `trials` random shapes, then the routing check for
/// lambda in {0, 0.5, 1}.
pub fn gradcheck_suite(trials: usize, seed: u64, fault: Option<(LayerKind, f64)>) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for (i, kind) in LayerKind::ALL.into_iter().enumerate() {
        lines.push(check_layer_kind(kind, trials, rng::mix(seed, i as u64), fault)?);
    }
    let model = tiny_model(rng::mix(seed, 100))?;
    let batch = tiny_batch(rng::mix(seed, 101))?;
    for lambda in [0.0, 0.5, 1.0] {
        lines.push(CheckLine {
            component: format!("grl routing (lambda {lambda})"),
            max_error: routing_error(&model, &batch, lambda)?,
            worst: None,
        });
    }
    Ok(lines)
}
