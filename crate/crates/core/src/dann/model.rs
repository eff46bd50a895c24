use serde::{Deserialize, Serialize};

use super::grl::{grl_backward, grl_forward, GrlConfig};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, softmax_cross_entropy, ForwardCache, LayerSpec, Network, TrainConfig};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Authentic / forged.
pub const NUM_CLASSES: usize = 2;
/// Source (0) / target (1).
pub const NUM_DOMAINS: usize = 2;
pub const SOURCE_DOMAIN: usize = 0;
pub const TARGET_DOMAIN: usize = 1;

/// Layer lists for the three parameter groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backbone {
    pub feature: Vec<LayerSpec>,
    pub source_head: Vec<LayerSpec>,
    pub domain_head: Vec<LayerSpec>,
}

impl Backbone {
    pub const PRESETS: [&'static str; 2] = ["small-cnn", "mlp"];

    /// Named architecture sized for per-sample input `[C, H, W]`.
    ///
    /// * `small-cnn`: conv3x3(8) relu pool2 conv3x3(16) relu global-maxpool flatten linear(32) relu,
    ///   source head linear(2), domain head linear(32) relu linear(2).
    /// * `mlp`: flatten linear(64) relu linear(32) relu, same heads.
    pub fn preset(name: &str, input_shape: &[usize]) -> Result<Self> {
        let heads = |width: usize| {
            (
                vec![LayerSpec::Linear {
                    inputs: width,
                    outputs: NUM_CLASSES,
                }],
                vec![
                    LayerSpec::Linear {
                        inputs: width,
                        outputs: 32,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Linear {
                        inputs: 32,
                        outputs: NUM_DOMAINS,
                    },
                ],
            )
        };
        match name {
            "small-cnn" => {
                let &[c, h, w] = input_shape else {
                    return Err(Error::Config(format!(
                        "small-cnn needs [C, H, W] input, got {input_shape:?}"
                    )));
                };
                if h != w || h % 2 != 0 || h < 4 {
                    return Err(Error::Config(format!(
                        "small-cnn needs a square input with an even side of at least 4, got {h}x{w}"
                    )));
                }
                let global = h / 2;
                let feature = vec![
                    LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: 8,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Maxpool { window: 2, stride: 2 },
                    LayerSpec::Conv2d {
                        in_channels: 8,
                        out_channels: 16,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Maxpool {
                        window: global,
                        stride: global,
                    },
                    LayerSpec::Flatten,
                    LayerSpec::Linear {
                        inputs: 16,
                        outputs: 32,
                    },
                    LayerSpec::Relu,
                ];
                let (source_head, domain_head) = heads(32);
                Ok(Self {
                    feature,
                    source_head,
                    domain_head,
                })
            }
            "mlp" => {
                let feature = vec![
                    LayerSpec::Flatten,
                    LayerSpec::Linear {
                        inputs: input_shape.iter().product(),
                        outputs: 64,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Linear {
                        inputs: 64,
                        outputs: 32,
                    },
                    LayerSpec::Relu,
                ];
                let (source_head, domain_head) = heads(32);
                Ok(Self {
                    feature,
                    source_head,
                    domain_head,
                })
            }
            other => Err(Error::Config(format!(
                "unknown backbone preset {other:?} (expected one of {:?})",
                Self::PRESETS
            ))),
        }
    }
}

/// Shared feature extractor with a class head and a domain head behind a
/// gradient-reversal layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DannModel {
    pub feature: Network,
    pub source_head: Network,
    pub domain_head: Network,
    pub grl: GrlConfig,
}

impl DannModel {
    /// Initializes the feature extractor, then the source head, then the
    /// domain head from one generator seeded with `seed`.
    pub fn new(input_shape: &[usize], backbone: Backbone, grl: GrlConfig, seed: u64) -> Result<Self> {
        let mut rng: Rng = rng::rng(seed);
        let feature = Network::new(input_shape, backbone.feature, &mut rng)?;
        let width = feature.output_shape().to_vec();
        let source_head = Network::new(&width, backbone.source_head, &mut rng)?;
        let domain_head = Network::new(&width, backbone.domain_head, &mut rng)?;
        Self::from_parts(feature, source_head, domain_head, grl)
    }

    pub fn from_parts(feature: Network, source_head: Network, domain_head: Network, grl: GrlConfig) -> Result<Self> {
        grl.validate()?;
        if feature.output_shape().len() != 1 {
            return Err(Error::Config(format!(
                "feature extractor must end in a flat vector, got {:?}",
                feature.output_shape()
            )));
        }
        for (name, head) in [("source", &source_head), ("domain", &domain_head)] {
            if head.input_shape() != feature.output_shape() {
                return Err(Error::Config(format!(
                    "{name} head expects {:?} features, extractor yields {:?}",
                    head.input_shape(),
                    feature.output_shape()
                )));
            }
        }
        if source_head.output_shape() != [NUM_CLASSES] {
            return Err(Error::Config(format!(
                "source head must output {NUM_CLASSES} logits, got {:?}",
                source_head.output_shape()
            )));
        }
        if domain_head.output_shape() != [NUM_DOMAINS] {
            return Err(Error::Config(format!(
                "domain head must output {NUM_DOMAINS} logits, got {:?}",
                domain_head.output_shape()
            )));
        }
        Ok(Self {
            feature,
            source_head,
            domain_head,
            grl,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        self.feature.input_shape()
    }

    pub fn backbone(&self) -> Backbone {
        Backbone {
            feature: self.feature.specs().to_vec(),
            source_head: self.source_head.specs().to_vec(),
            domain_head: self.domain_head.specs().to_vec(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.feature.params.num_scalars()
            + self.source_head.params.num_scalars()
            + self.domain_head.params.num_scalars()
    }

    pub fn all_finite(&self) -> bool {
        self.feature.params.all_finite()
            && self.source_head.params.all_finite()
            && self.domain_head.params.all_finite()
    }

    fn zero_grads(&mut self) {
        self.feature.params.zero_grads();
        self.source_head.params.zero_grads();
        self.domain_head.params.zero_grads();
    }
}

/// One training step's inputs. Target samples carry no class labels.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    pub source_images: Tensor,
    pub source_labels: Vec<usize>,
    pub target_images: Tensor,
}

impl DomainBatch {
    pub fn new(source_images: Tensor, source_labels: Vec<usize>, target_images: Tensor) -> Result<Self> {
        if source_images.batch() == 0 || target_images.batch() == 0 {
            return Err(Error::Input(
                "a domain batch needs at least one source and one target image".into(),
            ));
        }
        if source_labels.len() != source_images.batch() {
            return Err(Error::shape(
                "DomainBatch::new",
                format!(
                    "{} source images but {} labels",
                    source_images.batch(),
                    source_labels.len()
                ),
            ));
        }
        Ok(Self {
            source_images,
            source_labels,
            target_images,
        })
    }

    pub fn source_len(&self) -> usize {
        self.source_images.batch()
    }

    pub fn target_len(&self) -> usize {
        self.target_images.batch()
    }

    /// Implicit domain labels: source rows first, then target rows.
    pub fn domain_labels(&self) -> Vec<usize> {
        let mut labels = vec![SOURCE_DOMAIN; self.source_len()];
        labels.resize(self.source_len() + self.target_len(), TARGET_DOMAIN);
        labels
    }
}

/// Losses of one step. `l_total` is always `l_source + l_domain`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_source: f64,
    pub l_domain: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_source: f64, l_domain: f64) -> Self {
        Self {
            l_source,
            l_domain,
            l_total: l_source + l_domain,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_source.is_finite() && self.l_domain.is_finite() && self.l_total.is_finite()
    }
}

/// Activations of [`dann_forward`].
#[derive(Clone, Debug)]
pub struct DannForward {
    /// `[Bs × 2]`, class logits of the source rows.
    pub source_logits: Tensor,
    /// `[(Bs + Bt) × 2]`, domain logits of every row.
    pub domain_logits: Tensor,
    /// `[(Bs + Bt) × F]`, shared features.
    pub features: Tensor,
    source_len: usize,
    feature_cache: ForwardCache,
    source_cache: ForwardCache,
    domain_cache: ForwardCache,
}

/// Runs the extractor once over source and target images, the class head
/// over the source rows and the domain head over all rows through the GRL.
pub fn dann_forward(model: &DannModel, batch: &DomainBatch) -> Result<DannForward> {
    let images = Tensor::concat_rows(&batch.source_images, &batch.target_images)?;
    let (features, feature_cache) = model.feature.forward(&images)?;
    let source_features = features.select_rows(0..batch.source_len());
    let (source_logits, source_cache) = model.source_head.forward(&source_features)?;
    let (domain_logits, domain_cache) = model.domain_head.forward(&grl_forward(&features))?;
    Ok(DannForward {
        source_logits,
        domain_logits,
        features,
        source_len: batch.source_len(),
        feature_cache,
        source_cache,
        domain_cache,
    })
}

/// Unweighted sum of the class loss on source rows and the domain loss on
/// all rows; the reversal coefficient plays no part in the reported values.
pub fn dann_loss(source_logits: &Tensor, source_labels: &[usize], domain_logits: &Tensor) -> Result<LossBreakdown> {
    Ok(dann_loss_with_grads(source_logits, source_labels, domain_logits)?.0)
}

fn dann_loss_with_grads(
    source_logits: &Tensor,
    source_labels: &[usize],
    domain_logits: &Tensor,
) -> Result<(LossBreakdown, Tensor, Tensor)> {
    let source_len = source_logits.batch();
    let total = domain_logits.batch();
    if total < source_len {
        return Err(Error::shape(
            "dann_loss",
            format!("{total} domain rows cannot cover {source_len} source rows"),
        ));
    }
    let mut domain_labels = vec![SOURCE_DOMAIN; source_len];
    domain_labels.resize(total, TARGET_DOMAIN);
    let (l_source, g_source) = softmax_cross_entropy(source_logits, source_labels)?;
    let (l_domain, g_domain) = softmax_cross_entropy(domain_logits, &domain_labels)?;
    Ok((LossBreakdown::new(l_source, l_domain), g_source, g_domain))
}

/// Forward and backward for one batch, leaving gradients in all three
/// parameter groups: the class head gets the class-loss gradient, the domain
/// head the domain-loss gradient, and the extractor the class-loss gradient
/// plus the domain-loss gradient reversed and scaled by `-lambda`.
pub fn compute_gradients(model: &mut DannModel, batch: &DomainBatch, lambda: f64) -> Result<(LossBreakdown, DannForward)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    model.zero_grads();
    let fwd = dann_forward(model, batch)?;
    let (losses, g_source_logits, g_domain_logits) =
        dann_loss_with_grads(&fwd.source_logits, &batch.source_labels, &fwd.domain_logits)?;

    let g_source_features = model.source_head.backward(&fwd.source_cache, &g_source_logits)?;
    let g_domain_features = model.domain_head.backward(&fwd.domain_cache, &g_domain_logits)?;
    let mut g_features = grl_backward(&g_domain_features, lambda);
    let width = g_features.row_len();
    for (r, &g) in g_source_features.data().iter().enumerate() {
        // Source rows come first.
        g_features.data_mut()[r] += g;
    }
    debug_assert_eq!(g_source_features.len(), fwd.source_len * width);
    model.feature.backward(&fwd.feature_cache, &g_features)?;
    Ok((losses, fwd))
}

/// One adversarial update: forward, backward, and an SGD step on every group.
pub fn train_step(model: &mut DannModel, batch: &DomainBatch, config: &TrainConfig, lambda: f64) -> Result<LossBreakdown> {
    let (losses, _) = compute_gradients(model, batch, lambda)?;
    sgd_step(&mut model.feature.params, config);
    sgd_step(&mut model.source_head.params, config);
    sgd_step(&mut model.domain_head.params, config);
    Ok(losses)
}

/// Class-loss-only update of the extractor and class head; the domain head
/// is neither evaluated nor changed. This is the source-only baseline.
pub fn source_only_step(model: &mut DannModel, images: &Tensor, labels: &[usize], config: &TrainConfig) -> Result<f64> {
    model.feature.params.zero_grads();
    model.source_head.params.zero_grads();
    let (features, feature_cache) = model.feature.forward(images)?;
    let (logits, source_cache) = model.source_head.forward(&features)?;
    let (loss, g_logits) = softmax_cross_entropy(&logits, labels)?;
    let g_features = model.source_head.backward(&source_cache, &g_logits)?;
    model.feature.backward(&feature_cache, &g_features)?;
    sgd_step(&mut model.feature.params, config);
    sgd_step(&mut model.source_head.params, config);
    Ok(loss)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const PREDICT_CHUNK: usize = 256;

fn head_argmax(model: &DannModel, images: &Tensor, head: &Network) -> Result<Vec<usize>> {
    let n = images.batch();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + PREDICT_CHUNK).min(n);
        let chunk = images.select_rows(start..end);
        let logits = head.infer(&model.feature.infer(&chunk)?)?;
        out.extend((0..logits.batch()).map(|r| argmax(logits.row(r))));
        start = end;
    }
    Ok(out)
}

/// Class predictions (1 = forged) from the extractor and class head only.
pub fn predict(model: &DannModel, images: &Tensor) -> Result<Vec<usize>> {
    head_argmax(model, images, &model.source_head)
}

/// Domain predictions (1 = target) from the extractor and domain head.
pub fn predict_domain(model: &DannModel, images: &Tensor) -> Result<Vec<usize>> {
    head_argmax(model, images, &model.domain_head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::rng(seed);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    fn tiny() -> DannModel {
        DannModel::new(&[1, 8, 8], Backbone::preset("small-cnn", &[1, 8, 8]).unwrap(), GrlConfig::default(), 1)
            .unwrap()
    }

    #[test]
    fn presets_build() {
        for name in Backbone::PRESETS {
            let b = Backbone::preset(name, &[3, 32, 32]).unwrap();
            DannModel::new(&[3, 32, 32], b, GrlConfig::default(), 0).unwrap();
        }
        assert!(Backbone::preset("alexnet", &[3, 32, 32]).is_err());
        assert!(Backbone::preset("small-cnn", &[3, 31, 31]).is_err());
        assert!(Backbone::preset("small-cnn", &[3, 32, 16]).is_err());
        let b = Backbone::preset("small-cnn", &[3, 30, 30]).unwrap();
        assert_eq!(DannModel::new(&[3, 30, 30], b, GrlConfig::default(), 0).unwrap().feature.output_shape(), &[32]);
    }

    #[test]
    fn head_widths_are_checked() {
        let mut b = Backbone::preset("mlp", &[1, 4, 4]).unwrap();
        b.source_head = vec![LayerSpec::Linear { inputs: 32, outputs: 3 }];
        assert!(DannModel::new(&[1, 4, 4], b, GrlConfig::default(), 0).is_err());
    }

    #[test]
    fn forward_shapes() {
        let model = tiny();
        let batch = DomainBatch::new(random(&[1, 1, 8, 8], 2), vec![1], random(&[1, 1, 8, 8], 3)).unwrap();
        let fwd = dann_forward(&model, &batch).unwrap();
        assert_eq!(fwd.source_logits.shape(), &[1, 2]);
        assert_eq!(fwd.domain_logits.shape(), &[2, 2]);
    }

    #[test]
    fn shared_extractor_gives_identical_rows() {
        let model = tiny();
        let img = random(&[1, 1, 8, 8], 4);
        let batch = DomainBatch::new(img.clone(), vec![0], img).unwrap();
        let fwd = dann_forward(&model, &batch).unwrap();
        assert_eq!(fwd.features.row(0), fwd.features.row(1));
        assert_eq!(fwd.domain_logits.row(0), fwd.domain_logits.row(1));
    }

    #[test]
    fn batch_requires_both_domains() {
        assert!(DomainBatch::new(random(&[1, 1, 8, 8], 0), vec![0], Tensor::zeros(&[0, 1, 8, 8])).is_err());
        assert!(DomainBatch::new(random(&[2, 1, 8, 8], 0), vec![0], random(&[1, 1, 8, 8], 0)).is_err());
    }

    #[test]
    fn loss_is_unweighted_sum() {
        let zeros = Tensor::zeros(&[2, 2]);
        let l = dann_loss(&zeros, &[0, 1], &Tensor::zeros(&[4, 2])).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((l.l_source - ln2).abs() < 1e-15);
        assert!((l.l_domain - ln2).abs() < 1e-15);
        assert!((l.l_total - 2.0 * ln2).abs() < 1e-15);
        let b = LossBreakdown::new(0.7, 0.4);
        assert_eq!(b.l_total, 0.7 + 0.4);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.1, 2.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn zero_lr_step_changes_nothing() {
        let mut model = tiny();
        let before = model.clone();
        let batch = DomainBatch::new(random(&[2, 1, 8, 8], 5), vec![0, 1], random(&[2, 1, 8, 8], 6)).unwrap();
        let cfg = TrainConfig::new(0.0, 0.9, 2, 1, 0).unwrap();
        train_step(&mut model, &batch, &cfg, 1.0).unwrap();
        for (a, b) in [
            (&model.feature, &before.feature),
            (&model.source_head, &before.source_head),
            (&model.domain_head, &before.domain_head),
        ] {
            for (p, q) in a.params.params.iter().zip(&b.params.params) {
                assert!(p.bit_eq(q));
            }
        }
    }

    #[test]
    fn predictions_ignore_domain_head() {
        let mut model = tiny();
        let x = random(&[5, 1, 8, 8], 7);
        let before = predict(&model, &x).unwrap();
        for p in model.domain_head.params.params.iter_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 3.0 - *v * 10.0);
        }
        assert_eq!(predict(&model, &x).unwrap(), before);
    }
}
