use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ops;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Conv2d,
    Relu,
    Maxpool,
    Flatten,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Linear,
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::Maxpool,
        LayerKind::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Flatten => "flatten",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer kind {s:?}")))
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Linear { .. } => LayerKind::Linear,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Maxpool { .. } => LayerKind::Maxpool,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::Config(format!("{:?}: {msg}", self.kind())));
        match *self {
            LayerSpec::Linear { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return bad("widths must be >= 1".into());
                }
                if input != [inputs] {
                    return bad(format!("expects [{inputs}] input, got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, kernel and stride must be >= 1".into());
                }
                let &[c, h, w] = input else {
                    return bad(format!("expects [C, H, W] input, got {input:?}"));
                };
                if c != in_channels {
                    return bad(format!("expects {in_channels} channels, got {c}"));
                }
                match (
                    ops::window_output_len(h, kernel, stride, padding),
                    ops::window_output_len(w, kernel, stride, padding),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => bad(format!("{h}x{w} input does not tile exactly")),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("window and stride must be >= 1".into());
                }
                let &[c, h, w] = input else {
                    return bad(format!("expects [C, H, W] input, got {input:?}"));
                };
                match (
                    ops::window_output_len(h, window, stride, 0),
                    ops::window_output_len(w, window, stride, 0),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                    _ => bad(format!("{h}x{w} input does not pool exactly")),
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of `(weights, bias)` for parametric layers.
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Linear { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

/// Parameters of one network with their gradients and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub params: Vec<Tensor>,
    pub grads: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
}

impl ParamSet {
    pub fn from_params(params: Vec<Tensor>) -> Self {
        let grads = params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        let velocity = grads.clone();
        Self {
            params,
            grads,
            velocity,
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }
}

/// Per-layer state saved by [`Network::forward`] for the backward pass.
#[derive(Clone, Debug)]
enum LayerCache {
    Input(Tensor),
    Pool(ops::PoolIndices),
    Shape(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

/// Sequential network over a closed set of layer kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    /// Index of each layer's weight tensor in `params`; the bias follows it.
    param_index: Vec<Option<usize>>,
    pub params: ParamSet,
}

fn infer_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<usize>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Config(format!(
            "input shape {input_shape:?} must be non-empty with positive dims"
        )));
    }
    let mut shape = input_shape.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        shape = spec
            .output_shape(&shape)
            .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
    }
    Ok(shape)
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let output_shape = infer_shapes(input_shape, &specs)?;
        let mut params = Vec::new();
        let mut param_index = Vec::with_capacity(specs.len());
        for spec in &specs {
            match spec.param_shapes() {
                Some((wshape, bshape)) => {
                    let (fan_in, fan_out) = spec.fans();
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    param_index.push(Some(params.len()));
                    params.push(Tensor::from_fn(&wshape, |_| rng.gen_range(-limit..limit)));
                    params.push(Tensor::zeros(&bshape));
                }
                None => param_index.push(None),
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            output_shape,
            specs,
            param_index,
            params: ParamSet::from_params(params),
        })
    }

    /// Rebuilds a network from stored parameter tensors, checking their shapes.
    pub fn from_params(input_shape: &[usize], specs: Vec<LayerSpec>, tensors: Vec<Tensor>) -> Result<Self> {
        let output_shape = infer_shapes(input_shape, &specs)?;
        let mut param_index = Vec::with_capacity(specs.len());
        let mut expected = Vec::new();
        for spec in &specs {
            match spec.param_shapes() {
                Some((w, b)) => {
                    param_index.push(Some(expected.len()));
                    expected.push(w);
                    expected.push(b);
                }
                None => param_index.push(None),
            }
        }
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "network needs {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (want, t)) in expected.iter().zip(&tensors).enumerate() {
            if want.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected shape {want:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            output_shape,
            specs,
            param_index,
            params: ParamSet::from_params(tensors),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// `(layer index, kind)` owning each tensor in `params`.
    pub fn param_owners(&self) -> Vec<(usize, LayerKind)> {
        let mut owners = Vec::with_capacity(self.params.len());
        for (layer, idx) in self.param_index.iter().enumerate() {
            if idx.is_some() {
                let kind = self.specs[layer].kind();
                owners.push((layer, kind));
                owners.push((layer, kind));
            }
        }
        owners
    }

    /// Width of the per-sample output, for rank-1 outputs.
    pub fn output_width(&self) -> usize {
        self.output_shape.iter().product()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "Network::forward",
                format!(
                    "expected [B, {}] input, got {:?}",
                    self.input_shape
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join(", "),
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    fn layer_forward(&self, layer: usize, x: &Tensor) -> Result<(Tensor, Option<LayerCache>)> {
        let spec = &self.specs[layer];
        let p = &self.params.params;
        Ok(match *spec {
            LayerSpec::Linear { .. } => {
                let i = self.param_index[layer].expect("parametric");
                (ops::linear_forward(x, &p[i], &p[i + 1])?, None)
            }
            LayerSpec::Conv2d { stride, padding, .. } => {
                let i = self.param_index[layer].expect("parametric");
                (ops::conv2d_forward(x, &p[i], &p[i + 1], stride, padding)?, None)
            }
            LayerSpec::Relu => (ops::relu(x), None),
            LayerSpec::Maxpool { window, stride } => {
                let (y, idx) = ops::maxpool2d(x, window, stride)?;
                (y, Some(LayerCache::Pool(idx)))
            }
            LayerSpec::Flatten => {
                let n = x.batch();
                let shape = x.shape().to_vec();
                let width = x.row_len();
                (x.clone().reshape(&[n, width])?, Some(LayerCache::Shape(shape)))
            }
        })
    }

    /// Forward pass without keeping activations.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in 0..self.specs.len() {
            h = self.layer_forward(layer, &h)?.0;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut h = x.clone();
        for layer in 0..self.specs.len() {
            let (y, cache) = self.layer_forward(layer, &h)?;
            layers.push(cache.unwrap_or(LayerCache::Input(h)));
            h = y;
        }
        Ok((h, ForwardCache { layers }))
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients, and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, cache: &ForwardCache, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_with(cache, grad_out, &mut |_, _| {})
    }

    /// [`Network::backward`] with a hook that may edit each layer's outgoing
    /// gradient (and its weight gradient, for parametric layers) before it
    /// propagates further. Used for fault injection in the gradient checker.
    pub fn backward_with(
        &mut self,
        cache: &ForwardCache,
        grad_out: &Tensor,
        hook: &mut dyn FnMut(LayerKind, &mut Tensor),
    ) -> Result<Tensor> {
        if cache.layers.len() != self.specs.len() {
            return Err(Error::shape("Network::backward", "cache from a different network"));
        }
        let mut g = grad_out.clone();
        for layer in (0..self.specs.len()).rev() {
            let spec = &self.specs[layer];
            let kind = spec.kind();
            g = match (&cache.layers[layer], spec) {
                (LayerCache::Input(x), LayerSpec::Linear { .. }) => {
                    let i = self.param_index[layer].expect("parametric");
                    let (gx, mut gw, gb) = ops::linear_backward(x, &self.params.params[i], &g)?;
                    hook(kind, &mut gw);
                    accumulate(&mut self.params.grads[i], &gw);
                    accumulate(&mut self.params.grads[i + 1], &gb);
                    gx
                }
                (LayerCache::Input(x), LayerSpec::Conv2d { stride, padding, .. }) => {
                    let i = self.param_index[layer].expect("parametric");
                    let (gx, mut gk, gb) =
                        ops::conv2d_backward(x, &self.params.params[i], &g, *stride, *padding)?;
                    hook(kind, &mut gk);
                    accumulate(&mut self.params.grads[i], &gk);
                    accumulate(&mut self.params.grads[i + 1], &gb);
                    gx
                }
                (LayerCache::Input(x), LayerSpec::Relu) => ops::relu_backward(x, &g)?,
                (LayerCache::Pool(idx), LayerSpec::Maxpool { .. }) => ops::maxpool2d_backward(idx, &g)?,
                (LayerCache::Shape(shape), LayerSpec::Flatten) => g.reshape(shape)?,
                _ => return Err(Error::shape("Network::backward", "cache from a different network")),
            };
            hook(kind, &mut g);
        }
        Ok(g)
    }
}

fn accumulate(into: &mut Tensor, g: &Tensor) {
    for (a, &b) in into.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small_cnn() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 8, outputs: 3 },
        ]
    }

    #[test]
    fn shapes_propagate() {
        let net = Network::new(&[1, 4, 4], small_cnn(), &mut rng::rng(0)).unwrap();
        assert_eq!(net.output_shape(), &[3]);
        assert_eq!(net.params.len(), 4);
        assert_eq!(net.params.num_scalars(), 2 * 9 + 2 + 8 * 3 + 3);
    }

    #[test]
    fn incompatible_specs_rejected_at_build() {
        let mut specs = small_cnn();
        specs[4] = LayerSpec::Linear { inputs: 9, outputs: 3 };
        let err = Network::new(&[1, 4, 4], specs, &mut rng::rng(0)).unwrap_err();
        assert!(err.to_string().contains("layer 4"), "{err}");

        let zero_kernel = vec![LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 0,
            stride: 1,
            padding: 0,
        }];
        assert!(Network::new(&[1, 4, 4], zero_kernel, &mut rng::rng(0)).is_err());
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let net = Network::new(
            &[10],
            vec![LayerSpec::Linear { inputs: 10, outputs: 5 }],
            &mut rng::rng(9),
        )
        .unwrap();
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(net.params.params[0].data().iter().all(|v| v.abs() < limit));
        assert!(net.params.params[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_network() {
        let a = Network::new(&[1, 4, 4], small_cnn(), &mut rng::rng(3)).unwrap();
        let b = Network::new(&[1, 4, 4], small_cnn(), &mut rng::rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn from_params_checks_shapes() {
        let net = Network::new(&[1, 4, 4], small_cnn(), &mut rng::rng(3)).unwrap();
        let rebuilt = Network::from_params(&[1, 4, 4], small_cnn(), net.params.params.clone()).unwrap();
        assert_eq!(rebuilt, net);
        let mut wrong = net.params.params.clone();
        wrong.swap(0, 2);
        assert!(Network::from_params(&[1, 4, 4], small_cnn(), wrong).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = Network::new(&[1, 4, 4], small_cnn(), &mut rng::rng(3)).unwrap();
        assert!(net.forward(&Tensor::zeros(&[2, 1, 4, 5])).is_err());
        let (y, _) = net.forward(&Tensor::zeros(&[2, 1, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
    }

    #[test]
    fn layer_spec_json_is_tagged() {
        let json = serde_json::to_string(&LayerSpec::Maxpool { window: 2, stride: 2 }).unwrap();
        assert_eq!(json, r#"{"kind":"maxpool","window":2,"stride":2}"#);
    }
}
