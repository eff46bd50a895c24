//! Layer kernels as free functions over [`Tensor`]s.
//!
//! Layouts: dense activations are `[batch, features]`, images are
//! `[batch, channels, height, width]`, linear weights are `[inputs, outputs]`
//! and convolution kernels are `[out_channels, in_channels, kh, kw]`.
//! Convolution is cross-correlation with zero padding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn expect_rank(op: &'static str, name: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("{name} must be rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `x[B×I] · w[I×O] + b[O]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "linear_forward";
    expect_rank(OP, "x", x, 2)?;
    expect_rank(OP, "w", w, 2)?;
    expect_rank(OP, "b", b, 1)?;
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[1];
    if w.shape()[0] != inputs {
        return Err(Error::shape(
            OP,
            format!("x has {inputs} columns but w has {} rows", w.shape()[0]),
        ));
    }
    if b.shape()[0] != outputs {
        return Err(Error::shape(
            OP,
            format!("w has {outputs} columns but b has {} entries", b.shape()[0]),
        ));
    }

    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; batch * outputs];
    for r in 0..batch {
        let acc = &mut out[r * outputs..(r + 1) * outputs];
        for (i, &xv) in xd[r * inputs..(r + 1) * inputs].iter().enumerate() {
            let wrow = &wd[i * outputs..(i + 1) * outputs];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv;
            }
        }
        for (a, &bv) in acc.iter_mut().zip(bd) {
            *a += bv;
        }
    }
    Tensor::new(&[batch, outputs], out)
}

/// Returns `(grad_x, grad_w, grad_b)` for [`linear_forward`].
pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    const OP: &str = "linear_backward";
    expect_rank(OP, "x", x, 2)?;
    expect_rank(OP, "w", w, 2)?;
    expect_rank(OP, "grad_out", grad_out, 2)?;
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[1];
    if w.shape()[0] != inputs || grad_out.shape() != [batch, outputs] {
        return Err(Error::shape(
            OP,
            format!(
                "x {:?}, w {:?}, grad_out {:?} do not conform",
                x.shape(),
                w.shape(),
                grad_out.shape()
            ),
        ));
    }

    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![0.0; batch * inputs];
    let mut gw = vec![0.0; inputs * outputs];
    let mut gb = vec![0.0; outputs];
    for r in 0..batch {
        let grow = &gd[r * outputs..(r + 1) * outputs];
        for (a, &g) in gb.iter_mut().zip(grow) {
            *a += g;
        }
        for i in 0..inputs {
            let wrow = &wd[i * outputs..(i + 1) * outputs];
            let mut dot = 0.0;
            for (&wv, &g) in wrow.iter().zip(grow) {
                dot += wv * g;
            }
            gx[r * inputs + i] = dot;

            let xv = xd[r * inputs + i];
            for (a, &g) in gw[i * outputs..(i + 1) * outputs].iter_mut().zip(grow) {
                *a += xv * g;
            }
        }
    }
    Ok((
        Tensor::new(&[batch, inputs], gx)?,
        Tensor::new(&[inputs, outputs], gw)?,
        Tensor::new(&[outputs], gb)?,
    ))
}

/// Output extent of a sliding window, or `None` when the window does not
/// tile the padded input exactly.
pub fn window_output_len(len: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    if window == 0 || stride == 0 {
        return None;
    }
    let padded = len + 2 * padding;
    if padded < window || !(padded - window).is_multiple_of(stride) {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Output columns `j` for which `j*stride + v - padding` lands inside `[0, len)`.
fn valid_range(len: usize, out_len: usize, stride: usize, v: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > v {
        (padding - v).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + padding > v {
        ((len + padding - v - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvGeometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_geometry(op: &'static str, x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    expect_rank(op, "x", x, 4)?;
    expect_rank(op, "kernels", kernels, 4)?;
    let &[batch, channels, height, width] = x.shape() else {
        unreachable!()
    };
    let &[filters, kc, kh, kw] = kernels.shape() else {
        unreachable!()
    };
    if kc != channels {
        return Err(Error::shape(
            op,
            format!("x has {channels} channels but kernels expect {kc}"),
        ));
    }
    let out_h = window_output_len(height, kh, stride, padding);
    let out_w = window_output_len(width, kw, stride, padding);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(ConvGeometry {
            batch,
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            out_h,
            out_w,
        }),
        _ => Err(Error::Config(format!(
            "{op}: {height}x{width} input with {kh}x{kw} kernel, stride {stride}, padding {padding} \
             does not give an integral output size"
        ))),
    }
}

/// Cross-correlation of `x[B×C×H×W]` with `kernels[K×C×kh×kw]`.
pub fn conv2d_forward(x: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    const OP: &str = "conv2d_forward";
    let g = conv_geometry(OP, x, kernels, stride, padding)?;
    expect_rank(OP, "bias", bias, 1)?;
    if bias.shape()[0] != g.filters {
        return Err(Error::shape(
            OP,
            format!("{} kernels but {} biases", g.filters, bias.shape()[0]),
        ));
    }

    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let (xd, kd) = (x.data(), kernels.data());
    let mut out = vec![0.0; g.batch * g.filters * plane_out];
    for b in 0..g.batch {
        for k in 0..g.filters {
            let o = &mut out[(b * g.filters + k) * plane_out..][..plane_out];
            for c in 0..g.channels {
                let xp = &xd[(b * g.channels + c) * plane_in..][..plane_in];
                for u in 0..g.kh {
                    let (i_lo, i_hi) = valid_range(g.height, g.out_h, stride, u, padding);
                    for v in 0..g.kw {
                        let wv = kd[((k * g.channels + c) * g.kh + u) * g.kw + v];
                        let (j_lo, j_hi) = valid_range(g.width, g.out_w, stride, v, padding);
                        for i in i_lo..i_hi {
                            let xr = &xp[(i * stride + u - padding) * g.width..][..g.width];
                            let orow = &mut o[i * g.out_w..(i + 1) * g.out_w];
                            if stride == 1 {
                                let xs = &xr[j_lo + v - padding..j_hi + v - padding];
                                for (a, &xv) in orow[j_lo..j_hi].iter_mut().zip(xs) {
                                    *a += wv * xv;
                                }
                            } else {
                                for j in j_lo..j_hi {
                                    orow[j] += wv * xr[j * stride + v - padding];
                                }
                            }
                        }
                    }
                }
            }
            let bv = bias.data()[k];
            for a in o.iter_mut() {
                *a += bv;
            }
        }
    }
    Tensor::new(&[g.batch, g.filters, g.out_h, g.out_w], out)
}

/// Returns `(grad_x, grad_kernels, grad_bias)` for [`conv2d_forward`].
pub fn conv2d_backward(
    x: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    const OP: &str = "conv2d_backward";
    let g = conv_geometry(OP, x, kernels, stride, padding)?;
    if grad_out.shape() != [g.batch, g.filters, g.out_h, g.out_w] {
        return Err(Error::shape(
            OP,
            format!(
                "grad_out is {:?}, forward output is {:?}",
                grad_out.shape(),
                [g.batch, g.filters, g.out_h, g.out_w]
            ),
        ));
    }

    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let (xd, kd, gd) = (x.data(), kernels.data(), grad_out.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gk = vec![0.0; kd.len()];
    let mut gb = vec![0.0; g.filters];
    for b in 0..g.batch {
        for k in 0..g.filters {
            let go = &gd[(b * g.filters + k) * plane_out..][..plane_out];
            let mut bias_acc = 0.0;
            for &v in go {
                bias_acc += v;
            }
            gb[k] += bias_acc;
            for c in 0..g.channels {
                let x_off = (b * g.channels + c) * plane_in;
                for u in 0..g.kh {
                    let (i_lo, i_hi) = valid_range(g.height, g.out_h, stride, u, padding);
                    for v in 0..g.kw {
                        let widx = ((k * g.channels + c) * g.kh + u) * g.kw + v;
                        let wv = kd[widx];
                        let (j_lo, j_hi) = valid_range(g.width, g.out_w, stride, v, padding);
                        let mut acc = 0.0;
                        for i in i_lo..i_hi {
                            let row = x_off + (i * stride + u - padding) * g.width;
                            let grow = &go[i * g.out_w..(i + 1) * g.out_w];
                            for j in j_lo..j_hi {
                                let xi = row + j * stride + v - padding;
                                acc += grow[j] * xd[xi];
                                gx[xi] += grow[j] * wv;
                            }
                        }
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(kernels.shape(), gk)?,
        Tensor::new(&[g.filters], gb)?,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
        .expect("shape preserved")
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("x {:?} vs grad_out {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Flat input offsets of each pooled maximum, plus the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Max pooling over `window×window` patches of `x[B×C×H×W]`. Ties resolve
/// to the first position in row-major order.
pub fn maxpool2d(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    const OP: &str = "maxpool2d";
    expect_rank(OP, "x", x, 4)?;
    let &[batch, channels, height, width] = x.shape() else {
        unreachable!()
    };
    let (Some(out_h), Some(out_w)) = (
        window_output_len(height, window, stride, 0),
        window_output_len(width, window, stride, 0),
    ) else {
        return Err(Error::Config(format!(
            "{OP}: {height}x{width} input with window {window}, stride {stride} does not pool to an integral size"
        )));
    };

    let xd = x.data();
    let mut out = Vec::with_capacity(batch * channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * channels {
        let base = plane * height * width;
        for i in 0..out_h {
            for j in 0..out_w {
                let mut best = base + i * stride * width + j * stride;
                for u in 0..window {
                    for v in 0..window {
                        let idx = base + (i * stride + u) * width + j * stride + v;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let output_shape = vec![batch, channels, out_h, out_w];
    Ok((
        Tensor::new(&output_shape, out)?,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            output_shape,
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != indices.output_shape.as_slice() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!(
                "grad_out {:?} vs pooled {:?}",
                grad_out.shape(),
                indices.output_shape
            ),
        ));
    }
    let mut gx = Tensor::zeros(&indices.input_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / B` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    const OP: &str = "softmax_cross_entropy";
    expect_rank(OP, "logits", logits, 2)?;
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::shape(
            OP,
            format!("{batch} logit rows but {} labels", labels.len()),
        ));
    }
    if batch == 0 {
        return Err(Error::Input(format!("{OP}: empty batch")));
    }
    if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Input(format!(
            "{OP}: label {bad} at row {row} is outside [0, {classes})"
        )));
    }

    let inv_batch = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; batch * classes];
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in row {
            sum += (z - max).exp();
        }
        let log_sum = sum.ln();
        total += log_sum - (row[label] - max);
        let grow = &mut grad[r * classes..(r + 1) * classes];
        for (c, (&z, g)) in row.iter().zip(grow.iter_mut()).enumerate() {
            let p = (z - max).exp() / sum;
            let onehot = if c == label { 1.0 } else { 0.0 };
            *g = (p - onehot) * inv_batch;
        }
    }
    Ok((total * inv_batch, Tensor::new(&[batch, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::rng(seed);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = linear_forward(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let zero = Tensor::zeros(&[2, 2]);
        let y = linear_forward(&x, &zero, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_shape_errors_name_dimensions() {
        let err = linear_forward(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("3 columns") && err.contains("2 rows"), "{err}");
    }

    #[test]
    fn linear_backward_zero_upstream_and_identity() {
        let x = random(&[3, 2], 1);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (gx, gw, gb) = linear_backward(&x, &eye, &Tensor::zeros(&[3, 2])).unwrap();
        assert!(gx.data().iter().chain(gw.data()).chain(gb.data()).all(|&v| v == 0.0));

        let g = random(&[3, 2], 2);
        let (gx, _, _) = linear_backward(&x, &eye, &g).unwrap();
        assert_eq!(gx.data(), g.data());
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random(&[2, 1, 4, 5], 3);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_averages_constant() {
        let x = Tensor::full(&[1, 1, 6, 6], 5.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for v in y.data() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_non_integral_output() {
        let x = Tensor::zeros(&[1, 1, 6, 6]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_single_pixel_grad_picks_patch() {
        // out[0,0,i,j] with grad 1 only at (1,2): grad_kernels = x[:, 1..4, 2..5].
        let x = random(&[1, 2, 5, 6], 4);
        let k = random(&[1, 2, 3, 3], 5);
        let mut g = Tensor::zeros(&[1, 1, 3, 4]);
        g.data_mut()[4 + 2] = 1.0;
        let (_, gk, gb) = conv2d_backward(&x, &k, &g, 1, 0).unwrap();
        for c in 0..2 {
            for u in 0..3 {
                for v in 0..3 {
                    let expected = x.data()[(c * 5 + 1 + u) * 6 + 2 + v];
                    assert_eq!(gk.data()[(c * 3 + u) * 3 + v], expected);
                }
            }
        }
        assert_eq!(gb.data(), &[1.0]);
    }

    #[test]
    fn relu_and_subgradient_convention() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &t(&[3], &[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn maxpool_picks_max_and_breaks_ties_first() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);

        let c = Tensor::full(&[1, 1, 4, 4], 7.0);
        let (_, idx) = maxpool2d(&c, 2, 2).unwrap();
        assert_eq!(idx.argmax, vec![0, 2, 8, 10]);

        let g = maxpool2d_backward(&idx, &t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.data()[1], 0.0);
        assert_eq!(g.data()[10], 4.0);
    }

    #[test]
    fn maxpool_rejects_non_integral() {
        assert!(matches!(
            maxpool2d(&Tensor::zeros(&[1, 1, 5, 5]), 2, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn xent_uniform_and_stable() {
        let (loss, _) = softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let (loss, grad) = softmax_cross_entropy(&t(&[1, 2], &[1000.0, -1000.0]), &[0]).unwrap();
        assert!(loss.abs() < 1e-12 && loss >= 0.0);
        assert!(grad.all_finite());
    }

    #[test]
    fn xent_rejects_bad_label() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(&[2, 3]), &[0, 3]),
            Err(Error::Input(_))
        ));
    }
}
