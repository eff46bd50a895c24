//! Patch post-processing: scale, rotation, resize, Gaussian blur.

use super::image::{Image, Mask};
use super::provenance::TransformParams;
use crate::error::{Error, Result};

/// Smallest transformed patch side.
pub const MIN_PATCH_SIDE: usize = 4;

/// A transformed patch with its support: pixels outside `alpha` carry no
/// content and are not pasted.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedPatch {
    pub image: Image,
    pub alpha: Mask,
}

impl TransformedPatch {
    pub fn opaque(image: Image) -> Self {
        let alpha = Mask::from_bits(image.height(), image.width(), vec![true; image.height() * image.width()])
            .expect("dims match");
        Self { image, alpha }
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// Applies `params` in the fixed order scale, rotate, resize, blur.
/// Rotations by exact multiples of 90 degrees permute pixels losslessly;
/// other angles use bilinear sampling about the patch centre on a canvas
/// large enough for the rotated rectangle.
pub fn transform_patch(patch: &Image, params: &TransformParams) -> Result<TransformedPatch> {
    let TransformParams {
        rotation_deg,
        scale,
        resize,
        blur_sigma,
    } = *params;
    if !(scale > 0.0 && scale.is_finite() && resize > 0.0 && resize.is_finite()) {
        return Err(Error::Input(format!(
            "scale and resize must be positive, got {scale} and {resize}"
        )));
    }
    if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) || !rotation_deg.is_finite() {
        return Err(Error::Input(format!(
            "invalid blur sigma {blur_sigma} or rotation {rotation_deg}"
        )));
    }

    let mut out = TransformedPatch::opaque(patch.clone());
    out = rescale(&out, scale)?;
    out = rotate(&out, rotation_deg)?;
    out = rescale(&out, resize)?;
    if blur_sigma > 0.0 {
        out.image = gaussian_blur(&out.image, &out.alpha, blur_sigma)?;
    }
    if out.height() < MIN_PATCH_SIDE || out.width() < MIN_PATCH_SIDE || out.alpha.is_empty() {
        return Err(Error::Input(format!(
            "transformed patch is {}x{}, below the {MIN_PATCH_SIDE}x{MIN_PATCH_SIDE} minimum",
            out.height(),
            out.width()
        )));
    }
    Ok(out)
}

/// Bilinear sample at fractional `(y, x)` using only supported neighbours,
/// renormalizing their weights. Returns false if no neighbour is supported.
fn sample(src: &TransformedPatch, y: f64, x: f64, out: &mut [f64]) -> bool {
    let (h, w) = (src.height(), src.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let taps = [
        (y0, x0, (1.0 - ty) * (1.0 - tx)),
        (y0, x1, (1.0 - ty) * tx),
        (y1, x0, ty * (1.0 - tx)),
        (y1, x1, ty * tx),
    ];
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (yy, xx, wgt) in taps {
        if wgt == 0.0 || !src.alpha.get(yy, xx) {
            continue;
        }
        total += wgt;
        for (c, v) in out.iter_mut().enumerate() {
            *v += wgt * src.image.get(yy, xx, c);
        }
    }
    if total <= 0.0 {
        return false;
    }
    out.iter_mut().for_each(|v| *v /= total);
    true
}

fn rescale(src: &TransformedPatch, factor: f64) -> Result<TransformedPatch> {
    if factor == 1.0 {
        return Ok(src.clone());
    }
    let (h, w, c) = (src.height(), src.width(), src.image.channels());
    let nh = ((h as f64 * factor).round() as usize).max(1);
    let nw = ((w as f64 * factor).round() as usize).max(1);
    let mut data = vec![0.0; nh * nw * c];
    let mut alpha = Mask::empty(nh, nw);
    let mut px = vec![0.0; c];
    for y in 0..nh {
        // Pixel-centre alignment.
        let sy = (y as f64 + 0.5) * h as f64 / nh as f64 - 0.5;
        for x in 0..nw {
            let sx = (x as f64 + 0.5) * w as f64 / nw as f64 - 0.5;
            let ny = (sy.round().max(0.0) as usize).min(h - 1);
            let nx = (sx.round().max(0.0) as usize).min(w - 1);
            if src.alpha.get(ny, nx) && sample(src, sy, sx, &mut px) {
                alpha.set(y, x, true);
                data[(y * nw + x) * c..][..c].copy_from_slice(&px);
            }
        }
    }
    Ok(TransformedPatch {
        image: Image::from_fn_clamped(nh, nw, c, |y, x, ch| data[(y * nw + x) * c + ch])?,
        alpha,
    })
}

fn rotate(src: &TransformedPatch, degrees: f64) -> Result<TransformedPatch> {
    let turns = degrees / 90.0;
    if turns == turns.round() {
        let mut out = src.clone();
        for _ in 0..(turns.round() as i64).rem_euclid(4) {
            out = rotate90(&out)?;
        }
        return Ok(out);
    }

    let (h, w, c) = (src.height(), src.width(), src.image.channels());
    let (sin, cos) = degrees.to_radians().sin_cos();
    // Canvas sides, with a small slack so near-exact sizes do not round up.
    let side = |a: f64| (a - 1e-9).ceil().max(1.0) as usize;
    let nh = side(w as f64 * sin.abs() + h as f64 * cos.abs());
    let nw = side(w as f64 * cos.abs() + h as f64 * sin.abs());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ncy, ncx) = ((nh as f64 - 1.0) / 2.0, (nw as f64 - 1.0) / 2.0);
    const EDGE: f64 = 1e-9;

    let mut data = vec![0.0; nh * nw * c];
    let mut alpha = Mask::empty(nh, nw);
    let mut px = vec![0.0; c];
    for y in 0..nh {
        for x in 0..nw {
            let (dy, dx) = (y as f64 - ncy, x as f64 - ncx);
            // Inverse of the counter-clockwise rotation in y-down coordinates.
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let inside = sy >= -EDGE && sy <= h as f64 - 1.0 + EDGE && sx >= -EDGE && sx <= w as f64 - 1.0 + EDGE;
            if inside && sample(src, sy, sx, &mut px) {
                alpha.set(y, x, true);
                data[(y * nw + x) * c..][..c].copy_from_slice(&px);
            }
        }
    }
    Ok(TransformedPatch {
        image: Image::from_fn_clamped(nh, nw, c, |y, x, ch| data[(y * nw + x) * c + ch])?,
        alpha,
    })
}

/// Lossless counter-clockwise quarter turn: `out[y][x] = in[x][w - 1 - y]`.
pub fn rotate90(src: &TransformedPatch) -> Result<TransformedPatch> {
    let (h, w, c) = (src.height(), src.width(), src.image.channels());
    let mut data = Vec::with_capacity(h * w * c);
    let mut bits = Vec::with_capacity(h * w);
    for y in 0..w {
        for x in 0..h {
            data.extend_from_slice(src.image.pixel(x, w - 1 - y));
            bits.push(src.alpha.get(x, w - 1 - y));
        }
    }
    Ok(TransformedPatch {
        image: Image::new(w, h, c, data)?,
        alpha: Mask::from_bits(w, h, bits)?,
    })
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur restricted to supported pixels: at each output
/// pixel the taps that fall outside the patch or its support are dropped
/// and the remainder renormalized.
pub fn gaussian_blur(image: &Image, alpha: &Mask, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (h, w, c) = (image.height(), image.width(), image.channels());

    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = src.to_vec();
        for y in 0..h {
            for x in 0..w {
                if !alpha.get(y, x) {
                    continue;
                }
                for ch in 0..c {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (i, &k) in kernel.iter().enumerate() {
                        let off = i as i64 - radius;
                        let (yy, xx) = if horizontal {
                            (y as i64, x as i64 + off)
                        } else {
                            (y as i64 + off, x as i64)
                        };
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        if !alpha.get(yy, xx) {
                            continue;
                        }
                        acc += k * src[(yy * w + xx) * c + ch];
                        norm += k;
                    }
                    dst[(y * w + x) * c + ch] = acc / norm;
                }
            }
        }
        dst
    };
    let horizontal = pass(image.data(), true);
    let both = pass(&horizontal, false);
    Image::from_fn_clamped(h, w, c, |y, x, ch| both[(y * w + x) * c + ch])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_base_image;

    fn params(rotation_deg: f64, scale: f64, resize: f64, blur_sigma: f64) -> TransformParams {
        TransformParams {
            rotation_deg,
            scale,
            resize,
            blur_sigma,
        }
    }

    #[test]
    fn identity_leaves_patch_unchanged() {
        let patch = gen_base_image(3, 8, 10, 3).unwrap().crop(1, 2, 6, 7).unwrap();
        let out = transform_patch(&patch, &TransformParams::IDENTITY).unwrap();
        assert_eq!(out.image, patch);
        assert!(out.alpha.is_full());
    }

    #[test]
    fn quarter_turn_is_index_permutation() {
        let patch = gen_base_image(4, 8, 8, 3).unwrap().crop(0, 0, 5, 7).unwrap();
        let out = transform_patch(&patch, &params(90.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!((out.height(), out.width()), (7, 5));
        for y in 0..7 {
            for x in 0..5 {
                assert_eq!(out.image.pixel(y, x), patch.pixel(x, 6 - y));
            }
        }
        let full = transform_patch(&patch, &params(-360.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(full.image, patch);
        let half = transform_patch(&patch, &params(180.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(half.image.pixel(0, 0), patch.pixel(4, 6));
    }

    #[test]
    fn blur_keeps_constants() {
        let patch = Image::filled(9, 9, 3, 0.37).unwrap();
        let out = transform_patch(&patch, &params(0.0, 1.0, 1.0, 2.0)).unwrap();
        assert!(out.image.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn kernel_truncated_at_three_sigma() {
        assert_eq!(gaussian_kernel(2.0).len(), 13);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
        assert!((gaussian_kernel(1.3).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oblique_rotation_grows_canvas_and_masks_corners() {
        let patch = Image::filled(8, 8, 1, 0.5).unwrap();
        let out = transform_patch(&patch, &params(45.0, 1.0, 1.0, 0.0)).unwrap();
        assert!(out.height() > 8 && out.width() > 8);
        assert!(!out.alpha.get(0, 0));
        assert!(out.alpha.get(out.height() / 2, out.width() / 2));
        // Every supported sample interpolates a constant.
        for y in 0..out.height() {
            for x in 0..out.width() {
                if out.alpha.get(y, x) {
                    assert!((out.image.get(y, x, 0) - 0.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scale_changes_size() {
        let patch = Image::filled(8, 6, 3, 0.2).unwrap();
        let out = transform_patch(&patch, &params(0.0, 1.5, 1.0, 0.0)).unwrap();
        assert_eq!((out.height(), out.width()), (12, 9));
        let square = Image::filled(8, 8, 3, 0.2).unwrap();
        let out = transform_patch(&square, &params(0.0, 1.0, 0.5, 0.0)).unwrap();
        assert_eq!((out.height(), out.width()), (4, 4));
    }

    #[test]
    fn degenerate_output_rejected() {
        let patch = Image::filled(8, 8, 3, 0.2).unwrap();
        assert!(transform_patch(&patch, &params(0.0, 0.25, 1.0, 0.0)).is_err());
        assert!(transform_patch(&patch, &params(0.0, 0.0, 1.0, 0.0)).is_err());
    }
}
