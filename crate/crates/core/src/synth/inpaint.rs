use serde::{Deserialize, Serialize};

use super::image::{Image, Mask};
use crate::error::{Error, Result};

/// Stopping rule for [`inpaint_remove`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Stop once no masked sample moves by this much in one sweep.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

/// Diffusion fill: Jacobi sweeps over the masked pixels, each becoming the
/// mean of its in-bounds 4-neighbours, with unmasked pixels held fixed.
/// Masked pixels start at the mean of the unmasked pixels bordering the
/// hole. Unmasked pixels are returned bit-unchanged.
pub fn inpaint_remove(image: &Image, mask: &Mask, config: &InpaintConfig) -> Result<Image> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if mask.height() != h || mask.width() != w {
        return Err(Error::Input(format!(
            "mask is {}x{}, image is {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    if mask.is_empty() {
        return Err(Error::Input("inpainting mask is empty".into()));
    }
    if mask.is_full() {
        return Err(Error::Input("inpainting mask covers the whole image".into()));
    }

    let neighbours = |y: usize, x: usize| {
        let mut n = [(0usize, 0usize); 4];
        let mut k = 0;
        if y > 0 {
            n[k] = (y - 1, x);
            k += 1;
        }
        if y + 1 < h {
            n[k] = (y + 1, x);
            k += 1;
        }
        if x > 0 {
            n[k] = (y, x - 1);
            k += 1;
        }
        if x + 1 < w {
            n[k] = (y, x + 1);
            k += 1;
        }
        (n, k)
    };

    let holes: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x))
        .collect();

    let mut border_sum = vec![0.0; c];
    let mut border_n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                continue;
            }
            let (n, k) = neighbours(y, x);
            if n[..k].iter().any(|&(yy, xx)| mask.get(yy, xx)) {
                for (ch, s) in border_sum.iter_mut().enumerate() {
                    *s += image.get(y, x, ch);
                }
                border_n += 1;
            }
        }
    }

    let mut cur = image.data().to_vec();
    for &(y, x) in &holes {
        for ch in 0..c {
            cur[(y * w + x) * c + ch] = border_sum[ch] / border_n as f64;
        }
    }
    let mut next = cur.clone();
    for _ in 0..config.max_iterations {
        let mut max_change = 0.0f64;
        for &(y, x) in &holes {
            let (n, k) = neighbours(y, x);
            for ch in 0..c {
                let mut s = 0.0;
                for &(yy, xx) in &n[..k] {
                    s += cur[(yy * w + xx) * c + ch];
                }
                let v = s / k as f64;
                let i = (y * w + x) * c + ch;
                max_change = max_change.max((v - cur[i]).abs());
                next[i] = v;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if max_change < config.tolerance {
            break;
        }
    }
    Image::new(h, w, c, cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_hole(h: usize, w: usize, top: usize, left: usize, side: usize) -> Mask {
        let mut m = Mask::empty(h, w);
        for y in top..top + side {
            for x in left..left + side {
                m.set(y, x, true);
            }
        }
        m
    }

    #[test]
    fn constant_refills_constant() {
        let img = Image::filled(16, 16, 3, 0.42).unwrap();
        let out = inpaint_remove(&img, &square_hole(16, 16, 3, 5, 6), &InpaintConfig::default()).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn unmasked_pixels_untouched() {
        let img = Image::from_fn_clamped(12, 12, 1, |y, x, _| ((y * 7 + x * 3) % 11) as f64 / 10.0).unwrap();
        let mask = square_hole(12, 12, 4, 4, 3);
        let out = inpaint_remove(&img, &mask, &InpaintConfig::default()).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                if !mask.get(y, x) {
                    assert_eq!(out.get(y, x, 0).to_bits(), img.get(y, x, 0).to_bits());
                }
            }
        }
    }

    #[test]
    fn hole_touching_border_uses_existing_neighbours() {
        let img = Image::filled(10, 10, 1, 0.8).unwrap();
        let out = inpaint_remove(&img, &square_hole(10, 10, 0, 0, 4), &InpaintConfig::default()).unwrap();
        assert!((out.get(0, 0, 0) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn degenerate_masks_rejected() {
        let img = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(inpaint_remove(&img, &Mask::empty(8, 8), &InpaintConfig::default()).is_err());
        assert!(inpaint_remove(&img, &square_hole(8, 8, 0, 0, 8), &InpaintConfig::default()).is_err());
        assert!(inpaint_remove(&img, &Mask::empty(9, 8), &InpaintConfig::default()).is_err());
    }
}
