//! Procedural base images: smooth value noise with a few solid or
//! gradient-filled ellipses on top. The ellipses are the "objects" that
//! copy-move and object removal operate on.

use rand::Rng as _;

use super::image::{Image, Mask};
use crate::error::{Error, Result};
use crate::rng;

/// A base image and the pixel footprint of each object drawn on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub objects: Vec<Mask>,
}

pub const MIN_SIDE: usize = 8;

/// Half-width of the uniform per-sample grain added last, standing in for
/// sensor noise.
pub const GRAIN: f64 = 0.3;

/// Range of the background lattice values.
pub const BACKGROUND: [f64; 2] = [0.35, 0.65];

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

pub fn gen_base_scene(seed: u64, height: usize, width: usize, channels: usize) -> Result<Scene> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::Config(format!(
            "base images must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let mut r = rng::rng(seed);

    let cell = (height.min(width) / 2).max(4);
    let (gh, gw) = (height / cell + 2, width / cell + 2);
    let grid: Vec<f64> = (0..gh * gw * channels).map(|_| r.gen_range(BACKGROUND[0]..BACKGROUND[1])).collect();
    let lattice = |gy: usize, gx: usize, c: usize| grid[(gy * gw + gx) * channels + c];
    let mut data = Vec::with_capacity(height * width * channels);
    for y in 0..height {
        let fy = y as f64 / cell as f64;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..width {
            let fx = x as f64 / cell as f64;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            for c in 0..channels {
                let top = lattice(iy, ix, c) * (1.0 - tx) + lattice(iy, ix + 1, c) * tx;
                let bottom = lattice(iy + 1, ix, c) * (1.0 - tx) + lattice(iy + 1, ix + 1, c) * tx;
                data.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    let mut image = Image::new(height, width, channels, data)?;

    let side = height.min(width) as f64;
    let (r_min, r_max) = ((side / 10.0).max(2.0), (side / 4.0).max(3.0));
    let count = r.gen_range(2..=6);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let cy = r.gen_range(0.0..height as f64);
        let cx = r.gen_range(0.0..width as f64);
        let ry = r.gen_range(r_min..r_max);
        let rx = r.gen_range(r_min..r_max);
        let color_a: Vec<f64> = (0..channels).map(|_| r.gen_range(0.0..1.0)).collect();
        let gradient = r.gen_bool(0.5);
        let color_b: Vec<f64> = if gradient {
            (0..channels).map(|_| r.gen_range(0.0..1.0)).collect()
        } else {
            color_a.clone()
        };
        let angle = r.gen_range(0.0..std::f64::consts::TAU);
        let (dir_y, dir_x) = angle.sin_cos();

        let mut mask = Mask::empty(height, width);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if (dy / ry).powi(2) + (dx / rx).powi(2) > 1.0 {
                    continue;
                }
                mask.set(y, x, true);
                // Position along the gradient direction, mapped to [0, 1].
                let t = ((dy * dir_y + dx * dir_x) / ry.max(rx) * 0.5 + 0.5).clamp(0.0, 1.0);
                for c in 0..channels {
                    image.set(y, x, c, color_a[c] * (1.0 - t) + color_b[c] * t);
                }
            }
        }
        objects.push(mask);
    }
    let grain: Vec<f64> = image
        .data()
        .iter()
        .map(|v| (v + r.gen_range(-GRAIN..=GRAIN)).clamp(0.0, 1.0))
        .collect();
    let image = Image::new(height, width, channels, grain)?;
    Ok(Scene { image, objects })
}

/// Deterministic procedural image for `seed`.
pub fn gen_base_image(seed: u64, height: usize, width: usize, channels: usize) -> Result<Image> {
    Ok(gen_base_scene(seed, height, width, channels)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = gen_base_image(11, 32, 40, 3).unwrap();
        let b = gen_base_image(11, 32, 40, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((a.height(), a.width()), (32, 40));
    }

    #[test]
    fn object_count_in_range() {
        for seed in 0..50 {
            let s = gen_base_scene(seed, 32, 32, 3).unwrap();
            assert!((2..=6).contains(&s.objects.len()));
        }
    }

    #[test]
    fn rejects_tiny_or_bad_channels() {
        assert!(gen_base_image(0, 7, 32, 3).is_err());
        assert!(gen_base_image(0, 32, 32, 2).is_err());
        assert!(gen_base_image(0, 8, 8, 1).is_ok());
    }
}
