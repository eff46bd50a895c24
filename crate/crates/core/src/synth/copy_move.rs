use rand::Rng as _;

use super::dataset::SynthConfig;
use super::image::{Image, Mask};
use super::provenance::{ForgeryMode, Provenance, Rect, RegionSpec, TransformParams};
use super::transform::{transform_patch, MIN_PATCH_SIDE};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Placement attempts before [`make_copy_move`] gives up.
pub const PLACEMENT_ATTEMPTS: usize = 100;

/// A generated image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgedSample {
    pub image: Image,
    /// 0 authentic, 1 forged.
    pub label: u8,
    /// Forged pixels; empty for authentic samples.
    pub mask: Mask,
    pub provenance: Provenance,
}

impl ForgedSample {
    pub fn authentic(image: Image, seed: u64) -> Self {
        let mask = Mask::empty(image.height(), image.width());
        Self {
            image,
            label: 0,
            mask,
            provenance: Provenance {
                mode: ForgeryMode::None,
                seed,
                region: None,
                transform: None,
            },
        }
    }
}

fn draw(r: &mut Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        r.gen_range(range[0]..=range[1])
    }
}

pub fn sample_transform(r: &mut Rng, config: &SynthConfig) -> TransformParams {
    TransformParams {
        rotation_deg: draw(r, config.rotation_deg),
        scale: draw(r, config.scale),
        resize: draw(r, config.resize),
        blur_sigma: draw(r, config.blur_sigma),
    }
}

/// Copies `source`, transforms it and pastes it with its top-left corner at
/// `at`. Returns the forged image, the pasted footprint and the patch's
/// bounding box; a patch that does not fit is an input error.
pub fn apply_copy_move(
    image: &Image,
    source: Rect,
    at: (usize, usize),
    transform: &TransformParams,
) -> Result<(Image, Mask, Rect)> {
    if !source.fits_in(image.height(), image.width()) {
        return Err(Error::Input(format!("source rectangle {source:?} leaves the image")));
    }
    let patch = image.crop(source.top, source.left, source.height, source.width)?;
    let patch = transform_patch(&patch, transform)?;
    let paste = Rect {
        top: at.0,
        left: at.1,
        height: patch.height(),
        width: patch.width(),
    };
    if !paste.fits_in(image.height(), image.width()) {
        return Err(Error::Input(format!("pasted patch {paste:?} leaves the image")));
    }
    let mut out = image.clone();
    let mut mask = Mask::empty(image.height(), image.width());
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            if !patch.alpha.get(y, x) {
                continue;
            }
            for c in 0..image.channels() {
                out.set(at.0 + y, at.1 + x, c, patch.image.get(y, x, c));
            }
            mask.set(at.0 + y, at.1 + x, true);
        }
    }
    Ok((out, mask, paste))
}

/// Copy-move forgery of `image`. Transform parameters are drawn once from
/// `seed`; then up to [`PLACEMENT_ATTEMPTS`] source rectangles and paste
/// positions are drawn until the pasted patch fits and keeps
/// `config.min_separation` pixels from the source.
pub fn make_copy_move(image: &Image, seed: u64, config: &SynthConfig) -> Result<ForgedSample> {
    let (h, w) = (image.height(), image.width());
    if config.region_min > h.min(w) {
        return Err(Error::Config(format!(
            "{h}x{w} image is too small for {}-pixel regions",
            config.region_min
        )));
    }
    let mut r = rng::rng(seed);
    let transform = sample_transform(&mut r, config);
    let side_max = config.region_max.min(h.min(w));
    for _ in 0..PLACEMENT_ATTEMPTS {
        let sh = r.gen_range(config.region_min..=side_max);
        let sw = r.gen_range(config.region_min..=side_max);
        let source = Rect {
            top: r.gen_range(0..=h - sh),
            left: r.gen_range(0..=w - sw),
            height: sh,
            width: sw,
        };
        let patch = image.crop(source.top, source.left, sh, sw)?;
        let Ok(patch) = transform_patch(&patch, &transform) else {
            continue;
        };
        let (ph, pw) = (patch.height(), patch.width());
        if ph > h || pw > w || ph < MIN_PATCH_SIDE || pw < MIN_PATCH_SIDE {
            continue;
        }
        let at = (r.gen_range(0..=h - ph), r.gen_range(0..=w - pw));
        let paste = Rect {
            top: at.0,
            left: at.1,
            height: ph,
            width: pw,
        };
        if !source.separated_from(&paste, config.min_separation) {
            continue;
        }
        let (forged, mask, paste) = apply_copy_move(image, source, at, &transform)?;
        if mask.is_empty() {
            continue;
        }
        return Ok(ForgedSample {
            image: forged,
            label: 1,
            mask,
            provenance: Provenance {
                mode: ForgeryMode::CopyMove,
                seed,
                region: Some(RegionSpec {
                    source,
                    paste: Some(paste),
                    object: None,
                }),
                transform: Some(transform),
            },
        });
    }
    Err(Error::Placement {
        attempts: PLACEMENT_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::base::gen_base_image;

    fn identity_config() -> SynthConfig {
        SynthConfig {
            rotation_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            resize: [1.0, 1.0],
            blur_sigma: [0.0, 0.0],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identity_copy_is_exact() {
        let base = gen_base_image(4, 32, 32, 3).unwrap();
        let s = make_copy_move(&base, 9, &identity_config()).unwrap();
        let region = s.provenance.region.unwrap();
        let (src, dst) = (region.source, region.paste.unwrap());
        assert_eq!((src.height, src.width), (dst.height, dst.width));
        assert_eq!(s.mask.count(), src.height * src.width);
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    let expect = if s.mask.get(y, x) {
                        base.get(y - dst.top + src.top, x - dst.left + src.left, c)
                    } else {
                        base.get(y, x, c)
                    };
                    assert_eq!(s.image.get(y, x, c).to_bits(), expect.to_bits());
                }
            }
        }
    }

    #[test]
    fn placement_failure_reported() {
        let cfg = SynthConfig {
            region_min: 12,
            region_max: 12,
            min_separation: 20,
            ..identity_config()
        };
        let base = gen_base_image(1, 16, 16, 1).unwrap();
        assert!(matches!(
            make_copy_move(&base, 0, &cfg),
            Err(Error::Placement { attempts: PLACEMENT_ATTEMPTS })
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let base = gen_base_image(2, 32, 32, 3).unwrap();
        let cfg = SynthConfig::default();
        assert_eq!(make_copy_move(&base, 5, &cfg).unwrap(), make_copy_move(&base, 5, &cfg).unwrap());
    }
}
