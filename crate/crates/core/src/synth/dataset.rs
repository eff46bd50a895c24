//! Whole-corpus generation and replay.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::base::{gen_base_scene, Scene, MIN_SIDE};
use super::copy_move::{apply_copy_move, make_copy_move, ForgedSample};
use super::image::Mask;
use super::inpaint::{inpaint_remove, InpaintConfig};
use super::provenance::{ForgeryMode, Provenance, Rect, RegionSpec};
use super::transform::MIN_PATCH_SIDE;
use crate::data::{pnm, save_manifest, Domain, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::rng;

/// Placement retries per item, each with a freshly derived seed.
pub const ITEM_RETRIES: u64 = 10;
/// Removed objects are grown by this many pixels before inpainting.
pub const REMOVAL_DILATION: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeMix {
    pub copy_move: f64,
    pub inpaint_removal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub size: usize,
    pub forged_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mode_mix: ModeMix,
    /// Side range of copied source rectangles, inclusive.
    pub region_min: usize,
    pub region_max: usize,
    /// `[min, max]` ranges sampled uniformly per forgery.
    pub rotation_deg: [f64; 2],
    pub scale: [f64; 2],
    pub resize: [f64; 2],
    pub blur_sigma: [f64; 2],
    pub min_separation: usize,
    /// Added to every pixel of every item after forging, then clamped.
    pub brightness_offset: f64,
    pub domain: Domain,
    pub seed: u64,
    pub inpaint: InpaintConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 100,
            forged_fraction: 0.5,
            height: 32,
            width: 32,
            channels: 3,
            mode_mix: ModeMix {
                copy_move: 0.5,
                inpaint_removal: 0.5,
            },
            region_min: 6,
            region_max: 12,
            rotation_deg: [-30.0, 30.0],
            scale: [0.8, 1.2],
            resize: [0.9, 1.1],
            blur_sigma: [0.0, 0.5],
            min_separation: 4,
            brightness_offset: 0.0,
            domain: Domain::Source,
            seed: 0,
            inpaint: InpaintConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.forged_fraction) {
            return bad(format!("forged_fraction must be in [0, 1], got {}", self.forged_fraction));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return bad(format!("images must be at least {MIN_SIDE}x{MIN_SIDE}"));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        let ModeMix {
            copy_move,
            inpaint_removal,
        } = self.mode_mix;
        if copy_move < 0.0 || inpaint_removal < 0.0 || ((copy_move + inpaint_removal) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "mode_mix must be non-negative and sum to 1, got {copy_move} + {inpaint_removal}"
            ));
        }
        if self.region_min < MIN_PATCH_SIDE || self.region_min > self.region_max {
            return bad(format!(
                "region sides need {MIN_PATCH_SIDE} <= region_min <= region_max, got {}..{}",
                self.region_min, self.region_max
            ));
        }
        if self.region_min > self.height.min(self.width) {
            return bad("region_min exceeds the image size".into());
        }
        for (name, [lo, hi]) in [
            ("rotation_deg", self.rotation_deg),
            ("scale", self.scale),
            ("resize", self.resize),
            ("blur_sigma", self.blur_sigma),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if self.scale[0] <= 0.0 || self.resize[0] <= 0.0 {
            return bad("scale and resize ranges must be positive".into());
        }
        if self.blur_sigma[0] < 0.0 {
            return bad("blur_sigma range must be non-negative".into());
        }
        if !self.brightness_offset.is_finite() {
            return bad("brightness_offset must be finite".into());
        }
        Ok(())
    }
}

/// Removes one of the scene's objects, chosen with `seed`.
pub fn make_removal(scene: &Scene, seed: u64, config: &InpaintConfig) -> Result<ForgedSample> {
    let (h, w) = (scene.image.height(), scene.image.width());
    let candidates: Vec<usize> = (0..scene.objects.len())
        .filter(|&k| {
            let m = scene.objects[k].dilate(REMOVAL_DILATION);
            !m.is_empty() && !m.is_full()
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Placement { attempts: 1 });
    }
    let object = *candidates.choose(&mut rng::rng(seed)).expect("non-empty");
    let (image, mask) = apply_removal(scene, object, config)?;
    let source = bounding_box(&mask).expect("non-empty mask");
    debug_assert!(source.fits_in(h, w));
    Ok(ForgedSample {
        image,
        label: 1,
        mask,
        provenance: Provenance {
            mode: ForgeryMode::InpaintRemoval,
            seed,
            region: Some(RegionSpec {
                source,
                paste: None,
                object: Some(object),
            }),
            transform: None,
        },
    })
}

fn apply_removal(scene: &Scene, object: usize, config: &InpaintConfig) -> Result<(super::Image, Mask)> {
    let mask = scene
        .objects
        .get(object)
        .ok_or_else(|| Error::Input(format!("scene has no object {object}")))?
        .dilate(REMOVAL_DILATION);
    Ok((inpaint_remove(&scene.image, &mask, config)?, mask))
}

pub fn bounding_box(mask: &Mask) -> Option<Rect> {
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                top = top.min(y);
                left = left.min(x);
                bottom = bottom.max(y + 1);
                right = right.max(x + 1);
            }
        }
    }
    (top != usize::MAX).then(|| Rect {
        top,
        left,
        height: bottom - top,
        width: right - left,
    })
}

fn finish(mut sample: ForgedSample, item_seed: u64, config: &SynthConfig) -> ForgedSample {
    sample.image.brighten(config.brightness_offset);
    sample.image.quantize();
    sample.provenance.seed = item_seed;
    sample
}

fn generate_item(config: &SynthConfig, item_seed: u64, forged: bool) -> Result<ForgedSample> {
    let scene = gen_base_scene(rng::mix(item_seed, 0), config.height, config.width, config.channels)?;
    if !forged {
        return Ok(finish(ForgedSample::authentic(scene.image, item_seed), item_seed, config));
    }
    let op_seed = rng::mix(item_seed, 2);
    let copy_move = rng::rng(rng::mix(item_seed, 1)).gen::<f64>() < config.mode_mix.copy_move;
    let sample = if copy_move {
        make_copy_move(&scene.image, op_seed, config)?
    } else {
        make_removal(&scene, op_seed, &config.inpaint)?
    };
    Ok(finish(sample, item_seed, config))
}

/// Regenerates a sample from its provenance and the corpus configuration.
pub fn replay(provenance: &Provenance, config: &SynthConfig) -> Result<ForgedSample> {
    let seed = provenance.seed;
    let scene = gen_base_scene(rng::mix(seed, 0), config.height, config.width, config.channels)?;
    let missing = |what: &str| Error::Input(format!("{} provenance lacks {what}", provenance.mode.name()));
    let sample = match provenance.mode {
        ForgeryMode::None => ForgedSample::authentic(scene.image, seed),
        ForgeryMode::CopyMove => {
            let region = provenance.region.ok_or_else(|| missing("a region"))?;
            let paste = region.paste.ok_or_else(|| missing("a paste rectangle"))?;
            let transform = provenance.transform.ok_or_else(|| missing("a transform"))?;
            let (image, mask, _) = apply_copy_move(&scene.image, region.source, (paste.top, paste.left), &transform)?;
            ForgedSample {
                image,
                label: 1,
                mask,
                provenance: *provenance,
            }
        }
        ForgeryMode::InpaintRemoval => {
            let object = provenance
                .region
                .and_then(|r| r.object)
                .ok_or_else(|| missing("an object index"))?;
            let (image, mask) = apply_removal(&scene, object, &config.inpaint)?;
            ForgedSample {
                image,
                label: 1,
                mask,
                provenance: *provenance,
            }
        }
    };
    Ok(finish(sample, seed, config))
}

fn extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Generates the corpus described by `config`.
///
/// Item `i` has seed `s = mix(config.seed, i)`. If its forgery cannot be
/// placed, retry `k` (1 to [`ITEM_RETRIES`]) uses `mix(s, k)` instead. From
/// the item seed, `mix(s, 0)` seeds the base scene, `mix(s, 1)` the
/// copy-move versus removal draw and `mix(s, 2)` the forgery itself.
/// Exactly `round(size * forged_fraction)` items are forged, chosen by a
/// shuffle seeded with `mix(config.seed, u64::MAX)`. Images are quantized to
/// 8 bits so that written and in-memory corpora agree.
pub fn synthesize_dataset(config: &SynthConfig) -> Result<(Vec<ForgedSample>, Manifest)> {
    config.validate()?;
    let n = config.size;
    let n_forged = (n as f64 * config.forged_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(rng::mix(config.seed, u64::MAX)));
    let mut forged = vec![false; n];
    for &i in &order[..n_forged] {
        forged[i] = true;
    }

    let mut samples = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for (i, &is_forged) in forged.iter().enumerate() {
        let base = rng::mix(config.seed, i as u64);
        let mut result = generate_item(config, base, is_forged);
        for k in 1..=ITEM_RETRIES {
            match result {
                Err(Error::Placement { .. }) => result = generate_item(config, rng::mix(base, k), is_forged),
                _ => break,
            }
        }
        let sample = match result {
            Err(Error::Placement { .. }) => {
                return Err(Error::Placement {
                    attempts: ITEM_RETRIES as usize + 1,
                })
            }
            other => other?,
        };
        let mut entry = ManifestEntry::new(
            format!("images/{i:05}.{}", extension(config.channels)),
            Some(sample.label),
            config.domain,
        );
        entry.mode = Some(sample.provenance.mode);
        entry.seed = Some(sample.provenance.seed);
        entry.region = sample.provenance.region;
        entry.transform = sample.provenance.transform;
        entry.mask = Some(format!("masks/{i:05}.pgm"));
        entries.push(entry);
        samples.push(sample);
    }
    Ok((samples, Manifest::new(entries)?))
}

/// Writes images, masks and `manifest.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, samples: &[ForgedSample], manifest: &Manifest) -> Result<()> {
    if samples.len() != manifest.len() {
        return Err(Error::Input(format!(
            "{} samples but {} manifest entries",
            samples.len(),
            manifest.len()
        )));
    }
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (sample, entry) in samples.iter().zip(manifest.entries()) {
        pnm::write_image(dir.join(&entry.path), &sample.image)?;
        if let Some(mask) = &entry.mask {
            pnm::write_image(dir.join(mask), &sample.mask.to_image())?;
        }
    }
    save_manifest(manifest, dir.join("manifest.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_forged_count() {
        let cfg = SynthConfig {
            size: 100,
            ..SynthConfig::default()
        };
        let (samples, manifest) = synthesize_dataset(&cfg).unwrap();
        assert_eq!(samples.iter().filter(|s| s.label == 1).count(), 50);
        assert_eq!(manifest.len(), 100);
        for s in &samples {
            assert_eq!(s.label == 0, s.mask.is_empty());
            assert_eq!(s.label == 0, s.provenance.mode == ForgeryMode::None);
        }
    }

    #[test]
    fn empty_corpus() {
        let cfg = SynthConfig {
            size: 0,
            ..SynthConfig::default()
        };
        let (samples, manifest) = synthesize_dataset(&cfg).unwrap();
        assert!(samples.is_empty() && manifest.is_empty());
    }

    #[test]
    fn replay_reproduces_every_item() {
        let cfg = SynthConfig {
            size: 30,
            brightness_offset: 0.1,
            ..SynthConfig::default()
        };
        let (samples, _) = synthesize_dataset(&cfg).unwrap();
        for s in &samples {
            assert_eq!(&replay(&s.provenance, &cfg).unwrap(), s);
        }
    }

    #[test]
    fn removal_touches_only_the_mask() {
        let scene = gen_base_scene(3, 32, 32, 3).unwrap();
        let s = make_removal(&scene, 1, &InpaintConfig::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !s.mask.get(y, x) {
                    assert_eq!(s.image.pixel(y, x), scene.image.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn invalid_mix_rejected() {
        let cfg = SynthConfig {
            mode_mix: ModeMix {
                copy_move: 0.7,
                inpaint_removal: 0.7,
            },
            ..SynthConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
