use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{manifest::Domain, pnm, Manifest};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::Image;
use crate::tensor::Tensor;

/// Smallest variance used when standardizing a channel.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-channel standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and standard deviation per channel over all pixels
    /// of `images`; the variance is floored at [`VARIANCE_FLOOR`].
    pub fn compute(images: &[Image]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::Input("cannot compute statistics of an empty image set".into()));
        };
        let c = first.channels();
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for img in images {
            if img.channels() != c {
                return Err(Error::Input("mixed channel counts".into()));
            }
            for px in img.data().chunks(c) {
                for (s, &v) in sum.iter_mut().zip(px) {
                    *s += v;
                }
            }
            count += img.height() * img.width();
        }
        let mut mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        // Correction pass; makes the mean of a constant channel exact.
        let mut residual = vec![0.0; c];
        for img in images {
            for px in img.data().chunks(c) {
                for ((r, &v), m) in residual.iter_mut().zip(px).zip(&mean) {
                    *r += v - m;
                }
            }
        }
        for (m, r) in mean.iter_mut().zip(&residual) {
            *m += r / count as f64;
        }
        let mut sq = vec![0.0; c];
        for img in images {
            for px in img.data().chunks(c) {
                for ((s, &v), m) in sq.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).max(VARIANCE_FLOOR).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    /// Standardized planar `[C, H, W]` tensor.
    pub fn apply(&self, image: &Image) -> Result<Tensor> {
        if image.channels() != self.mean.len() {
            return Err(Error::Input(format!(
                "statistics cover {} channels, image has {}",
                self.mean.len(),
                image.channels()
            )));
        }
        let mut t = image.to_tensor();
        let plane = image.height() * image.width();
        for (ch, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(t)
    }

    /// Standardizes and stacks into `[N, C, H, W]`.
    pub fn apply_all(&self, images: &[Image]) -> Result<Tensor> {
        let tensors = images.iter().map(|i| self.apply(i)).collect::<Result<Vec<_>>>()?;
        if tensors.is_empty() {
            return Err(Error::Input("no images to stack".into()));
        }
        Tensor::stack(&tensors)
    }
}

/// Training view of labeled data.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::shape(
                "LabeledImages::new",
                format!("{} images, {} labels", images.batch(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Training view of target-domain data. It has no place for class labels.
#[derive(Clone, Debug)]
pub struct UnlabeledImages {
    pub images: Tensor,
}

impl UnlabeledImages {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evaluation view: labels plus each sample's domain.
#[derive(Clone, Debug)]
pub struct EvalImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub domains: Vec<Domain>,
}

impl EvalImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_labeled(&self) -> LabeledImages {
        LabeledImages {
            images: self.images.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Reads the images of `indices` from paths relative to `base_dir`.
pub fn load_images(manifest: &Manifest, indices: &[usize], base_dir: &Path) -> Result<Vec<Image>> {
    indices
        .iter()
        .map(|&i| pnm::read_image(base_dir.join(&manifest.entries()[i].path)))
        .collect()
}

fn labels_of(manifest: &Manifest, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            let e = &manifest.entries()[i];
            e.label
                .map(usize::from)
                .ok_or_else(|| Error::Input(format!("entry {:?} has no label", e.path)))
        })
        .collect()
}

/// Pairs already-loaded images with their manifest labels.
pub fn labeled(manifest: &Manifest, indices: &[usize], images: &[Image], norm: &NormStats) -> Result<LabeledImages> {
    LabeledImages::new(norm.apply_all(images)?, labels_of(manifest, indices)?)
}

/// Target-domain training view; any labels in the manifest are ignored.
pub fn unlabeled(images: &[Image], norm: &NormStats) -> Result<UnlabeledImages> {
    Ok(UnlabeledImages {
        images: norm.apply_all(images)?,
    })
}

pub fn eval_view(manifest: &Manifest, indices: &[usize], images: &[Image], norm: &NormStats) -> Result<EvalImages> {
    Ok(EvalImages {
        images: norm.apply_all(images)?,
        labels: labels_of(manifest, indices)?,
        domains: indices.iter().map(|&i| manifest.entries()[i].domain).collect(),
    })
}

/// Splits `indices` into shuffled batches for `epoch`. The order is a
/// function of `rng::mix(seed, epoch)`; the last batch may be short.
pub fn batch_indices(indices: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::rng(rng::mix(seed, epoch)));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A standardized batch with labels where the manifest has them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
}

/// Loads, standardizes and batches the manifest entries at `indices`.
pub fn batches(
    manifest: &Manifest,
    base_dir: &Path,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    norm: &NormStats,
) -> Result<Vec<Batch>> {
    batch_indices(indices, batch_size, seed, epoch)?
        .into_iter()
        .map(|chunk| {
            let images = load_images(manifest, &chunk, base_dir)?;
            let labels: Option<Vec<usize>> = chunk
                .iter()
                .map(|&i| manifest.entries()[i].label.map(usize::from))
                .collect();
            Ok(Batch {
                images: norm.apply_all(&images)?,
                labels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_by_four() {
        let idx: Vec<usize> = (0..10).collect();
        let b = batch_indices(&idx, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn epochs_reshuffle_deterministically() {
        let idx: Vec<usize> = (0..50).collect();
        let e0 = batch_indices(&idx, 8, 5, 0).unwrap();
        assert_eq!(e0, batch_indices(&idx, 8, 5, 0).unwrap());
        assert_ne!(e0, batch_indices(&idx, 8, 5, 1).unwrap());
    }

    #[test]
    fn constant_corpus_normalizes_to_zero() {
        let imgs = vec![Image::filled(4, 4, 3, 0.3).unwrap(); 3];
        let norm = NormStats::compute(&imgs).unwrap();
        assert_eq!(norm.std, vec![VARIANCE_FLOOR.sqrt(); 3]);
        let t = norm.apply_all(&imgs).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_channels_have_unit_variance() {
        let imgs: Vec<Image> = (0..4)
            .map(|k| Image::from_fn_clamped(3, 3, 1, |y, x, _| ((y * 3 + x + k) % 7) as f64 / 7.0).unwrap())
            .collect();
        let norm = NormStats::compute(&imgs).unwrap();
        let t = norm.apply_all(&imgs).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
