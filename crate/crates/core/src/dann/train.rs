use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grl::lambda_at;
use super::model::{argmax, compute_gradients, source_only_step, DannModel, DomainBatch, LossBreakdown};
use crate::data::{LabeledImages, UnlabeledImages};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, TrainConfig};
use crate::rng;

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Step-averaged losses; `l_total` is the sum of the two averages.
    pub losses: LossBreakdown,
    /// Class accuracy of the source rows seen during the epoch.
    pub source_accuracy: f64,
    /// Domain-head accuracy over all rows seen during the epoch.
    pub domain_accuracy: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

/// Source and target index lists for each step of one epoch.
///
/// The run has `max(ceil(Ns/B), ceil(Nt/B))` steps. A dataset that needs
/// exactly that many batches is shuffled once and chunked, last batch short.
/// The other dataset is drawn as consecutive full batches from a stream of
/// fresh shuffles, so it cycles. Source shuffles use
/// `mix(mix(seed, epoch), 0)`, target shuffles `mix(mix(seed, epoch), 1)`.
pub fn epoch_plan(
    source_len: usize,
    target_len: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if source_len == 0 || target_len == 0 {
        return Err(Error::Config("source and target datasets must be non-empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let steps = source_len.div_ceil(batch_size).max(target_len.div_ceil(batch_size));
    let epoch_seed = rng::mix(seed, epoch as u64);
    let plan = |n: usize, stream: u64| -> Vec<Vec<usize>> {
        let mut r = rng::rng(rng::mix(epoch_seed, stream));
        if n.div_ceil(batch_size) == steps {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        }
        let mut out = Vec::with_capacity(steps);
        let mut pool: Vec<usize> = Vec::new();
        while out.len() < steps {
            let mut batch = Vec::with_capacity(batch_size);
            while batch.len() < batch_size {
                if pool.is_empty() {
                    pool = (0..n).collect();
                    pool.shuffle(&mut r);
                    pool.reverse();
                }
                batch.push(pool.pop().expect("refilled"));
            }
            out.push(batch);
        }
        out
    };
    Ok(plan(source_len, 0).into_iter().zip(plan(target_len, 1)).collect())
}

/// Adversarial training over whole datasets. The reversal coefficient for
/// epoch `e` of `E` is `lambda_at(model.grl, e / E)`. `on_epoch` runs after
/// each epoch with the updated model and that epoch's report.
pub fn fit_with(
    model: &mut DannModel,
    source: &LabeledImages,
    target: &UnlabeledImages,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&DannModel, &EpochReport) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("source and target datasets must be non-empty".into()));
    }
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let lambda = lambda_at(&model.grl, epoch as f64 / config.epochs as f64)?;
        let plan = epoch_plan(source.len(), target.len(), config.batch_size, config.seed, epoch)?;
        let steps = plan.len() as f64;
        let (mut l_source, mut l_domain) = (0.0, 0.0);
        let (mut class_hits, mut class_seen, mut domain_hits, mut domain_seen) = (0usize, 0usize, 0usize, 0usize);
        for (step, (s_idx, t_idx)) in plan.into_iter().enumerate() {
            let batch = DomainBatch::new(
                source.images.select_rows(s_idx.iter().copied()),
                s_idx.iter().map(|&i| source.labels[i]).collect(),
                target.images.select_rows(t_idx.iter().copied()),
            )?;
            let (losses, fwd) = compute_gradients(model, &batch, lambda)?;
            if !losses.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            debug_assert_eq!(losses.l_total, losses.l_source + losses.l_domain);
            sgd_step(&mut model.feature.params, config);
            sgd_step(&mut model.source_head.params, config);
            sgd_step(&mut model.domain_head.params, config);
            if !model.all_finite() {
                return Err(Error::Divergence { epoch, step });
            }

            l_source += losses.l_source;
            l_domain += losses.l_domain;
            for (r, &label) in batch.source_labels.iter().enumerate() {
                class_hits += usize::from(argmax(fwd.source_logits.row(r)) == label);
            }
            class_seen += batch.source_len();
            for (r, label) in batch.domain_labels().into_iter().enumerate() {
                domain_hits += usize::from(argmax(fwd.domain_logits.row(r)) == label);
            }
            domain_seen += batch.source_len() + batch.target_len();
        }
        let entry = EpochReport {
            epoch,
            losses: LossBreakdown::new(l_source / steps, l_domain / steps),
            source_accuracy: class_hits as f64 / class_seen as f64,
            domain_accuracy: domain_hits as f64 / domain_seen as f64,
            lambda,
        };
        on_epoch(model, &entry)?;
        report.epochs.push(entry);
    }
    Ok(report)
}

pub fn fit(
    model: &mut DannModel,
    source: &LabeledImages,
    target: &UnlabeledImages,
    config: &TrainConfig,
) -> Result<TrainReport> {
    fit_with(model, source, target, config, &mut |_, _| Ok(()))
}

/// Source-only baseline on the same source batches [`fit`] would draw for a
/// target set of `target_len` items. Only the extractor and class head
/// change; per-epoch mean class losses are returned.
pub fn fit_source_only(
    model: &mut DannModel,
    source: &LabeledImages,
    target_len: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let plan = epoch_plan(source.len(), target_len, config.batch_size, config.seed, epoch)?;
        let steps = plan.len() as f64;
        let mut total = 0.0;
        for (step, (s_idx, _)) in plan.into_iter().enumerate() {
            let images = source.images.select_rows(s_idx.iter().copied());
            let labels: Vec<usize> = s_idx.iter().map(|&i| source.labels[i]).collect();
            let loss = source_only_step(model, &images, &labels, config)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            total += loss;
        }
        losses.push(total / steps);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_equal_sizes_chunks_both() {
        let plan = epoch_plan(10, 10, 4, 1, 0).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan[2].0.len(), 2);
        assert_eq!(plan[2].1.len(), 2);
        let mut seen: Vec<usize> = plan.iter().flat_map(|p| p.0.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn plan_cycles_smaller_dataset() {
        let plan = epoch_plan(3, 20, 4, 1, 0).unwrap();
        assert_eq!(plan.len(), 5);
        // Target covered exactly once; source batches are full and cycle.
        let mut t: Vec<usize> = plan.iter().flat_map(|p| p.1.clone()).collect();
        t.sort_unstable();
        assert_eq!(t, (0..20).collect::<Vec<_>>());
        assert!(plan.iter().all(|p| p.0.len() == 4));
        // Each run of 3 draws is a permutation of the source set.
        let s: Vec<usize> = plan.iter().flat_map(|p| p.0.clone()).collect();
        for cycle in s.chunks_exact(3) {
            let mut c = cycle.to_vec();
            c.sort_unstable();
            assert_eq!(c, vec![0, 1, 2]);
        }
    }

    #[test]
    fn plan_depends_on_epoch_and_seed_only() {
        assert_eq!(epoch_plan(9, 7, 2, 3, 1).unwrap(), epoch_plan(9, 7, 2, 3, 1).unwrap());
        assert_ne!(epoch_plan(9, 7, 2, 3, 1).unwrap(), epoch_plan(9, 7, 2, 3, 2).unwrap());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(epoch_plan(0, 5, 2, 0, 0), Err(Error::Config(_))));
    }
}
