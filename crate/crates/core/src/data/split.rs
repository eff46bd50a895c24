use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::error::{Error, Result};
use crate::rng;

/// Train/test partition of a manifest's indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub fraction: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded, label-stratified split.
///
/// Entries are grouped by label (0, 1, unlabeled). The test set holds
/// `round(fraction * N)` entries. Each group first receives
/// `floor(fraction * n_group)` test slots; the remaining slots go one each to
/// the groups with the largest fractional remainders, ties to the lower label
/// (unlabeled last). Each group is shuffled with one generator seeded by
/// `seed`, in label order, and its first slots become test entries. Both
/// index lists are returned sorted.
pub fn make_split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must be in [0, 1], got {test_fraction}"
        )));
    }
    // None sorts first in Option's ordering; map it to a key after 0 and 1.
    let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, label) in manifest.labels().into_iter().enumerate() {
        let key = label.map_or(u16::MAX, u16::from);
        groups.entry(key).or_default().push(i);
    }

    let total_test = (test_fraction * manifest.len() as f64).round() as usize;
    let mut quota: Vec<(u16, usize, f64)> = groups
        .iter()
        .map(|(&k, members)| {
            let exact = test_fraction * members.len() as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(quota[a].0.cmp(&quota[b].0)));
    for &g in order.iter().take(total_test.saturating_sub(assigned)) {
        quota[g].1 += 1;
    }

    let mut rng = rng::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((_, members), &(_, take, _)) in groups.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        seed,
        fraction: test_fraction,
        train,
        test,
    })
}

pub fn save_split(split: &Split, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(split).expect("split serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, ManifestEntry};

    fn balanced(n: usize) -> Manifest {
        Manifest::new(
            (0..n)
                .map(|i| ManifestEntry::new(format!("{i}.ppm"), Some((i % 2) as u8), Domain::Source))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_fraction_empty_test() {
        let s = make_split(&balanced(10), 0.0, 1).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len(), 10);
    }

    #[test]
    fn quarter_of_balanced_hundred() {
        let m = balanced(100);
        let s = make_split(&m, 0.25, 3).unwrap();
        let test_zero = s.test.iter().filter(|&&i| i % 2 == 0).count();
        let test_one = s.test.len() - test_zero;
        // 12.5 each: floor gives 12 + 12, the spare slot goes to label 0.
        assert_eq!((test_zero, test_one), (13, 12));
    }

    #[test]
    fn disjoint_cover_and_reproducible() {
        let m = balanced(37);
        let a = make_split(&m, 0.3, 9).unwrap();
        let b = make_split(&m, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_ne!(make_split(&m, 0.3, 10).unwrap().test, a.test);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(make_split(&balanced(4), 1.5, 0).is_err());
    }
}
