use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stratified: true,
            seed: 0,
        }
    }
}

/// Partitions item indices into (train, validation), both ascending.
///
/// The train set has `round(f·N)` items. Stratified splits allot each class
/// `floor(f·n_c)` items and hand the remaining slots to the largest
/// fractional parts (lower class index first on ties), so every class is
/// within one item of its proportional share.
pub fn split_indices(labels: &[usize], k: usize, spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let target = ((spec.train_fraction * n as f64).round() as usize).min(n);
    let mut train = Vec::with_capacity(target);

    if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in labels.iter().enumerate() {
            by_class[c].push(i);
        }
        let exact: Vec<f64> = by_class
            .iter()
            .map(|v| spec.train_fraction * v.len() as f64)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest = target.saturating_sub(quota.iter().sum());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for c in order.into_iter().cycle().take(k * 2) {
            if rest == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                rest -= 1;
            }
        }
        for (c, members) in by_class.iter_mut().enumerate() {
            members.shuffle(&mut stream(spec.seed, Purpose::Split, 1 + c as u64));
            train.extend_from_slice(&members[..quota[c]]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut stream(spec.seed, Purpose::Split, 0));
        train.extend_from_slice(&all[..target]);
    }

    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let val = (0..n).filter(|&i| !in_train[i]).collect();
    (train, val)
}

/// Clones items into (train, validation) sets.
pub fn split<T: Clone>(items: &[T], labels: &[usize], k: usize, spec: &SplitSpec) -> (Vec<T>, Vec<T>) {
    let (tr, va) = split_indices(labels, k, spec);
    (
        tr.iter().map(|&i| items[i].clone()).collect(),
        va.iter().map(|&i| items[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(counts: &[usize]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn default_sizes() {
        for stratified in [true, false] {
            let spec = SplitSpec { stratified, ..Default::default() };
            let (tr, va) = split_indices(&labels(&[592, 568, 368]), 3, &spec);
            assert_eq!((tr.len(), va.len()), (1222, 306));
        }
    }

    #[test]
    fn small_stratified_rounding() {
        let l = labels(&[4, 3, 3]);
        let (tr, _) = split_indices(&l, 3, &SplitSpec { seed: 9, ..Default::default() });
        let per: Vec<usize> = (0..3).map(|c| tr.iter().filter(|&&i| l[i] == c).count()).collect();
        assert!(per == vec![3, 2, 3] || per == vec![3, 3, 2], "{per:?}");
    }

    #[test]
    fn seeded() {
        let l = labels(&[40, 30, 30]);
        let spec = SplitSpec { seed: 4, ..Default::default() };
        assert_eq!(split_indices(&l, 3, &spec), split_indices(&l, 3, &spec));
        let other = SplitSpec { seed: 5, ..spec };
        assert_ne!(split_indices(&l, 3, &spec), split_indices(&l, 3, &other));
    }

    proptest! {
        #[test]
        fn partition_is_exact(
            l in proptest::collection::vec(0usize..3, 0..300),
            stratified in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let spec = SplitSpec { stratified, seed, ..Default::default() };
            let (tr, va) = split_indices(&l, 3, &spec);
            prop_assert_eq!(tr.len(), (0.8 * l.len() as f64).round() as usize);
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..l.len()).collect::<Vec<_>>());
            if stratified {
                for c in 0..3 {
                    let n_c = l.iter().filter(|&&x| x == c).count() as f64;
                    let t_c = tr.iter().filter(|&&i| l[i] == c).count() as f64;
                    prop_assert!((t_c - 0.8 * n_c).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
