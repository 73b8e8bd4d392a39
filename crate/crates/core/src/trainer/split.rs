use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::FORMAT_VERSION;
use crate::error::{CalibError, Result};
use crate::graph::NodeMask;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub labeled_fraction: f64,
    pub folds: usize,
    pub splits: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { labeled_fraction: 0.15, folds: 3, splits: 1 }
    }
}

/// Node masks for every (split, fold) pair: `assignments[s][f]`.
///
/// Within a split the test set (unlabeled nodes) is shared; fold `f` of the
/// labeled set is the validation set and the remaining folds form the
/// training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub format_version: u32,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub folds: usize,
    pub assignments: Vec<Vec<NodeMask>>,
}

impl SplitPlan {
    pub fn runs(&self) -> impl Iterator<Item = (usize, usize, &NodeMask)> {
        self.assignments
            .iter()
            .enumerate()
            .flat_map(|(s, folds)| folds.iter().enumerate().map(move |(f, m)| (s, f, m)))
    }
}

/// Per-class labeled counts: floor of the class quota, then the remaining
/// slots up to `round(fraction * N)` go to the largest fractional remainders
/// (ties to the lower class id).
fn labeled_counts(class_sizes: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let target = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = class_sizes.iter().map(|&c| fraction * c as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if counts[k] < class_sizes[k] {
            counts[k] += 1;
            remaining -= 1;
        }
    }
    counts
}

/// Stratified labeled/unlabeled split with an internal stratified k-fold
/// partition of the labeled set, repeated `config.splits` times.
pub fn stratified_split(labels: &[usize], config: SplitConfig, seed: u64) -> Result<SplitPlan> {
    if config.folds < 2 {
        return Err(CalibError::InvalidConfig("at least 2 folds are required".into()));
    }
    if !(0.0..=1.0).contains(&config.labeled_fraction) {
        return Err(CalibError::InvalidConfig("labeled fraction must lie in [0, 1]".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<usize> = (0..num_classes).filter(|&k| !by_class[k].is_empty()).collect();
    let sizes: Vec<usize> = present.iter().map(|&k| by_class[k].len()).collect();
    let counts = labeled_counts(&sizes, config.labeled_fraction);

    let mut assignments = Vec::with_capacity(config.splits);
    for s in 0..config.splits {
        let mut rng = SeededRng::with_stream(seed, s as u64);
        let mut fold_of = vec![usize::MAX; labels.len()];
        let mut next_fold = 0usize;
        for (idx, &k) in present.iter().enumerate() {
            let mut nodes = by_class[k].clone();
            rng.shuffle(&mut nodes);
            let take = counts[idx];
            if take > 0 && take < config.folds {
                warn!(
                    "class {k} has {take} labeled nodes for {} folds; assigning round-robin",
                    config.folds
                );
            }
            for &node in &nodes[..take] {
                fold_of[node] = next_fold % config.folds;
                next_fold += 1;
            }
        }
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == usize::MAX).collect();
        let folds = (0..config.folds)
            .map(|f| NodeMask {
                train: (0..labels.len()).filter(|&i| fold_of[i] != usize::MAX && fold_of[i] != f).collect(),
                val: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
                test: test.clone(),
            })
            .collect();
        assignments.push(folds);
    }
    Ok(SplitPlan {
        format_version: FORMAT_VERSION,
        seed,
        labeled_fraction: config.labeled_fraction,
        folds: config.folds,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_two_class_example() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let plan = stratified_split(&labels, SplitConfig::default(), 1).unwrap();
        let m = &plan.assignments[0];
        for fold in m {
            assert_eq!(fold.val.len(), 10);
            assert_eq!(fold.train.len(), 20);
            assert_eq!(fold.test.len(), 170);
        }
        let labeled: usize = m.iter().map(|f| f.val.len()).sum();
        assert_eq!(labeled, 30);
        let class0 = m.iter().flat_map(|f| &f.val).filter(|&&i| labels[i] == 0).count();
        assert_eq!(class0, 15);
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(labeled_counts(&[100, 5], 0.15), vec![15, 1]);
        assert_eq!(labeled_counts(&[100, 100], 0.15), vec![15, 15]);
    }

    #[test]
    fn same_seed_same_plan() {
        let labels: Vec<usize> = (0..97).map(|i| (i * 7) % 3).collect();
        let cfg = SplitConfig { splits: 5, ..SplitConfig::default() };
        let a = stratified_split(&labels, cfg, 42).unwrap();
        let b = stratified_split(&labels, cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&labels, cfg, 43).unwrap();
        assert_ne!(a, c);
        assert_ne!(a.assignments[0], a.assignments[1]);
    }

    #[test]
    fn tiny_class_goes_round_robin() {
        let mut labels = vec![0usize; 60];
        labels.extend([1, 1]);
        let cfg = SplitConfig { labeled_fraction: 0.5, ..SplitConfig::default() };
        let plan = stratified_split(&labels, cfg, 3).unwrap();
        let labeled_class1 =
            plan.assignments[0].iter().flat_map(|f| &f.val).filter(|&&i| labels[i] == 1).count();
        assert_eq!(labeled_class1, 1);
    }

    proptest! {
        #[test]
        fn masks_partition_labeled_set(
            labels in prop::collection::vec(0usize..5, 20..300),
            seed in any::<u64>(),
        ) {
            let plan = stratified_split(&labels, SplitConfig::default(), seed).unwrap();
            let n = labels.len();
            let folds = &plan.assignments[0];
            let mut val_union: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
            val_union.sort_unstable();
            for f in folds {
                f.validate(n).unwrap();
                let mut tv: Vec<usize> = f.train.iter().chain(&f.val).copied().collect();
                tv.sort_unstable();
                prop_assert_eq!(&tv, &val_union);
                prop_assert_eq!(tv.len() + f.test.len(), n);
            }
            for k in 0..5 {
                let size = labels.iter().filter(|&&l| l == k).count();
                let got = val_union.iter().filter(|&&i| labels[i] == k).count();
                prop_assert!((got as f64 - 0.15 * size as f64).abs() <= 1.0);
            }
            prop_assert_eq!(val_union.len(), (0.15 * n as f64).round() as usize);
        }
    }
}
