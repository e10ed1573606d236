use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject id to fold index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.fold_of.iter().filter(|(_, f)| **f == fold).map(|(s, _)| s.as_str()).collect()
    }
}

/// Segment count of the subjects that must be spread evenly over folds.
pub const TEN_SEGMENT: usize = 10;

/// Subject-level folds.
///
/// Subjects are grouped by segment count (largest first) and shuffled
/// within each group. Ten-segment subjects go to the fold holding the
/// fewest of them; every other subject goes to the fold with the fewest
/// segments. Remaining ties go to the lowest fold index.
pub fn make_folds(subjects: &[(String, usize)], folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds == 0 {
        return Err(Error::Config("fold count must be >= 1".into()));
    }
    if subjects.len() < folds {
        return Err(Error::Config(format!("{} subjects cannot fill {folds} folds", subjects.len())));
    }
    let mut groups: BTreeMap<std::cmp::Reverse<usize>, Vec<&str>> = BTreeMap::new();
    for (id, n) in subjects {
        groups.entry(std::cmp::Reverse(*n)).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seg_total = vec![0usize; folds];
    let mut fold_of = BTreeMap::new();
    for (std::cmp::Reverse(count), mut ids) in groups {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let mut in_group = vec![0usize; folds];
        for id in ids {
            let f = if count == TEN_SEGMENT {
                (0..folds).min_by_key(|&f| (in_group[f], seg_total[f], f))
            } else {
                (0..folds).min_by_key(|&f| (seg_total[f], in_group[f], f))
            }
            .expect("folds >= 1");
            in_group[f] += 1;
            seg_total[f] += count;
            if fold_of.insert(id.to_string(), f).is_some() {
                return Err(Error::Validation(format!("subject {id} listed twice")));
            }
        }
    }
    Ok(FoldAssignment { folds, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(tens: usize, threes: usize) -> Vec<(String, usize)> {
        (0..tens).map(|i| (format!("t{i:03}"), 10)).chain((0..threes).map(|i| (format!("s{i:03}"), 3))).collect()
    }

    #[test]
    fn training_pool_spreads_evenly() {
        let p = pool(30, 114);
        let a = make_folds(&p, 6, 3).unwrap();
        for f in 0..6 {
            let m = a.members(f);
            assert_eq!(m.iter().filter(|s| s.starts_with('t')).count(), 5);
            assert_eq!(m.iter().filter(|s| s.starts_with('s')).count(), 19);
        }
        assert_eq!(a, make_folds(&p, 6, 3).unwrap());
        assert_ne!(a, make_folds(&p, 6, 4).unwrap());
    }

    #[test]
    fn single_fold_and_errors() {
        let a = make_folds(&pool(2, 5), 1, 0).unwrap();
        assert!(a.fold_of.values().all(|f| *f == 0));
        assert!(make_folds(&pool(1, 1), 3, 0).is_err());
        assert!(make_folds(&pool(1, 1), 0, 0).is_err());
    }

    fn seg_spread(a: &FoldAssignment, subjects: &[(String, usize)]) -> (usize, f64) {
        let n: BTreeMap<&str, usize> = subjects.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let segs: Vec<usize> = (0..a.folds).map(|f| a.members(f).iter().map(|s| n[s]).sum()).collect();
        let mean = segs.iter().sum::<usize>() as f64 / a.folds as f64;
        (segs.iter().max().unwrap() - segs.iter().min().unwrap(), mean)
    }

    proptest! {
        #[test]
        fn partition_with_even_ten_segment_spread(
            counts in proptest::collection::vec(prop_oneof![Just(3usize), Just(10usize), 1usize..8], 1..120),
            k in 1usize..8,
            seed in any::<u64>(),
        ) {
            prop_assume!(counts.len() >= k);
            let subjects: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, c)| (format!("p{i}"), *c)).collect();
            let a = make_folds(&subjects, k, seed).unwrap();
            prop_assert_eq!(a.fold_of.len(), subjects.len());
            prop_assert!(a.fold_of.values().all(|f| *f < k));
            let tens: Vec<usize> = (0..k)
                .map(|f| a.members(f).iter().filter(|s| subjects.iter().any(|(i, c)| i == *s && *c == TEN_SEGMENT)).count())
                .collect();
            prop_assert!(tens.iter().max().unwrap() - tens.iter().min().unwrap() <= 1);
        }

        #[test]
        fn segment_counts_balance(tens in 0usize..40, threes in 0usize..200, k in 1usize..8, seed in any::<u64>()) {
            let subjects = pool(tens, threes);
            prop_assume!(subjects.len() >= k && threes >= 4 * k && 3 * threes + 10 * tens >= 20 * k);
            let a = make_folds(&subjects, k, seed).unwrap();
            let (spread, mean) = seg_spread(&a, &subjects);
            prop_assert!(spread as f64 <= mean.ceil() * 0.1 + 1.0, "spread {} mean {}", spread, mean);
        }
    }
}
