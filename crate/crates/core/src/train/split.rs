use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::folds::TEN_SEGMENT;
use crate::dsp::Cohort;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSubject {
    pub subject_id: String,
    pub cohort: Cohort,
    pub segments: usize,
}

/// Shape every candidate test set must have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConstraints {
    pub subjects_per_cohort: usize,
    pub segments_per_cohort: usize,
    pub candidates: usize,
    /// Draws per cohort before a candidate is declared unsatisfiable.
    pub max_attempts: usize,
}

impl Default for SplitConstraints {
    fn default() -> Self {
        Self { subjects_per_cohort: 18, segments_per_cohort: 54, candidates: 25, max_attempts: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    /// Sorted subject ids.
    pub test: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSelection {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub selected: usize,
    pub candidates: Vec<Candidate>,
}

/// Random test sets with the required per-cohort subject and segment
/// counts, never containing ten-segment subjects. Reproducible in `seed`.
pub fn draw_candidates(pool: &[PoolSubject], c: &SplitConstraints, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut seen = BTreeSet::new();
    for s in pool {
        if !seen.insert(&s.subject_id) {
            return Err(Error::Validation(format!("subject {} listed twice", s.subject_id)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible = |cohort: Cohort| -> Vec<&PoolSubject> {
        let mut v: Vec<&PoolSubject> =
            pool.iter().filter(|s| s.cohort == cohort && s.segments != TEN_SEGMENT).collect();
        v.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        v
    };
    let per_cohort = [eligible(Cohort::Younger), eligible(Cohort::Older)];
    for (cohort, e) in [Cohort::Younger, Cohort::Older].iter().zip(&per_cohort) {
        if e.len() < c.subjects_per_cohort {
            return Err(Error::Config(format!(
                "only {} eligible {cohort} subjects, need {}",
                e.len(),
                c.subjects_per_cohort
            )));
        }
    }
    let mut out = Vec::with_capacity(c.candidates);
    for _ in 0..c.candidates {
        let mut test = Vec::with_capacity(2 * c.subjects_per_cohort);
        for e in &per_cohort {
            let mut found = None;
            for _ in 0..c.max_attempts.max(1) {
                let pick: Vec<&&PoolSubject> = e.choose_multiple(&mut rng, c.subjects_per_cohort).collect();
                if pick.iter().map(|s| s.segments).sum::<usize>() == c.segments_per_cohort {
                    found = Some(pick);
                    break;
                }
            }
            let pick = found.ok_or_else(|| {
                Error::Config(format!(
                    "no draw of {} subjects reached {} segments",
                    c.subjects_per_cohort, c.segments_per_cohort
                ))
            })?;
            test.extend(pick.iter().map(|s| s.subject_id.clone()));
        }
        test.sort();
        out.push(test);
    }
    Ok(out)
}

/// Draws the candidates, scores each with `scorer`, and keeps the one with
/// the median score (ascending rank `(n - 1) / 2`, ties by draw order).
pub fn select_median_split(
    pool: &[PoolSubject],
    c: &SplitConstraints,
    mut scorer: impl FnMut(usize, &[String]) -> Result<f64>,
    seed: u64,
) -> Result<SplitSelection> {
    if c.candidates == 0 {
        return Err(Error::Config("at least one candidate is required".into()));
    }
    let drawn = draw_candidates(pool, c, seed)?;
    let mut candidates = Vec::with_capacity(drawn.len());
    for (index, test) in drawn.into_iter().enumerate() {
        let score = scorer(index, &test)?;
        if !score.is_finite() {
            return Err(Error::Numerical(format!("candidate {index} scored {score}")));
        }
        candidates.push(Candidate { index, test, score });
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].score.total_cmp(&candidates[b].score).then(a.cmp(&b)));
    let selected = order[(order.len() - 1) / 2];
    let test = candidates[selected].test.clone();
    let held: BTreeSet<&String> = test.iter().collect();
    let mut train: Vec<String> = pool.iter().map(|s| s.subject_id.clone()).filter(|s| !held.contains(s)).collect();
    train.sort();
    Ok(SplitSelection { train, test, selected, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 100 younger and 80 older subjects; 15 of each cohort have ten segments.
    pub(crate) fn cohort_pool() -> Vec<PoolSubject> {
        let mut v = Vec::new();
        for (cohort, n, tag) in [(Cohort::Younger, 100, "y"), (Cohort::Older, 80, "o")] {
            for i in 0..n {
                v.push(PoolSubject { subject_id: format!("{tag}{i:03}"), cohort, segments: if i < 15 { 10 } else { 3 } });
            }
        }
        v
    }

    #[test]
    fn candidates_respect_constraints() {
        let pool = cohort_pool();
        let c = SplitConstraints::default();
        let cands = draw_candidates(&pool, &c, 11).unwrap();
        assert_eq!(cands.len(), 25);
        for cand in &cands {
            let subs: Vec<&PoolSubject> = cand.iter().map(|id| pool.iter().find(|s| &s.subject_id == id).unwrap()).collect();
            for cohort in [Cohort::Younger, Cohort::Older] {
                let mine: Vec<_> = subs.iter().filter(|s| s.cohort == cohort).collect();
                assert_eq!(mine.len(), 18);
                assert_eq!(mine.iter().map(|s| s.segments).sum::<usize>(), 54);
            }
            assert!(subs.iter().all(|s| s.segments != 10));
        }
        assert_eq!(cands, draw_candidates(&pool, &c, 11).unwrap());
    }

    #[test]
    fn median_by_index_and_constant() {
        let pool = cohort_pool();
        let c = SplitConstraints::default();
        let sel = select_median_split(&pool, &c, |i, _| Ok(i as f64), 5).unwrap();
        assert_eq!(sel.selected, 12);
        assert_eq!(sel.train.len() + sel.test.len(), 180);
        let sel = select_median_split(&pool, &c, |i, _| Ok(-(i as f64)), 5).unwrap();
        assert_eq!(sel.selected, 12);
        let sel = select_median_split(&pool, &c, |_, _| Ok(0.7), 5).unwrap();
        assert!(sel.candidates.iter().all(|c| c.score == 0.7));
        assert_eq!(sel.selected, 12);
    }

    #[test]
    fn unsatisfiable_pool() {
        let pool: Vec<PoolSubject> = cohort_pool().into_iter().filter(|s| s.cohort == Cohort::Younger || s.segments == 10).collect();
        assert!(matches!(draw_candidates(&pool, &SplitConstraints::default(), 0), Err(Error::Config(_))));
        let mut odd = cohort_pool();
        odd.iter_mut().filter(|s| s.segments == 3).for_each(|s| s.segments = 4);
        let c = SplitConstraints { max_attempts: 20, ..Default::default() };
        assert!(matches!(draw_candidates(&odd, &c, 0), Err(Error::Config(_))));
    }
}
