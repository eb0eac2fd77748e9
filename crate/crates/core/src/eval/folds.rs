//! Subject-level cross-validation folds.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldKind {
    FiveFold,
    LeaveOneSubjectOut,
    CrossDataset,
}

/// One subject-level split: train subjects feed pretraining, test subjects
/// supply the calibration pool and the held-out evaluation samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_subjects: Vec<usize>,
    pub test_subjects: Vec<usize>,
}

/// Partitions subjects into folds. `five_fold` splits them into 5 near-equal
/// contiguous groups (the first `n mod 5` groups take one extra subject);
/// `leave_one_subject_out` holds out each subject in turn. `cross_dataset`
/// yields a single fold whose test set is every subject — pretraining uses a
/// different dataset entirely, so nothing is held out here.
pub fn make_folds(n_subjects: usize, kind: FoldKind) -> Result<Vec<Fold>> {
    match kind {
        FoldKind::FiveFold => {
            if n_subjects < 5 {
                return Err(Error::validation(format!(
                    "five_fold needs >= 5 subjects, got {n_subjects}"
                )));
            }
            let base = n_subjects / 5;
            let extra = n_subjects % 5;
            let mut folds = Vec::with_capacity(5);
            let mut start = 0;
            for f in 0..5 {
                let size = base + usize::from(f < extra);
                let test: Vec<usize> = (start..start + size).collect();
                let train: Vec<usize> =
                    (0..n_subjects).filter(|s| !test.contains(s)).collect();
                folds.push(Fold { train_subjects: train, test_subjects: test });
                start += size;
            }
            Ok(folds)
        }
        FoldKind::LeaveOneSubjectOut => {
            if n_subjects < 2 {
                return Err(Error::validation(format!(
                    "leave_one_subject_out needs >= 2 subjects, got {n_subjects}"
                )));
            }
            Ok((0..n_subjects)
                .map(|held_out| Fold {
                    train_subjects: (0..n_subjects).filter(|&s| s != held_out).collect(),
                    test_subjects: vec![held_out],
                })
                .collect())
        }
        FoldKind::CrossDataset => {
            if n_subjects < 1 {
                return Err(Error::validation("cross_dataset needs >= 1 eval subject"));
            }
            Ok(vec![Fold {
                train_subjects: Vec::new(),
                test_subjects: (0..n_subjects).collect(),
            }])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn fifteen_subjects_loso_gives_fifteen_singleton_folds() {
        let folds = make_folds(15, FoldKind::LeaveOneSubjectOut).unwrap();
        assert_eq!(folds.len(), 15);
        for (i, f) in folds.iter().enumerate() {
            assert_eq!(f.test_subjects, vec![i]);
            assert_eq!(f.train_subjects.len(), 14);
            assert!(!f.train_subjects.contains(&i));
        }
    }

    #[test]
    fn fifty_six_subjects_five_fold_gives_twelve_eleven_split() {
        let folds = make_folds(56, FoldKind::FiveFold).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test_subjects.len()).collect();
        assert_eq!(sizes, vec![12, 11, 11, 11, 11]);
    }

    #[test]
    fn five_fold_test_sets_partition_the_subjects() {
        for n in [5usize, 7, 23, 56] {
            let folds = make_folds(n, FoldKind::FiveFold).unwrap();
            let mut seen = BTreeSet::new();
            for f in &folds {
                for &s in &f.test_subjects {
                    assert!(seen.insert(s), "subject {s} in two test sets (n={n})");
                    assert!(!f.train_subjects.contains(&s));
                }
                let mut union: Vec<usize> =
                    f.train_subjects.iter().chain(f.test_subjects.iter()).copied().collect();
                union.sort_unstable();
                assert_eq!(union, (0..n).collect::<Vec<_>>());
            }
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn too_few_subjects_is_a_validation_error() {
        assert!(make_folds(4, FoldKind::FiveFold).is_err());
        assert!(make_folds(1, FoldKind::LeaveOneSubjectOut).is_err());
    }
}
