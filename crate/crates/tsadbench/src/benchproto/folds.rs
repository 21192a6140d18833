//! Test-run folds with neighbor exclusion.

use crate::{Error, Result};

/// K folds of test-run indices plus the exclusion radius.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub exclusion_radius: usize,
}

/// Contiguous near-equal blocks in run order; the remainder goes to the
/// leading folds.
pub fn make_folds(n_runs: usize, k: usize, exclusion_radius: usize) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::contract("fold count must be >= 1"));
    }
    if n_runs < k {
        return Err(Error::contract(format!(
            "cannot split {n_runs} runs into {k} folds"
        )));
    }
    let base = n_runs / k;
    let remainder = n_runs % k;
    let mut folds = Vec::with_capacity(k);
    let mut next = 0;
    for i in 0..k {
        let size = base + usize::from(i < remainder);
        folds.push((next..next + size).collect());
        next += size;
    }
    Ok(FoldPlan {
        folds,
        exclusion_radius,
    })
}

/// Folds eligible for evaluating a model selected on fold `i`:
/// { j : |j − i| > r }.
pub fn eval_folds_for(selection_fold: usize, k: usize, radius: usize) -> Vec<usize> {
    (0..k)
        .filter(|&j| j.abs_diff(selection_fold) > radius)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_folds() {
        let plan = make_folds(10, 5, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn remainder_to_leading_folds() {
        let plan = make_folds(11, 5, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn too_few_runs_rejected() {
        assert!(make_folds(4, 5, 1).is_err());
    }

    #[test]
    fn folds_partition_runs() {
        for n in 5..40 {
            let plan = make_folds(n, 5, 1).unwrap();
            let mut seen = vec![false; n];
            for f in &plan.folds {
                for &i in f {
                    assert!(!seen[i], "run {i} in two folds");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|s| *s));
            let max = plan.folds.iter().map(|f| f.len()).max().unwrap();
            let min = plan.folds.iter().map(|f| f.len()).min().unwrap();
            assert!(max - min <= 1);
        }
    }

    #[test]
    fn exclusion_examples() {
        assert_eq!(eval_folds_for(0, 5, 1), vec![2, 3, 4]);
        assert_eq!(eval_folds_for(2, 5, 1), vec![0, 4]);
        assert_eq!(eval_folds_for(4, 5, 1), vec![0, 1, 2]);
    }

    #[test]
    fn exclusion_never_contains_self_or_neighbors() {
        for i in 0..5 {
            let ev = eval_folds_for(i, 5, 1);
            assert!(!ev.contains(&i));
            assert!(!ev.contains(&(i + 1)));
            if i > 0 {
                assert!(!ev.contains(&(i - 1)));
            }
        }
    }
}
