//! Per-metric and total rank computation (competition ranking: tied entries
//! share a rank and the following ranks are skipped).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub method: String,
    pub method_type: String,
    pub f1: f64,
    pub f1_rank: u32,
    pub auprc: f64,
    pub auprc_rank: u32,
    pub total_rank: u32,
}

/// Competition ranks for descending values: the best value gets rank 1,
/// ties share a rank, and the next distinct value's rank counts all entries
/// above it.
pub fn competition_rank_desc(values: &[f64]) -> Vec<u32> {
    rank_by(values, |a, b| b.partial_cmp(a).expect("finite metric values"))
}

fn rank_by(values: &[f64], cmp: impl Fn(&f64, &f64) -> std::cmp::Ordering) -> Vec<u32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(&values[a], &values[b]));
    let mut ranks = vec![0u32; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            ranks[idx] = (i + 1) as u32;
        }
        i = j + 1;
    }
    ranks
}

/// Total rank from per-metric rank pairs: the competition rank (ascending)
/// of the mean (f1_rank + auprc_rank) / 2.
pub fn total_rank(rank_pairs: &[(u32, u32)]) -> Vec<u32> {
    let means: Vec<f64> = rank_pairs
        .iter()
        .map(|(a, b)| (*a as f64 + *b as f64) / 2.0)
        .collect();
    rank_by(&means, |a, b| a.partial_cmp(b).expect("finite rank means"))
}

/// Full ranking table from per-method (name, type, f1, auprc) rows, sorted
/// by total rank, then method name.
pub fn rank_methods(rows: &[(String, String, f64, f64)]) -> Vec<RankingRow> {
    let f1s: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let auprcs: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let f1_ranks = competition_rank_desc(&f1s);
    let auprc_ranks = competition_rank_desc(&auprcs);
    let pairs: Vec<(u32, u32)> = f1_ranks
        .iter()
        .zip(&auprc_ranks)
        .map(|(a, b)| (*a, *b))
        .collect();
    let totals = total_rank(&pairs);
    let mut out: Vec<RankingRow> = rows
        .iter()
        .enumerate()
        .map(|(i, (method, method_type, f1, auprc))| RankingRow {
            method: method.clone(),
            method_type: method_type.clone(),
            f1: *f1,
            f1_rank: f1_ranks[i],
            auprc: *auprc,
            auprc_rank: auprc_ranks[i],
            total_rank: totals[i],
        })
        .collect();
    out.sort_by(|a, b| {
        a.total_rank
            .cmp(&b.total_rank)
            .then_with(|| a.method.cmp(&b.method))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descending_competition_ranks() {
        assert_eq!(competition_rank_desc(&[0.9, 0.7, 0.9, 0.5]), vec![1, 3, 1, 4]);
    }

    #[test]
    fn best_mean_pair_ranks_first() {
        // ranks (1,2) -> mean 1.5 -> total 1
        let totals = total_rank(&[(1, 2), (3, 1), (4, 3)]);
        assert_eq!(totals, vec![1, 2, 3]);
    }

    #[test]
    fn tied_means_share_total_and_skip_next() {
        // (8,26) and (14,20) both mean 17 -> both total rank must match and
        // the next method skips a rank
        let totals = total_rank(&[(1, 1), (8, 26), (14, 20), (20, 20)]);
        assert_eq!(totals[1], totals[2]);
        assert_eq!(totals[3], totals[1] + 2);
    }

    #[test]
    fn rank_methods_sorted_and_permutation_invariant() {
        let rows = vec![
            ("b".to_string(), "X".to_string(), 0.8, 0.9),
            ("a".to_string(), "X".to_string(), 0.9, 0.8),
            ("c".to_string(), "Y".to_string(), 0.5, 0.5),
        ];
        let mut shuffled = rows.clone();
        shuffled.rotate_left(1);
        let r1 = rank_methods(&rows);
        let r2 = rank_methods(&shuffled);
        assert_eq!(r1, r2);
        assert!(r1.windows(2).all(|w| w[0].total_rank <= w[1].total_rank));
    }
}
