//! Pointwise anomaly-detection metrics.
//!
//! A prediction is positive iff score > threshold (strict). Tied scores form
//! a single threshold block, so no ordering inside a tie can be exploited.
//! Counts are micro-aggregated: confusion totals are accumulated over all
//! evaluated time steps (and across runs, when several are evaluated
//! together) and F1 is computed once from the totals.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One operating point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// Operating points ordered by descending threshold (recall non-decreasing).
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub best_f1: f64,
    pub best_threshold: f64,
    pub auprc: f64,
}

fn validate(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "scores ({}) and labels ({}) differ in length",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::contract("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores"));
    }
    Ok(())
}

/// Tallies pointwise confusion counts at a fixed threshold.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    validate(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(labels) {
        let pred = *s > threshold;
        match (pred, *l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// 2·TP / (2·TP + FN + FP); zero when the denominator is zero.
pub fn f1(counts: &ConfusionCounts) -> f64 {
    let denom = 2 * counts.tp + counts.fn_ + counts.fp;
    if denom == 0 {
        0.0
    } else {
        2.0 * counts.tp as f64 / denom as f64
    }
}

/// Distinct score values in descending order, with the number of positive
/// and total points in each tie block.
fn score_blocks(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut blocks: Vec<(f64, usize, usize)> = Vec::new();
    for &i in &order {
        match blocks.last_mut() {
            Some((v, pos, n)) if *v == scores[i] => {
                *pos += (labels[i] == 1) as usize;
                *n += 1;
            }
            _ => blocks.push((scores[i], (labels[i] == 1) as usize, 1)),
        }
    }
    blocks
}

fn require_positive(labels: &[u8]) -> Result<usize> {
    let positives = labels.iter().filter(|l| **l == 1).count();
    if positives == 0 {
        return Err(Error::MetricUndefined(
            "no positive labels in evaluation data".into(),
        ));
    }
    Ok(positives)
}

/// Maximum F1 over all thresholds, including the predict-nothing and
/// predict-everything extremes. The returned threshold is the midpoint
/// between the adjacent distinct scores realizing the optimum (the max score
/// itself for predict-nothing, min − 1 for predict-everything); ties break
/// toward the higher threshold.
pub fn best_f1(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    validate(scores, labels)?;
    let positives = require_positive(labels)?;
    let blocks = score_blocks(scores, labels);

    // predict nothing: threshold at the max score
    let mut best = (blocks[0].0, 0.0);
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (i, &(value, pos, n)) in blocks.iter().enumerate() {
        tp += pos;
        predicted += n;
        let fp = predicted - tp;
        let fn_ = positives - tp;
        let denom = 2 * tp + fn_ + fp;
        let score = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        let threshold = match blocks.get(i + 1) {
            Some(&(next, _, _)) => (value + next) / 2.0,
            None => value - 1.0,
        };
        if score > best.1 {
            best = (threshold, score);
        }
    }
    Ok(best)
}

/// One operating point per distinct score, descending; requires at least one
/// positive label.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve> {
    validate(scores, labels)?;
    let positives = require_positive(labels)?;
    let blocks = score_blocks(scores, labels);
    let mut points = Vec::with_capacity(blocks.len());
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (i, &(value, pos, n)) in blocks.iter().enumerate() {
        tp += pos;
        predicted += n;
        let threshold = match blocks.get(i + 1) {
            Some(&(next, _, _)) => (value + next) / 2.0,
            None => value - 1.0,
        };
        points.push(PrPoint {
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / predicted as f64,
            threshold,
        });
    }
    Ok(PrCurve { points })
}

/// Step-wise summation Σ precision·Δrecall over the descending-score
/// operating points (average-precision convention).
pub fn auprc(curve: &PrCurve) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        area += p.precision * (p.recall - prev_recall);
        prev_recall = p.recall;
    }
    area
}

/// best F1, its threshold, and AUPRC in one report.
pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<MetricReport> {
    let (best_threshold, best) = best_f1(scores, labels)?;
    let curve = pr_curve(scores, labels)?;
    Ok(MetricReport {
        best_f1: best,
        best_threshold,
        auprc: auprc(&curve),
    })
}

/// Micro-aggregated evaluation over several runs: scores and labels are
/// concatenated before thresholding so counts accumulate across runs.
pub fn evaluate_concat(pairs: &[(&[f64], &[u8])]) -> Result<MetricReport> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, l) in pairs {
        scores.extend_from_slice(s);
        labels.extend_from_slice(l);
    }
    evaluate(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (1, 1, 0, 0));
        let c = confusion(&[0.2, 0.4], &[1, 0], 0.9).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        let c = confusion(&[0.2, 0.4], &[1, 0], -1.0).unwrap();
        assert_eq!((c.tn, c.fn_), (0, 0));
        assert!(confusion(&[0.1], &[1, 0], 0.5).is_err());
        assert!(confusion(&[0.1, 0.2], &[2, 0], 0.5).is_err());
    }

    #[test]
    fn f1_examples() {
        let v = f1(&ConfusionCounts { tp: 2, fn_: 1, fp: 1, tn: 0 });
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1(&ConfusionCounts { tp: 5, fn_: 0, fp: 0, tn: 3 }), 1.0);
        assert_eq!(f1(&ConfusionCounts { tp: 0, fn_: 2, fp: 3, tn: 0 }), 0.0);
        assert_eq!(f1(&ConfusionCounts::default()), 0.0);
    }

    #[test]
    fn best_f1_perfectly_separated() {
        let (thr, v) = best_f1(&[0.1, 0.9, 0.8, 0.2], &[0, 1, 1, 0]).unwrap();
        assert_eq!(v, 1.0);
        assert!(thr > 0.2 && thr < 0.8, "thr={thr}");
    }

    #[test]
    fn best_f1_predict_everything() {
        let (thr, v) = best_f1(&[0.9, 0.1], &[0, 1]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert!(thr < 0.1);
    }

    #[test]
    fn best_f1_all_positive() {
        let (thr, v) = best_f1(&[0.3, 0.5, 0.4], &[1, 1, 1]).unwrap();
        assert_eq!(v, 1.0);
        assert!(thr < 0.3);
    }

    #[test]
    fn best_f1_no_positives_is_undefined() {
        assert!(matches!(
            best_f1(&[0.1, 0.2], &[0, 0]),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn best_f1_tie_breaks_toward_higher_threshold() {
        // scores [3,2,1], labels [1,0,1]:
        //   thr>3: f1=0; cut after 3: tp=1,fp=0,fn=1 -> 2/3
        //   cut after 2: tp=1,fp=1,fn=1 -> 0.5; cut after 1: tp=2,fp=1 -> 0.8
        let (thr, v) = best_f1(&[3.0, 2.0, 1.0], &[1, 0, 1]).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert!(thr < 1.0);
        // genuine tie: cut after 4 -> tp=1,fp=0,fn=1 -> 2/3;
        // cut after 1 -> tp=2,fp=2,fn=0 -> 2/3. Higher threshold must win.
        let (thr2, v2) = best_f1(&[4.0, 3.0, 2.0, 1.0], &[1, 0, 0, 1]).unwrap();
        assert!((v2 - 2.0 / 3.0).abs() < 1e-12);
        assert!((thr2 - 3.5).abs() < 1e-12, "tie must break toward higher threshold, got {thr2}");
    }

    #[test]
    fn pr_curve_and_auprc_examples() {
        let curve = pr_curve(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap();
        assert!((auprc(&curve) - 1.0).abs() < 1e-12);
        let curve = pr_curve(&[0.9, 0.1], &[0, 1]).unwrap();
        assert!((auprc(&curve) - 0.5).abs() < 1e-12);
        let last = curve.points.last().unwrap();
        assert_eq!(last.recall, 1.0);
    }

    #[test]
    fn pr_curve_recall_non_decreasing() {
        let scores = [0.3, 0.7, 0.7, 0.2, 0.5, 0.9];
        let labels = [0, 1, 0, 1, 1, 0];
        let curve = pr_curve(&scores, &labels).unwrap();
        let mut prev = 0.0;
        for p in &curve.points {
            assert!(p.recall >= prev);
            assert!((0.0..=1.0).contains(&p.precision));
            prev = p.recall;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn constant_scores_single_block() {
        let scores = [0.5; 10];
        let labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let rep = evaluate(&scores, &labels).unwrap();
        let p = 0.2;
        assert!((rep.best_f1 - 2.0 * p / (p + 1.0)).abs() < 1e-12);
        assert!((rep.auprc - p).abs() < 1e-12);
    }

    #[test]
    fn perfect_scorer_report() {
        let rep = evaluate(&[1.0, 0.9, 0.1, 0.0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(rep.best_f1, 1.0);
        assert_eq!(rep.auprc, 1.0);
    }

    #[test]
    fn random_scores_auprc_near_prevalence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let prevalence = 0.2;
        let labels: Vec<u8> = (0..n)
            .map(|_| (rng.gen::<f64>() < prevalence) as u8)
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let rep = evaluate(&scores, &labels).unwrap();
        assert!(
            (rep.auprc - prevalence).abs() < 0.05,
            "auprc={} prevalence={prevalence}",
            rep.auprc
        );
    }

    #[test]
    fn concat_micro_aggregates() {
        let a_scores = [0.9, 0.1];
        let a_labels = [1u8, 0];
        let b_scores = [0.8, 0.2];
        let b_labels = [1u8, 0];
        let rep = evaluate_concat(&[(&a_scores, &a_labels), (&b_scores, &b_labels)]).unwrap();
        assert_eq!(rep.best_f1, 1.0);
    }
}
