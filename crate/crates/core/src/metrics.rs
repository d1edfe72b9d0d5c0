//! Classification metrics: confusion matrix, per-class accuracy,
//! overall accuracy, average accuracy, and Cohen's kappa.

use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hsi::LabelMap;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptyTestSet,
    UnlabeledTruth { pixel: usize },
    PredictionOutOfRange { pixel: usize, class: u16 },
    DimensionMismatch,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyTestSet => write!(f, "no test pixels to evaluate"),
            EvalError::UnlabeledTruth { pixel } => {
                write!(f, "test pixel {pixel} is unlabeled in the ground truth")
            }
            EvalError::PredictionOutOfRange { pixel, class } => {
                write!(f, "prediction {class} at pixel {pixel} outside 1..=C")
            }
            EvalError::DimensionMismatch => write!(f, "prediction and truth maps differ in size"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Evaluation summary over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// C x C counts, rows = truth, cols = prediction, row-major.
    pub confusion: Vec<u64>,
    pub classes: usize,
    /// Per-class recall; `None` for classes with no test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub oa: f64,
    /// Mean of per-class accuracies over classes with test samples.
    pub aa: f64,
    pub kappa: f64,
    pub n_test: u64,
    /// Classes that had no test samples (excluded from AA).
    pub empty_classes: Vec<u16>,
}

impl EvalReport {
    pub fn confusion_at(&self, truth: usize, pred: usize) -> u64 {
        self.confusion[truth * self.classes + pred]
    }
}

/// Compare predictions against ground truth over the given test pixels.
/// Class count comes from the truth map's contiguous 1..=C ids.
pub fn evaluate(
    pred: &LabelMap,
    truth: &LabelMap,
    test_indices: &[usize],
) -> Result<EvalReport, EvalError> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(EvalError::DimensionMismatch);
    }
    if test_indices.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let c = truth.class_count();
    let mut confusion = alloc::vec![0u64; c * c];
    for &px in test_indices {
        let t = truth.labels()[px];
        if t == 0 {
            return Err(EvalError::UnlabeledTruth { pixel: px });
        }
        let p = pred.labels()[px];
        if p == 0 || p as usize > c {
            return Err(EvalError::PredictionOutOfRange { pixel: px, class: p });
        }
        confusion[(t as usize - 1) * c + (p as usize - 1)] += 1;
    }
    Ok(report_from_confusion(confusion, c))
}

/// Metrics from a raw confusion matrix (rows = truth, cols = pred).
pub fn report_from_confusion(confusion: Vec<u64>, classes: usize) -> EvalReport {
    let c = classes;
    assert_eq!(confusion.len(), c * c);
    let n: u64 = confusion.iter().sum();
    let nf = n as f64;

    let mut per_class = Vec::with_capacity(c);
    let mut empty = Vec::new();
    let mut aa_sum = 0.0f64;
    let mut aa_count = 0usize;
    let mut trace = 0u64;
    for t in 0..c {
        let row: u64 = confusion[t * c..(t + 1) * c].iter().sum();
        let diag = confusion[t * c + t];
        trace += diag;
        if row == 0 {
            per_class.push(None);
            empty.push((t + 1) as u16);
        } else {
            let acc = diag as f64 / row as f64;
            per_class.push(Some(acc));
            aa_sum += acc;
            aa_count += 1;
        }
    }
    let oa = trace as f64 / nf;
    let aa = if aa_count > 0 { aa_sum / aa_count as f64 } else { 0.0 };

    // kappa = (p_o - p_e) / (1 - p_e), expected agreement from marginals
    let mut pe = 0.0f64;
    for k in 0..c {
        let row: u64 = confusion[k * c..(k + 1) * c].iter().sum();
        let col: u64 = (0..c).map(|t| confusion[t * c + k]).sum();
        pe += (row as f64 / nf) * (col as f64 / nf);
    }
    let kappa = if (1.0 - pe).abs() < 1e-12 {
        // degenerate marginals: agreement is either total or absent
        if (oa - 1.0).abs() < 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - pe) / (1.0 - pe)
    };

    EvalReport {
        confusion,
        classes: c,
        per_class_accuracy: per_class,
        oa,
        aa,
        kappa,
        n_test: n,
        empty_classes: empty,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn map_of(labels: Vec<u16>) -> LabelMap {
        let n = labels.len();
        LabelMap::new(1, n, labels).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = map_of(alloc::vec![1, 2, 1, 2, 3, 3]);
        let pred = truth.clone();
        let idx: Vec<usize> = (0..6).collect();
        let r = evaluate(&pred, &truth, &idx).unwrap();
        assert_eq!(r.oa, 1.0);
        assert_eq!(r.aa, 1.0);
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.n_test, 6);
    }

    #[test]
    fn hand_computed_confusion_case() {
        // confusion [[2,0],[1,1]]: OA = 0.75, AA = 0.75,
        // p_e = (2*3 + 2*1)/16 = 0.5, kappa = 0.5
        let truth = map_of(alloc::vec![1, 1, 2, 2]);
        let pred = map_of(alloc::vec![1, 1, 1, 2]);
        let idx: Vec<usize> = (0..4).collect();
        let r = evaluate(&pred, &truth, &idx).unwrap();
        assert_eq!(r.confusion, alloc::vec![2, 0, 1, 1]);
        assert!((r.oa - 0.75).abs() < 1e-12);
        assert!((r.aa - 0.75).abs() < 1e-12);
        assert!((r.kappa - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_random_predictions_have_near_zero_kappa() {
        let mut rng = crate::rng::seeded(1);
        let n = 10_000;
        let c = 4u16;
        let truth: Vec<u16> = (0..n).map(|_| rng.random_range(1..=c)).collect();
        let pred: Vec<u16> = (0..n).map(|_| rng.random_range(1..=c)).collect();
        let idx: Vec<usize> = (0..n).collect();
        let r = evaluate(&map_of(pred), &map_of(truth), &idx).unwrap();
        assert!(r.kappa.abs() < 0.05, "kappa {} not near zero", r.kappa);
    }

    #[test]
    fn kappa_is_one_iff_diagonal() {
        let diag = report_from_confusion(alloc::vec![3, 0, 0, 5], 2);
        assert_eq!(diag.kappa, 1.0);
        let off = report_from_confusion(alloc::vec![3, 1, 0, 5], 2);
        assert!(off.kappa < 1.0);
    }

    #[test]
    fn empty_class_excluded_from_aa() {
        // class 2 has no test rows
        let r = report_from_confusion(alloc::vec![4, 0, 0, 0, 0, 0, 1, 0, 3], 3);
        assert_eq!(r.empty_classes, alloc::vec![2u16]);
        assert_eq!(r.per_class_accuracy[1], None);
        let want_aa = (1.0 + 0.75) / 2.0;
        assert!((r.aa - want_aa).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_loop_oracle() {
        // direct per-pixel loop, written from the definitions
        let mut rng = crate::rng::seeded(2);
        for _case in 0..100 {
            let c = rng.random_range(2..=6u16);
            let n = rng.random_range(1..=2000usize);
            let truth: Vec<u16> = (0..n).map(|_| rng.random_range(1..=c)).collect();
            let pred: Vec<u16> = (0..n).map(|_| rng.random_range(1..=c)).collect();
            // force every class to appear in truth so ids stay contiguous
            let mut truth = truth;
            for k in 1..=c {
                if !truth.contains(&k) {
                    truth.push(k);
                }
            }
            let pred: Vec<u16> = {
                let mut p = pred;
                while p.len() < truth.len() {
                    p.push(rng.random_range(1..=c));
                }
                p
            };
            let n = truth.len();
            let idx: Vec<usize> = (0..n).collect();
            let r = evaluate(&map_of(pred.clone()), &map_of(truth.clone()), &idx).unwrap();

            // oracle
            let cn = c as usize;
            let mut hits = 0usize;
            let mut per_class_hits = alloc::vec![0usize; cn];
            let mut per_class_total = alloc::vec![0usize; cn];
            let mut pred_totals = alloc::vec![0usize; cn];
            for i in 0..n {
                if truth[i] == pred[i] {
                    hits += 1;
                    per_class_hits[truth[i] as usize - 1] += 1;
                }
                per_class_total[truth[i] as usize - 1] += 1;
                pred_totals[pred[i] as usize - 1] += 1;
            }
            let oa = hits as f64 / n as f64;
            assert_eq!(r.oa, oa);
            let mut aa_sum = 0.0;
            let mut aa_n = 0;
            for k in 0..cn {
                if per_class_total[k] > 0 {
                    aa_sum += per_class_hits[k] as f64 / per_class_total[k] as f64;
                    aa_n += 1;
                }
            }
            assert!((r.aa - aa_sum / aa_n as f64).abs() < 1e-12);
            let mut pe = 0.0;
            for k in 0..cn {
                pe += (per_class_total[k] as f64 / n as f64) * (pred_totals[k] as f64 / n as f64);
            }
            let kappa = (oa - pe) / (1.0 - pe);
            assert!((r.kappa - kappa).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_are_reported() {
        let truth = map_of(alloc::vec![1, 0, 2]);
        let pred = map_of(alloc::vec![1, 1, 5]);
        assert!(matches!(
            evaluate(&pred, &truth, &[]),
            Err(EvalError::EmptyTestSet)
        ));
        assert!(matches!(
            evaluate(&pred, &truth, &[1]),
            Err(EvalError::UnlabeledTruth { pixel: 1 })
        ));
        assert!(matches!(
            evaluate(&pred, &truth, &[2]),
            Err(EvalError::PredictionOutOfRange { pixel: 2, class: 5 })
        ));
    }
}
