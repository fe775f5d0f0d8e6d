//! Accuracy, confusion counts, one-vs-rest ROC curves, AUC, and
//! precision/recall, plus the CSV emitters for evaluation reports.
//!
//! ROC curves are one-vs-rest per class, scored by the softmax column for
//! that class. Tied scores collapse into a single threshold step, and the
//! curve always starts at (0,0) under a sentinel threshold above the max
//! score and ends at (1,1).

use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input error: {0}")]
    Input(String),
    #[error("ROC curve undefined: {0}")]
    DegenerateCurve(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Index of the largest value in a row; ties go to the first occurrence.
pub fn argmax_row<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-row argmax of a (N, classes) probability tensor as class indices.
pub fn predictions_from_probs<S: Scalar>(probs: &Tensor<S>) -> Result<Vec<u8>> {
    if probs.rank() != 2 {
        return Err(MetricsError::Input(format!(
            "expected rank-2 probabilities, got {}",
            probs.shape()
        )));
    }
    let classes = probs.dims()[1];
    if classes > 256 {
        return Err(MetricsError::Input(format!(
            "{classes} classes exceed the 256 supported by byte labels"
        )));
    }
    Ok(probs
        .data()
        .chunks_exact(classes)
        .map(|row| argmax_row(row) as u8)
        .collect())
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[u8], truth: &[u8]) -> Result<f64> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(MetricsError::Input(format!(
            "prediction/truth lengths {} vs {} (need equal, nonzero)",
            predictions.len(),
            truth.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(truth.iter())
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Per-class one-vs-rest counts. For class c: TP is the diagonal entry,
/// FN the rest of its row, FP the rest of its column, TN everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

/// classes x classes count matrix indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    matrix: Vec<u64>,
    classes: usize,
}

impl Confusion {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.matrix[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.matrix[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn per_class(&self) -> Vec<ConfusionCounts> {
        let total = self.total();
        (0..self.classes)
            .map(|c| {
                let true_pos = self.count(c, c);
                let row: u64 = self.row(c).iter().sum();
                let col: u64 = (0..self.classes).map(|t| self.count(t, c)).sum();
                let false_neg = row - true_pos;
                let false_pos = col - true_pos;
                ConfusionCounts {
                    true_pos,
                    false_pos,
                    false_neg,
                    true_neg: total - true_pos - false_pos - false_neg,
                }
            })
            .collect()
    }
}

pub fn confusion(predictions: &[u8], truth: &[u8], classes: usize) -> Result<Confusion> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(MetricsError::Input(format!(
            "prediction/truth lengths {} vs {} (need equal, nonzero)",
            predictions.len(),
            truth.len()
        )));
    }
    let mut matrix = vec![0u64; classes * classes];
    for (&p, &t) in predictions.iter().zip(truth.iter()) {
        if p as usize >= classes || t as usize >= classes {
            return Err(MetricsError::Input(format!(
                "label out of range: prediction {p}, truth {t}, classes {classes}"
            )));
        }
        matrix[t as usize * classes + p as usize] += 1;
    }
    Ok(Confusion { matrix, classes })
}

/// One point of a ROC curve: everything scoring >= `threshold` is predicted
/// positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One-vs-rest ROC curve from per-sample scores. Thresholds step through
/// each distinct score in descending order after an infinite sentinel, so
/// the curve runs from (0,0) to (1,1); tied scores share one step.
pub fn roc_curve(scores: &[f64], is_positive: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != is_positive.len() || scores.is_empty() {
        return Err(MetricsError::Input(format!(
            "score/label lengths {} vs {} (need equal, nonzero)",
            scores.len(),
            is_positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Input("NaN score".into()));
    }
    let pos_total = is_positive.iter().filter(|&&p| p).count();
    let neg_total = scores.len() - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(MetricsError::DegenerateCurve(format!(
            "{pos_total} positive and {neg_total} negative samples"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN scores"));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // Consume the whole tie group at this score.
        while i < order.len() && scores[order[i]] == s {
            if is_positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg_total as f64,
            tpr: tp as f64 / pos_total as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal integral of tpr over fpr; points must be sorted by fpr.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(MetricsError::Input(format!(
            "need at least 2 ROC points, got {}",
            points.len()
        )));
    }
    let mut area = 0.0f64;
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.fpr < a.fpr {
            return Err(MetricsError::Input(format!(
                "ROC points not sorted by fpr: {} after {}",
                b.fpr, a.fpr
            )));
        }
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
    }
    Ok(area)
}

/// precision = TP/(TP+FP), recall = TP/(TP+FN); `None` marks an undefined
/// ratio (zero denominator), which is not the same as 0.
pub fn precision_recall(c: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let precision = if c.true_pos + c.false_pos > 0 {
        Some(c.true_pos as f64 / (c.true_pos + c.false_pos) as f64)
    } else {
        None
    };
    let recall = if c.true_pos + c.false_neg > 0 {
        Some(c.true_pos as f64 / (c.true_pos + c.false_neg) as f64)
    } else {
        None
    };
    (precision, recall)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

/// The full evaluation suite over one prediction dump.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub per_class: Vec<ClassMetrics>,
    /// One curve per class; empty when that class is degenerate (absent or
    /// universal in the truth labels).
    pub roc: Vec<Vec<RocPoint>>,
}

/// Build the report from (N, classes) probabilities and truth labels.
pub fn evaluate_scores<S: Scalar>(probs: &Tensor<S>, truth: &[u8]) -> Result<EvalReport> {
    let predictions = predictions_from_probs(probs)?;
    if truth.len() != predictions.len() {
        return Err(MetricsError::Input(format!(
            "{} probability rows but {} truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    let classes = probs.dims()[1];
    let accuracy = accuracy(&predictions, truth)?;
    let confusion = confusion(&predictions, truth, classes)?;
    let counts = confusion.per_class();

    let mut per_class = Vec::with_capacity(classes);
    let mut roc = Vec::with_capacity(classes);
    for (c, class_counts) in counts.iter().enumerate() {
        let scores: Vec<f64> = (0..truth.len())
            .map(|i| probs.data()[i * classes + c].to_f64())
            .collect();
        let is_positive: Vec<bool> = truth.iter().map(|&t| t as usize == c).collect();
        let (curve, class_auc) = match roc_curve(&scores, &is_positive) {
            Ok(points) => {
                let a = auc(&points)?;
                (points, Some(a))
            }
            Err(MetricsError::DegenerateCurve(_)) => (Vec::new(), None),
            Err(e) => return Err(e),
        };
        let (precision, recall) = precision_recall(class_counts);
        per_class.push(ClassMetrics {
            precision,
            recall,
            auc: class_auc,
        });
        roc.push(curve);
    }
    Ok(EvalReport {
        accuracy,
        confusion,
        per_class,
        roc,
    })
}

/// Predictions dump CSV: `sample_index,true_class,pred_class,score_0,...`.
pub fn encode_predictions_csv<S: Scalar>(probs: &Tensor<S>, truth: &[u8]) -> Result<String> {
    let predictions = predictions_from_probs(probs)?;
    if truth.len() != predictions.len() {
        return Err(MetricsError::Input(format!(
            "{} probability rows but {} truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    let classes = probs.dims()[1];
    let mut out = String::from("sample_index,true_class,pred_class");
    for c in 0..classes {
        out.push_str(&format!(",score_{c}"));
    }
    out.push('\n');
    for (i, (&t, &p)) in truth.iter().zip(predictions.iter()).enumerate() {
        out.push_str(&format!("{i},{t},{p}"));
        for c in 0..classes {
            out.push_str(&format!(",{}", probs.data()[i * classes + c]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// ROC CSV: `class,threshold,fpr,tpr`, rows grouped by class.
pub fn encode_roc_csv(roc: &[Vec<RocPoint>]) -> String {
    let mut out = String::from("class,threshold,fpr,tpr\n");
    for (c, curve) in roc.iter().enumerate() {
        for p in curve {
            out.push_str(&format!("{c},{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
    }
    out
}

/// AUC summary CSV: `class,char,auc`; undefined AUCs are left empty.
pub fn encode_auc_csv(per_class: &[ClassMetrics], label_map: &[char]) -> String {
    let mut out = String::from("class,char,auc\n");
    for (c, m) in per_class.iter().enumerate() {
        let ch = label_map.get(c).copied().unwrap_or('?');
        let a = m.auc.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{c},{ch},{a}\n"));
    }
    out
}

/// Confusion CSV: header `true_class,pred_0,...`, one row per true class.
pub fn encode_confusion_csv(confusion: &Confusion) -> String {
    let classes = confusion.classes();
    let mut out = String::from("true_class");
    for c in 0..classes {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for t in 0..classes {
        out.push_str(&t.to_string());
        for p in confusion.row(t) {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::label_map_balanced47;
    use crate::rng::Rng;
    use crate::tensor::Shape;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[2, 1]).unwrap(), 0.0);
        let p = [0, 1, 2, 3, 4, 5, 6, 7, 8, 0];
        let t = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        assert_eq!(accuracy(&p, &t).unwrap(), 0.9);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn confusion_all_correct_is_diagonal() {
        let labels = [0u8, 1, 2, 1, 0];
        let c = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(c.trace(), 5);
        assert_eq!(c.total(), 5);
        for t in 0..3 {
            for p in 0..3 {
                if t != p {
                    assert_eq!(c.count(t, p), 0);
                }
            }
        }
    }

    #[test]
    fn confusion_records_t_predicted_as_f() {
        // A lowercase 't' (class 46) predicted as 'F' (class 15) lands on
        // the off-diagonal cell of t's row.
        let map = label_map_balanced47();
        let t_idx = map.iter().position(|&c| c == 't').unwrap() as u8;
        let f_idx = map.iter().position(|&c| c == 'F').unwrap() as u8;
        assert_eq!((t_idx, f_idx), (46, 15));
        let c = confusion(&[f_idx], &[t_idx], 47).unwrap();
        assert_eq!(c.count(46, 15), 1);
        let counts = c.per_class();
        assert_eq!(counts[46].false_neg, 1);
        assert_eq!(counts[15].false_pos, 1);
    }

    #[test]
    fn confusion_rejects_out_of_range_labels() {
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0], &[3], 3).is_err());
    }

    // Quadruple-loop per-class recount, straight from the definitions.
    fn counts_oracle(predictions: &[u8], truth: &[u8], classes: usize) -> Vec<ConfusionCounts> {
        (0..classes as u8)
            .map(|c| {
                let mut counts = ConfusionCounts {
                    true_pos: 0,
                    false_pos: 0,
                    false_neg: 0,
                    true_neg: 0,
                };
                for (&p, &t) in predictions.iter().zip(truth.iter()) {
                    match (t == c, p == c) {
                        (true, true) => counts.true_pos += 1,
                        (true, false) => counts.false_neg += 1,
                        (false, true) => counts.false_pos += 1,
                        (false, false) => counts.true_neg += 1,
                    }
                }
                counts
            })
            .collect()
    }

    #[test]
    fn confusion_counts_match_recount_oracle() {
        let mut rng = Rng::new(55);
        let predictions: Vec<u8> = (0..50).map(|_| rng.next_below(3) as u8).collect();
        let truth: Vec<u8> = (0..50).map(|_| rng.next_below(3) as u8).collect();
        let c = confusion(&predictions, &truth, 3).unwrap();
        assert_eq!(c.per_class(), counts_oracle(&predictions, &truth, 3));
        // Row sums equal per-class truth counts; grand total equals N.
        for t in 0..3u8 {
            let row_sum: u64 = c.row(t as usize).iter().sum();
            let truth_count = truth.iter().filter(|&&x| x == t).count() as u64;
            assert_eq!(row_sum, truth_count);
        }
        assert_eq!(c.total(), 50);
        // accuracy == trace/total exactly.
        let acc = accuracy(&predictions, &truth).unwrap();
        assert_eq!(acc, c.trace() as f64 / c.total() as f64);
    }

    #[test]
    fn roc_perfectly_separated_passes_through_corner() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let points = roc_curve(&scores, &labels).unwrap();
        assert!(points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(points.first().unwrap().threshold, f64::INFINITY);
        assert_eq!(
            (points.last().unwrap().fpr, points.last().unwrap().tpr),
            (1.0, 1.0)
        );
    }

    #[test]
    fn roc_identical_scores_collapse_to_two_points() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        let points = roc_curve(&scores, &labels).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        assert_eq!((points[1].fpr, points[1].tpr), (1.0, 1.0));
        assert!((auc(&points).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn roc_rejects_single_class_truth() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::DegenerateCurve(_))
        ));
    }

    // Exhaustive threshold sweep: for every candidate threshold, recount
    // rates directly.
    fn roc_oracle(scores: &[f64], is_positive: &[bool]) -> Vec<(f64, f64)> {
        let pos = is_positive.iter().filter(|&&p| p).count() as f64;
        let neg = is_positive.len() as f64 - pos;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut points = vec![(0.0, 0.0)];
        for &th in &thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&s, &p) in scores.iter().zip(is_positive.iter()) {
                if s >= th {
                    if p {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            points.push((fp / neg, tp / pos));
        }
        points
    }

    #[test]
    fn roc_matches_exhaustive_sweep_oracle() {
        let mut rng = Rng::new(77);
        for _ in 0..10 {
            let scores: Vec<f64> = (0..20)
                .map(|_| (rng.next_below(10) as f64) / 10.0)
                .collect();
            let labels: Vec<bool> = (0..20).map(|_| rng.next_below(2) == 1).collect();
            if labels.iter().all(|&b| b) || labels.iter().all(|&b| !b) {
                continue;
            }
            let points = roc_curve(&scores, &labels).unwrap();
            let oracle = roc_oracle(&scores, &labels);
            assert_eq!(points.len(), oracle.len());
            for (p, (fpr, tpr)) in points.iter().zip(oracle) {
                assert_eq!(p.fpr, fpr);
                assert_eq!(p.tpr, tpr);
            }
        }
    }

    #[test]
    fn roc_is_monotone() {
        let mut rng = Rng::new(78);
        let scores: Vec<f64> = (0..60).map(|_| rng.next_f64()).collect();
        let labels: Vec<bool> = (0..60).map(|_| rng.next_below(2) == 1).collect();
        let points = roc_curve(&scores, &labels).unwrap();
        for pair in points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr);
            assert!(pair[1].tpr >= pair[0].tpr);
        }
    }

    #[test]
    fn auc_perfect_classifier_is_one() {
        let points = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!((auc(&points).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_needs_two_points() {
        assert!(auc(&[RocPoint {
            threshold: 1.0,
            fpr: 0.0,
            tpr: 0.0
        }])
        .is_err());
    }

    // Rank statistic: P(score_pos > score_neg) + 0.5 P(equal), over all pairs.
    fn auc_rank_oracle(scores: &[f64], is_positive: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &pi) in is_positive.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in is_positive.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_rank_statistic_oracle() {
        let mut rng = Rng::new(91);
        for trial in 0..20 {
            let n = 20 + rng.next_below(181);
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.next_below(25) as f64) / 25.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.next_below(2) == 1).collect();
            labels[0] = true;
            labels[1] = false;
            let points = roc_curve(&scores, &labels).unwrap();
            let got = auc(&points).unwrap();
            let want = auc_rank_oracle(&scores, &labels);
            assert!(
                (got - want).abs() <= 1e-12,
                "trial {trial}: trapezoid {got} vs rank {want}"
            );
        }
    }

    #[test]
    fn precision_recall_examples() {
        let perfect = ConfusionCounts {
            true_pos: 5,
            false_pos: 0,
            false_neg: 0,
            true_neg: 10,
        };
        assert_eq!(precision_recall(&perfect), (Some(1.0), Some(1.0)));

        let mixed = ConfusionCounts {
            true_pos: 1,
            false_pos: 1,
            false_neg: 3,
            true_neg: 5,
        };
        assert_eq!(precision_recall(&mixed), (Some(0.5), Some(0.25)));

        let empty_pred = ConfusionCounts {
            true_pos: 0,
            false_pos: 0,
            false_neg: 2,
            true_neg: 8,
        };
        let (precision, recall) = precision_recall(&empty_pred);
        assert_eq!(precision, None);
        assert_eq!(recall, Some(0.0));
    }

    #[test]
    fn evaluate_scores_builds_consistent_report() {
        let probs = Tensor::from_vec(
            Shape::new([4, 3]).unwrap(),
            vec![
                0.8f32, 0.1, 0.1, //
                0.2, 0.7, 0.1, //
                0.3, 0.3, 0.4, //
                0.6, 0.2, 0.2,
            ],
        )
        .unwrap();
        let truth = [0u8, 1, 2, 1];
        let report = evaluate_scores(&probs, &truth).unwrap();
        assert_eq!(report.accuracy, 0.75);
        assert_eq!(report.confusion.trace(), 3);
        assert_eq!(report.per_class.len(), 3);
        assert!(report.per_class.iter().all(|m| m.auc.is_some()));
        assert_eq!(
            report.accuracy,
            report.confusion.trace() as f64 / report.confusion.total() as f64
        );
    }

    #[test]
    fn csv_emitters_have_declared_headers() {
        let probs = Tensor::from_vec(
            Shape::new([2, 3]).unwrap(),
            vec![0.5f32, 0.25, 0.25, 0.1, 0.8, 0.1],
        )
        .unwrap();
        let truth = [0u8, 1];
        let report = evaluate_scores(&probs, &truth).unwrap();

        let pred_csv = encode_predictions_csv(&probs, &truth).unwrap();
        assert!(
            pred_csv.starts_with("sample_index,true_class,pred_class,score_0,score_1,score_2\n")
        );
        assert!(pred_csv.contains("0,0,0,0.5,0.25,0.25"));

        let roc_csv = encode_roc_csv(&report.roc);
        assert!(roc_csv.starts_with("class,threshold,fpr,tpr\n"));
        assert!(roc_csv.contains("0,inf,0,0"));

        let auc_csv = encode_auc_csv(&report.per_class, &['x', 'y', 'z']);
        assert!(auc_csv.starts_with("class,char,auc\n"));
        assert!(auc_csv.lines().nth(1).unwrap().starts_with("0,x,"));

        let conf_csv = encode_confusion_csv(&report.confusion);
        assert!(conf_csv.starts_with("true_class,pred_0,pred_1,pred_2\n"));
    }
}
