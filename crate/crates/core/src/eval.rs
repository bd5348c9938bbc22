//! Effectiveness and fairness metrics, threshold sweeps, and report
//! assembly.
//!
//! Detection quality is measured by AUC-ROC (rank statistic, ties counted
//! half), AUC-PR (descending-score step curve with atomic tie groups) and
//! Macro-F1. Counterfactual fairness is the changing ratio: the fraction
//! of samples whose predicted label flips when the sensitive attribute is
//! flipped. The trade-off sweep re-fits the threshold at a ladder of
//! training-score quantiles and reports both metrics per rung, which is
//! the raw material for effectiveness-vs-fairness plots.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::CounterfactualPair;
use crate::detector::{anomaly_score, anomaly_scores, fit_threshold, DetectorError, DetectorParams};
use crate::scm::Dataset;

/// The threshold quantiles the trade-off sweep walks through.
pub const SWEEP_QUANTILES: [f64; 9] = [0.8, 0.85, 0.9, 0.95, 0.97, 0.98, 0.99, 0.995, 0.999];

/// Errors from metric computation and report assembly.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: &'static str },
    #[error("{metric} got {left} entries on one side and {right} on the other")]
    LengthMismatch { metric: &'static str, left: usize, right: usize },
    #[error("test data carries no labels")]
    MissingLabels,
    #[error("counterfactual pair {index} does not match its factual test row")]
    Misaligned { index: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// One rung of the trade-off sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: f64,
    pub tau: f64,
    pub macro_f1: f64,
    pub changing_ratio: f64,
}

/// Raw per-sample scores and decisions, enough to redraw score plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: usize,
    /// Sensitive value of the factual sample.
    pub group: f64,
    pub score: f64,
    pub score_cf: f64,
    pub pred: u8,
    pub pred_cf: u8,
}

/// Full evaluation of one trained detector on one labeled test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub macro_f1: f64,
    pub changing_ratio: f64,
    /// Quantile used for the headline macro_f1/changing_ratio numbers.
    pub q: f64,
    pub tau: f64,
    pub sweep: Vec<SweepRow>,
    pub scores: Vec<ScoreRow>,
    pub seed: u64,
    pub config_hash: String,
}

/// AUC-ROC as the rank statistic: the probability that a random positive
/// outscores a random negative, ties counted half. Equal to trapezoidal
/// integration of the ROC curve.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths("auc_roc", scores.len(), labels.len())?;
    check_binary(labels);
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined { metric: "auc_roc", reason: "needs both classes" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum the 1-based ranks of the positives, averaging ranks inside tie
    // groups. Ranks are half-integers, so the arithmetic below is exact.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += mid_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC-PR by a descending-score sweep, adding `(recall step) * precision`
/// per distinct score. Tie groups enter atomically, never split.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths("auc_pr", scores.len(), labels.len())?;
    check_binary(labels);
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return Err(EvalError::Undefined { metric: "auc_pr", reason: "needs a positive" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut area, mut tp, mut fp, mut prev_recall) = (0.0, 0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Unweighted mean of the F1 scores of class 0 and class 1. A class absent
/// from both predictions and labels contributes 1; a present class that
/// scores no true positives contributes 0.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths("macro_f1", preds.len(), labels.len())?;
    check_binary(preds);
    check_binary(labels);
    if preds.is_empty() {
        return Err(EvalError::Undefined { metric: "macro_f1", reason: "empty input" });
    }
    let f1 = |class: u8| {
        let tp = preds.iter().zip(labels).filter(|(p, l)| **p == class && **l == class).count();
        let fp = preds.iter().zip(labels).filter(|(p, l)| **p == class && **l != class).count();
        let fn_ = preds.iter().zip(labels).filter(|(p, l)| **p != class && **l == class).count();
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    Ok((f1(0) + f1(1)) / 2.0)
}

/// Fraction of samples whose predicted label differs between the factual
/// and the counterfactual version.
pub fn changing_ratio(factual_preds: &[u8], cf_preds: &[u8]) -> Result<f64, EvalError> {
    check_lengths("changing_ratio", factual_preds.len(), cf_preds.len())?;
    if factual_preds.is_empty() {
        return Err(EvalError::Undefined { metric: "changing_ratio", reason: "empty input" });
    }
    let flips = factual_preds.iter().zip(cf_preds).filter(|(a, b)| a != b).count();
    Ok(flips as f64 / factual_preds.len() as f64)
}

/// Walks the threshold ladder: for each quantile, fit tau on the training
/// scores and report Macro-F1 and changing ratio on the test pairs. Rows
/// come back ordered by q ascending.
pub fn tradeoff_sweep(
    params: &DetectorParams,
    train: &Dataset,
    test: &Dataset,
    pairs: &[CounterfactualPair],
    quantiles: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    let labels = test_labels(test)?;
    validate_pairs(test, pairs)?;
    let mut sorted = quantiles.to_vec();
    sorted.sort_by(f64::total_cmp);
    let factual_scores = anomaly_scores(params, test);
    let cf_scores: Vec<f64> =
        pairs.iter().map(|p| anomaly_score(params, &p.counterfactual.x)).collect();
    sorted
        .into_iter()
        .map(|q| {
            let threshold = fit_threshold(params, train, q)?;
            let preds: Vec<u8> =
                factual_scores.iter().map(|&v| u8::from(v > threshold.tau)).collect();
            let cf_preds: Vec<u8> =
                cf_scores.iter().map(|&v| u8::from(v > threshold.tau)).collect();
            Ok(SweepRow {
                q,
                tau: threshold.tau,
                macro_f1: macro_f1(&preds, &labels)?,
                changing_ratio: changing_ratio(&preds, &cf_preds)?,
            })
        })
        .collect()
}

/// Evaluates one trained detector end to end: headline metrics at `q`,
/// the sweep over `quantiles`, and the raw score dump.
pub fn assemble_report(
    params: &DetectorParams,
    train: &Dataset,
    test: &Dataset,
    pairs: &[CounterfactualPair],
    q: f64,
    quantiles: &[f64],
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    let labels = test_labels(test)?;
    validate_pairs(test, pairs)?;
    let threshold = fit_threshold(params, train, q)?;
    let factual_scores = anomaly_scores(params, test);
    let cf_scores: Vec<f64> =
        pairs.iter().map(|p| anomaly_score(params, &p.counterfactual.x)).collect();
    let preds: Vec<u8> = factual_scores.iter().map(|&v| u8::from(v > threshold.tau)).collect();
    let cf_preds: Vec<u8> = cf_scores.iter().map(|&v| u8::from(v > threshold.tau)).collect();

    let scores = test
        .samples()
        .iter()
        .enumerate()
        .map(|(i, sample)| ScoreRow {
            sample_id: i,
            group: sample.s,
            score: factual_scores[i],
            score_cf: cf_scores[i],
            pred: preds[i],
            pred_cf: cf_preds[i],
        })
        .collect();

    let report = EvalReport {
        auc_pr: auc_pr(&factual_scores, &labels)?,
        auc_roc: auc_roc(&factual_scores, &labels)?,
        macro_f1: macro_f1(&preds, &labels)?,
        changing_ratio: changing_ratio(&preds, &cf_preds)?,
        q,
        tau: threshold.tau,
        sweep: tradeoff_sweep(params, train, test, pairs, quantiles)?,
        scores,
        seed,
        config_hash: config_hash.to_string(),
    };
    for (name, value) in [
        ("auc_pr", report.auc_pr),
        ("auc_roc", report.auc_roc),
        ("macro_f1", report.macro_f1),
        ("changing_ratio", report.changing_ratio),
    ] {
        assert!((0.0..=1.0).contains(&value), "{name} = {value} left [0, 1]");
    }
    debug!("report assembled: macro_f1 {:.3}, changing ratio {:.3}", report.macro_f1, report.changing_ratio);
    Ok(report)
}

fn check_lengths(metric: &'static str, left: usize, right: usize) -> Result<(), EvalError> {
    if left == right {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch { metric, left, right })
    }
}

fn check_binary(values: &[u8]) {
    assert!(values.iter().all(|&v| v <= 1), "labels must be 0 or 1");
}

fn test_labels(test: &Dataset) -> Result<Vec<u8>, EvalError> {
    if !test.has_labels() {
        return Err(EvalError::MissingLabels);
    }
    Ok(test.samples().iter().map(|s| s.y.expect("labelled dataset")).collect())
}

fn validate_pairs(test: &Dataset, pairs: &[CounterfactualPair]) -> Result<(), EvalError> {
    if pairs.len() != test.len() {
        return Err(EvalError::LengthMismatch {
            metric: "counterfactual pairing",
            left: test.len(),
            right: pairs.len(),
        });
    }
    for (index, (pair, sample)) in pairs.iter().zip(test.samples()).enumerate() {
        if pair.factual.s != sample.s || pair.factual.x != sample.x {
            return Err(EvalError::Misaligned { index });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::Provenance;
    use crate::detector::{predict_batch, pretrain, DetectorConfig};
    use crate::numerics::{SeededRng, Stream};
    use crate::scm::Sample;
    use proptest::prelude::*;

    /// Exhaustive pairwise count: 1 per positive-negative pair the positive
    /// wins, 0.5 per tie.
    fn pairwise_auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let pos: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
        let neg: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
        let mut credit = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    credit += 1.0;
                } else if p == n {
                    credit += 0.5;
                }
            }
        }
        credit / (pos.len() as f64 * neg.len() as f64)
    }

    /// Precision-recall area by enumerating every distinct score as a
    /// threshold, descending, predicting positive at score >= threshold.
    fn threshold_pr_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let total_pos = labels.iter().filter(|&&l| l == 1).count();
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let (mut area, mut prev_recall) = (0.0, 0.0);
        for t in thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| s >= t && l == 1)
                .count();
            let flagged = scores.iter().filter(|&&s| s >= t).count();
            let recall = tp as f64 / total_pos as f64;
            let precision = tp as f64 / flagged as f64;
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auc_roc_rewards_perfect_separation() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [1, 1, 1, 0, 0];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auc_roc(&scores, &[0, 0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn auc_roc_matches_the_pairwise_oracle_on_a_tied_fixture() {
        let scores = [0.9, 0.8, 0.8, 0.4, 0.3, 0.3];
        let labels = [1, 1, 0, 1, 0, 0];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise_auc_oracle(&scores, &labels));
    }

    #[test]
    fn auc_roc_is_near_half_for_random_labels() {
        let scores: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mut labels = vec![0u8; 15];
        labels.extend(vec![1u8; 15]);
        let mut rng = SeededRng::new(99, Stream::Shuffle);
        let mut total = 0.0;
        for _ in 0..1000 {
            rng.shuffle(&mut labels);
            total += auc_roc(&scores, &labels).unwrap();
        }
        let mean = total / 1000.0;
        assert!((mean - 0.5).abs() < 0.03, "mean AUC {mean}");
    }

    #[test]
    fn auc_roc_rejects_single_class_input() {
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[1, 1]),
            Err(EvalError::Undefined { metric: "auc_roc", .. })
        ));
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[0, 0]),
            Err(EvalError::Undefined { metric: "auc_roc", .. })
        ));
        assert!(matches!(
            auc_roc(&[0.1], &[1, 0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn auc_pr_handles_the_trivial_fixtures() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auc_pr(&scores, &[1, 1, 0, 0]).unwrap(), 1.0);
        // All scores equal: a single operating point at full recall with
        // precision equal to prevalence.
        assert_eq!(auc_pr(&[0.5; 8], &[1, 0, 0, 1, 0, 1, 0, 0]).unwrap(), 3.0 / 8.0);
        assert!(matches!(
            auc_pr(&[0.1, 0.2], &[0, 0]),
            Err(EvalError::Undefined { metric: "auc_pr", .. })
        ));
    }

    #[test]
    fn auc_pr_matches_the_threshold_oracle_on_a_tied_fixture() {
        let scores = [0.9, 0.7, 0.7, 0.7, 0.4, 0.4, 0.2, 0.1];
        let labels = [1, 0, 1, 1, 0, 1, 0, 0];
        assert_eq!(auc_pr(&scores, &labels).unwrap(), threshold_pr_oracle(&scores, &labels));
    }

    #[test]
    fn macro_f1_matches_hand_fixtures() {
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), 0.0);

        // TP=3 FP=1 FN=2 TN=4 for class 1.
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0];
        assert_eq!(macro_f1(&preds, &labels).unwrap(), (2.0 / 3.0 + 8.0 / 11.0) / 2.0);

        // Class 1 absent on both sides counts as perfect for that class.
        assert_eq!(macro_f1(&[0, 0], &[0, 0]).unwrap(), 1.0);
        // Nothing predicted for a fully positive set: both classes present
        // somewhere but neither earns a true positive.
        assert_eq!(macro_f1(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(matches!(macro_f1(&[], &[]), Err(EvalError::Undefined { .. })));
    }

    #[test]
    fn changing_ratio_counts_disagreements() {
        assert_eq!(changing_ratio(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(changing_ratio(&[1, 0, 1], &[0, 1, 0]).unwrap(), 1.0);
        let factual = [1, 0, 0, 1, 1, 0, 0, 0, 1, 0];
        let cf = [0, 0, 0, 1, 0, 0, 1, 0, 1, 0];
        assert_eq!(changing_ratio(&factual, &cf).unwrap(), 0.3);
        assert!(matches!(changing_ratio(&[1], &[1, 0]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn changing_ratio_is_symmetric_and_relabel_invariant() {
        let a = [1, 0, 0, 1, 1, 0];
        let b = [0, 0, 1, 1, 0, 0];
        let forward = changing_ratio(&a, &b).unwrap();
        assert_eq!(forward, changing_ratio(&b, &a).unwrap());
        let flip = |v: &[u8]| v.iter().map(|&x| 1 - x).collect::<Vec<_>>();
        assert_eq!(forward, changing_ratio(&flip(&a), &flip(&b)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn auc_roc_survives_monotone_transforms(
            entries in proptest::collection::vec((-10.0f64..10.0, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = entries.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = entries.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = auc_roc(&scores, &labels).unwrap();
            let exp: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|v| 3.0 * v + 7.0).collect();
            prop_assert_eq!(base, auc_roc(&exp, &labels).unwrap());
            prop_assert_eq!(base, auc_roc(&affine, &labels).unwrap());
        }

        #[test]
        fn small_fixtures_agree_with_both_oracles(
            entries in proptest::collection::vec((0u8..4, 0u8..2), 2..=12)
        ) {
            // Coarse score grid to force plenty of ties.
            let scores: Vec<f64> = entries.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = entries.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.contains(&1));
            prop_assert_eq!(auc_pr(&scores, &labels).unwrap(), threshold_pr_oracle(&scores, &labels));
            if labels.contains(&0) {
                prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise_auc_oracle(&scores, &labels));
            }
        }
    }

    fn sample(s: f64, x: Vec<f64>, y: Option<u8>) -> Sample {
        Sample { s, x, u: None, y }
    }

    /// Small correlated training set plus a labeled test set where
    /// anomalies sit far from the training manifold.
    fn toy_problem(seed: u64) -> (Dataset, Dataset, Vec<CounterfactualPair>) {
        let mut rng = SeededRng::new(seed, Stream::Noise);
        let mut draw = |anomalous: bool| {
            let s = rng.sign();
            let scale = if anomalous { 6.0 } else { 1.0 };
            let x1 = 1.2 * s + 0.4 * rng.standard_normal() * scale;
            let x2 = -0.8 * x1 + 0.4 * rng.standard_normal() * scale;
            (s, vec![x1, x2])
        };
        let train = Dataset::new(
            (0..240).map(|_| { let (s, x) = draw(false); sample(s, x, None) }).collect(),
            2,
        );
        let test = Dataset::new(
            (0..80)
                .map(|i| {
                    let anomalous = i % 4 == 0;
                    let (s, x) = draw(anomalous);
                    sample(s, x, Some(u8::from(anomalous)))
                })
                .collect(),
            2,
        );
        let pairs = test
            .samples()
            .iter()
            .map(|f| {
                let shift = -2.0 * 1.2 * f.s;
                CounterfactualPair {
                    factual: f.clone(),
                    counterfactual: sample(-f.s, vec![f.x[0] + shift, f.x[1] - 0.8 * shift], None),
                    provenance: Provenance::Estimated,
                }
            })
            .collect();
        (train, test, pairs)
    }

    fn quick_params(train: &Dataset) -> DetectorParams {
        let config =
            DetectorConfig { hidden: 16, bottleneck: 4, batch: 32, epochs: 40, lr: 1e-2, seed: 3 };
        pretrain(train, &config).unwrap()
    }

    #[test]
    fn sweep_walks_the_quantile_ladder_in_order() {
        let (train, test, pairs) = toy_problem(21);
        let params = quick_params(&train);
        let rows = tradeoff_sweep(&params, &train, &test, &pairs, &SWEEP_QUANTILES).unwrap();
        assert_eq!(rows.len(), 9);
        for pair in rows.windows(2) {
            assert!(pair[0].q < pair[1].q);
            assert!(pair[0].tau <= pair[1].tau, "tau must grow with q");
        }
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.macro_f1));
            assert!((0.0..=1.0).contains(&row.changing_ratio));
        }

        // At the top rung, at most a 0.001 + 1/N fraction of the training
        // set may be flagged.
        let threshold = fit_threshold(&params, &train, 0.999).unwrap();
        let flagged = predict_batch(&params, &threshold, &train)
            .iter()
            .filter(|&&p| p == 1)
            .count();
        let fraction = flagged as f64 / train.len() as f64;
        assert!(fraction <= 0.001 + 1.0 / train.len() as f64, "flagged {fraction}");
    }

    #[test]
    fn report_is_complete_and_deterministic() {
        let (train, test, pairs) = toy_problem(22);
        let params = quick_params(&train);
        let report = assemble_report(&params, &train, &test, &pairs, 0.95, &SWEEP_QUANTILES, 7, "cfg").unwrap();
        assert_eq!(report.sweep.len(), 9);
        assert_eq!(report.scores.len(), test.len());
        assert_eq!(report.seed, 7);
        assert_eq!(report.config_hash, "cfg");
        for (i, row) in report.scores.iter().enumerate() {
            assert_eq!(row.sample_id, i);
            assert_eq!(row.group, test.samples()[i].s);
        }

        let again = assemble_report(&params, &train, &test, &pairs, 0.95, &SWEEP_QUANTILES, 7, "cfg").unwrap();
        assert_eq!(report, again);

        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn report_validates_labels_and_pairing() {
        let (train, test, pairs) = toy_problem(23);
        let params = quick_params(&train);

        assert!(matches!(
            assemble_report(&params, &train, &train, &pairs, 0.95, &SWEEP_QUANTILES, 0, ""),
            Err(EvalError::MissingLabels)
        ));

        let mut swapped = pairs.clone();
        swapped.swap(0, 1);
        assert!(matches!(
            assemble_report(&params, &train, &test, &swapped, 0.95, &SWEEP_QUANTILES, 0, ""),
            Err(EvalError::Misaligned { index: 0 })
        ));

        assert!(matches!(
            tradeoff_sweep(&params, &train, &test, &pairs[..5], &SWEEP_QUANTILES),
            Err(EvalError::LengthMismatch { .. })
        ));
    }
}
