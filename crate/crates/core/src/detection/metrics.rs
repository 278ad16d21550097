use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub ap: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub max_f1: f64,
    pub macro_f1: f64,
}

fn check(scores_len: usize, labels: &[bool]) -> Result<(usize, usize)> {
    if scores_len != labels.len() {
        return Err(Error::Contract(format!(
            "{scores_len} scores for {} labels",
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Parameter("labels must contain both classes".into()));
    }
    Ok((pos, neg))
}

fn f1(tp: f64, fp: f64, fneg: f64) -> f64 {
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

/// Indices ordered by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative; ties
/// count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores.len(), labels)?;
    let mut negatives_below = 0.0;
    let mut concordant = 0.0;
    // ascending sweep
    for g in tie_groups(scores).iter().rev() {
        let p = g.iter().filter(|&&i| labels[i]).count() as f64;
        let n = g.len() as f64 - p;
        concordant += p * (negatives_below + 0.5 * n);
        negatives_below += n;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

/// ROC curve points `(fpr, tpr)` from the strictest threshold down.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores.len(), labels)?;
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for g in tie_groups(scores) {
        for i in g {
            if labels[i] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        out.push((fp / neg as f64, tp / pos as f64));
    }
    Ok(out)
}

/// Step-interpolated area under the precision-recall curve.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores.len(), labels)?;
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0.0, 0.0, 0.0, 0.0);
    for g in tie_groups(scores) {
        seen += g.len() as f64;
        tp += g.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / pos as f64;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best F1 over every score threshold.
pub fn max_f1(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores.len(), labels)?;
    let (mut tp, mut fp, mut best) = (0.0, 0.0, 0.0f64);
    for g in tie_groups(scores) {
        for i in g {
            if labels[i] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        best = best.max(f1(tp, fp, pos as f64 - tp));
    }
    Ok(best)
}

/// `(f1, precision, recall, macro_f1)` of hard flags.
pub fn flag_scores(flags: &[bool], labels: &[bool]) -> Result<(f64, f64, f64, f64)> {
    check(flags.len(), labels)?;
    let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / (tp + fneg);
    let positive = f1(tp, fp, fneg);
    let negative = f1(tn, fneg, fp);
    Ok((positive, precision, recall, 0.5 * (positive + negative)))
}

/// Ranking metrics from `scores`, thresholded metrics from `flags`.
pub fn detection_metrics(scores: &[f64], flags: &[bool], labels: &[bool]) -> Result<DetectionMetrics> {
    check(scores.len(), labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric {
            stage: "detection scores".into(),
        });
    }
    let (f1, precision, recall, macro_f1) = flag_scores(flags, labels)?;
    Ok(DetectionMetrics {
        ap: average_precision(scores, labels)?,
        auc: roc_auc(scores, labels)?,
        f1,
        precision,
        recall,
        max_f1: max_f1(scores, labels)?,
        macro_f1,
    })
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [true, true, false, false];
        let m = detection_metrics(&scores, &labels, &labels).unwrap();
        assert_eq!((m.auc, m.ap, m.max_f1), (1.0, 1.0, 1.0));
        assert_eq!((m.f1, m.precision, m.recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn one_concordant_one_discordant_pair() {
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6], &[true, true, false]).unwrap(), 0.5);
    }

    #[test]
    fn constant_scores_give_half_auc() {
        let labels = [true, false, false, true, false];
        assert_eq!(roc_auc(&[1.0; 5], &labels).unwrap(), 0.5);
        assert!((average_precision(&[1.0; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(roc_auc(&[1.0], &[true, false]), Err(Error::Contract(_))));
        assert!(matches!(roc_auc(&[1.0, 2.0], &[true, true]), Err(Error::Parameter(_))));
    }

    #[test]
    fn roc_points_end_at_one() {
        let pts = roc_points(&[0.3, 0.1, 0.7], &[true, false, false]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn jaccard_of_sets() {
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }
}
