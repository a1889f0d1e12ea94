//! AUROC for binary tasks and quadratic weighted kappa for ordinal multiclass tasks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric_name: String,
    pub value: f64,
    pub n: usize,
    pub per_class_counts: Vec<usize>,
}

/// Area under the ROC curve in the Mann-Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
///
/// Labels must be 0 or 1 and both classes must be present.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("AUROC label {l} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC needs both classes"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
    // every quantity stays an exact integer.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j + 1) as u128; // 2 * average of ranks i+1..=j+1
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += doubled_rank * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Cohen's kappa with quadratic weights `(i-j)^2 / (C-1)^2`, expected matrix
/// from the product of the two marginals scaled to the observed total.
///
/// When the expected weighted disagreement is zero the statistic is defined
/// as 0 if the observed matrix equals the expected one, and is an error
/// otherwise.
pub fn qwk(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::invalid("QWK needs at least two classes"));
    }
    if pred.is_empty() {
        return Err(Error::invalid("QWK of an empty sample"));
    }
    if let Some(&v) = pred.iter().chain(truth).find(|&&v| v >= num_classes) {
        return Err(Error::invalid(format!("class {v} out of range 0..{num_classes}")));
    }
    let c = num_classes;
    let mut observed = vec![0.0; c * c];
    let mut hist_t = vec![0.0; c];
    let mut hist_p = vec![0.0; c];
    for (&p, &t) in pred.iter().zip(truth) {
        observed[t * c + p] += 1.0;
        hist_t[t] += 1.0;
        hist_p[p] += 1.0;
    }
    let n = pred.len() as f64;
    let denom_w = ((c - 1) * (c - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut same = true;
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            let e = hist_t[i] * hist_p[j] / n;
            num += w * observed[i * c + j];
            den += w * e;
            same &= observed[i * c + j] == e;
        }
    }
    if den == 0.0 {
        return if same {
            Ok(0.0)
        } else {
            Err(Error::invalid("QWK undefined: expected disagreement is zero"))
        };
    }
    Ok(1.0 - num / den)
}

/// AUROC on the class-1 probability for two classes, QWK on the arg-max
/// class otherwise.
pub fn evaluate(probabilities: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<EvalResult> {
    let mut per_class_counts = vec![0; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} out of range")));
        }
        per_class_counts[l] += 1;
    }
    let (metric_name, value) = if num_classes == 2 {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[1]).collect();
        ("auroc", auroc(&scores, labels)?)
    } else {
        let pred: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
        ("qwk", qwk(&pred, labels, num_classes)?)
    };
    Ok(EvalResult {
        metric_name: metric_name.to_string(),
        value,
        n: labels.len(),
        per_class_counts,
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}
