//! Detection metrics. OOD is the positive class throughout and higher
//! scores mean more OOD-like.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Metric bundle for one (ID test, OOD set) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub fpr_at_tpr95: f64,
    pub auroc: f64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Operating threshold chosen for the FPR criterion.
    pub threshold: f64,
}

impl MetricResult {
    pub fn compute(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<Self> {
        let (fpr, threshold) = fpr_at_tpr(id_scores, ood_scores, tpr_target)?;
        Ok(MetricResult {
            fpr_at_tpr95: fpr,
            auroc: auroc(id_scores, ood_scores)?,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
            threshold,
        })
    }
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} score list is empty")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// False-positive rate at the given true-positive rate.
///
/// The threshold is the largest observed OOD score `t` such that the
/// fraction of OOD scores `>= t` still reaches `tpr_target`; the FPR is
/// the fraction of ID scores `>= t`. Returns `(fpr, threshold)`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<(f64, f64)> {
    check_scores("id", id_scores)?;
    check_scores("ood", ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tpr target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let n_ood = ood_scores.len() as f64;
    let mut candidates = ood_scores.to_vec();
    candidates.sort_unstable_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let mut threshold = f64::NEG_INFINITY;
    for &t in &candidates {
        let detected = ood_scores.iter().filter(|&&s| s >= t).count() as f64;
        if detected / n_ood >= tpr_target {
            threshold = t;
            break;
        }
    }
    let fp = id_scores.iter().filter(|&&s| s >= threshold).count() as f64;
    Ok((fp / id_scores.len() as f64, threshold))
}

/// Area under the ROC curve: the probability that a random OOD score
/// exceeds a random ID score, ties counted one half (Mann-Whitney).
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("id", id_scores)?;
    check_scores("ood", ood_scores)?;
    let n_id = id_scores.len();
    let n_ood = ood_scores.len();

    // Midranks over the pooled sample.
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_ood = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_ood += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_ood - (n_ood * (n_ood + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

/// Fechner (sign-agreement) correlation: the fraction of concordant
/// minus discordant mean-deviation pairs. Zero products count as
/// concordant.
pub fn fechner_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!(
            "fechner inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "fechner correlation needs n >= 2".into(),
        ));
    }
    check_scores("a", a)?;
    check_scores("b", b)?;
    let n = a.len() as f64;
    let mean_a: f64 = a.iter().sum::<f64>() / n;
    let mean_b: f64 = b.iter().sum::<f64>() / n;
    let mut concordant = 0usize;
    let mut discordant = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let p = (x - mean_a) * (y - mean_b);
        if p < 0.0 {
            discordant += 1;
        } else {
            concordant += 1;
        }
    }
    Ok((concordant as f64 - discordant as f64) / n)
}
