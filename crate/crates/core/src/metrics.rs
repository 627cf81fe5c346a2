//! Intersection-over-union evaluation in two flavors: PP-IOU pools pixels
//! over the whole corpus before dividing (large images dominate), PI-IOU
//! averages per-image IOUs so every image counts equally.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Corpus-level evaluation result.
///
/// `per_class_iou` holds the pooled (PP) per-class values; `None` marks a
/// class absent from both prediction and truth everywhere, which is excluded
/// from both means.
#[derive(Debug, Clone, Serialize)]
pub struct IouReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub pp_iou: f64,
    pub pi_iou: f64,
    pub images: usize,
}

/// IOU of one class on one image: |pred ∩ truth| / |pred ∪ truth|, or `None`
/// when the class appears in neither map.
pub fn iou_single(pred: &LabelMap, truth: &LabelMap, class: u32) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (p, t) in pred.labels().iter().zip(truth.labels()) {
        let in_pred = *p == class;
        let in_truth = *t == class;
        inter += u64::from(in_pred && in_truth);
        union += u64::from(in_pred || in_truth);
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

fn check_pair(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if pred.height() != truth.height()
        || pred.width() != truth.width()
        || pred.classes() != truth.classes()
    {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} ({} classes) vs truth {}x{} ({} classes)",
            pred.height(),
            pred.width(),
            pred.classes(),
            truth.height(),
            truth.width(),
            truth.classes()
        )));
    }
    Ok(())
}

/// Evaluates a corpus of (prediction, truth) pairs; classes absent from the
/// entire corpus are excluded from the class means.
pub fn evaluate_corpus(pairs: &[(LabelMap, LabelMap)]) -> Result<IouReport> {
    evaluate(pairs, false)
}

/// As [`evaluate_corpus`], but erroring out when any class is absent from the
/// whole corpus instead of excluding it.
pub fn evaluate_corpus_strict(pairs: &[(LabelMap, LabelMap)]) -> Result<IouReport> {
    evaluate(pairs, true)
}

fn evaluate(pairs: &[(LabelMap, LabelMap)], strict: bool) -> Result<IouReport> {
    let (first_pred, _) = pairs.first().ok_or(Error::EmptyCorpus)?;
    let k = first_pred.classes() as usize;
    for (pred, truth) in pairs {
        check_pair(pred, truth)?;
        if pred.classes() as usize != k {
            return Err(Error::ShapeMismatch(
                "inconsistent class count across corpus".into(),
            ));
        }
    }

    // Pooled counts across all pixels of all images.
    let mut pooled_inter = vec![0u64; k];
    let mut pooled_union = vec![0u64; k];
    // Per-image IOUs for the PI metric: (image present in truth, value).
    let mut pi_truth: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut pi_any: Vec<Vec<f64>> = vec![Vec::new(); k];

    for (pred, truth) in pairs {
        let mut inter = vec![0u64; k];
        let mut union = vec![0u64; k];
        let mut in_truth = vec![false; k];
        for (p, t) in pred.labels().iter().zip(truth.labels()) {
            let (p, t) = (*p as usize, *t as usize);
            if p == t {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[t] += 1;
            }
            in_truth[t] = true;
        }
        for c in 0..k {
            pooled_inter[c] += inter[c];
            pooled_union[c] += union[c];
            if union[c] > 0 {
                let v = inter[c] as f64 / union[c] as f64;
                pi_any[c].push(v);
                if in_truth[c] {
                    pi_truth[c].push(v);
                }
            }
        }
    }

    let mut per_class_iou = Vec::with_capacity(k);
    let mut pp_sum = 0.0;
    let mut pi_sum = 0.0;
    let mut included = 0usize;
    for c in 0..k {
        if pooled_union[c] == 0 {
            if strict {
                return Err(Error::EmptyClass { class: c as u32 });
            }
            per_class_iou.push(None);
            continue;
        }
        let pp = pooled_inter[c] as f64 / pooled_union[c] as f64;
        per_class_iou.push(Some(pp));
        pp_sum += pp;
        // Images where the class is absent from truth are skipped, not
        // counted as zero. A class predicted but never in truth anywhere
        // falls back to its predicted-image average (all zeros).
        let entries = if pi_truth[c].is_empty() {
            &pi_any[c]
        } else {
            &pi_truth[c]
        };
        pi_sum += entries.iter().sum::<f64>() / entries.len() as f64;
        included += 1;
    }
    if included == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(IouReport {
        per_class_iou,
        pp_iou: pp_sum / included as f64,
        pi_iou: pi_sum / included as f64,
        images: pairs.len(),
    })
}
