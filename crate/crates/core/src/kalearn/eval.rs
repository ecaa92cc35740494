//! Ensemble prediction and whole/per-part accuracy.

use crate::amalgam::{amalgamate_scores, merge_overlapping_at_test, LabelMap};
use crate::data::{ClassSplit, LabeledSet};
use crate::error::{Error, Result};
use crate::nets::{argmax_rows, Network, EVAL_CHUNK};
use crate::tensor::Tensor;

/// Something that produces one score per LabelMap entry.
#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    Single(&'a Network),
    /// Teachers whose concatenated scores form the entries.
    Ensemble(&'a [Network]),
}

impl Model<'_> {
    pub fn param_count(&self) -> usize {
        match self {
            Model::Single(n) => n.count_params(),
            Model::Ensemble(ts) => ts.iter().map(Network::count_params).sum(),
        }
    }

    /// Entry scores `[B, E]` for `x`.
    pub fn entry_scores(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Model::Single(n) => n.scores(x, EVAL_CHUNK),
            Model::Ensemble(ts) => teacher_scores(ts, x),
        }
    }
}

/// Concatenated raw teacher scores for `x`, in teacher order.
pub fn teacher_scores(teachers: &[Network], x: &Tensor) -> Result<Tensor> {
    let per = teachers
        .iter()
        .map(|t| t.scores(x, EVAL_CHUNK))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_channels(&per.iter().collect::<Vec<_>>())
}

/// Global class predicted for each row of `x` by the teachers' merged
/// concatenated scores (first class on ties).
pub fn ensemble_predict(teachers: &[Network], x: &Tensor, map: &LabelMap) -> Result<Vec<usize>> {
    let per = teachers
        .iter()
        .map(|t| t.scores(x, EVAL_CHUNK))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<Vec<usize>> = (0..teachers.len())
        .map(|t| {
            map.entries
                .iter()
                .filter(|e| e.teacher == t)
                .map(|e| e.global)
                .collect()
        })
        .collect();
    let (scores, _) = amalgamate_scores(&per.iter().collect::<Vec<_>>(), &parts)?;
    predict_from_scores(&scores, map)
}

/// Merge overlapping entries, then take the argmax over global classes.
pub fn predict_from_scores(scores: &Tensor, map: &LabelMap) -> Result<Vec<usize>> {
    let merged = merge_overlapping_at_test(scores, map)?;
    Ok(argmax_rows(merged.data(), map.global_classes.len())
        .map(|i| map.global_classes[i])
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy_whole: f64,
    pub accuracy_per_part: Vec<f64>,
    pub param_count: usize,
}

/// Whole and per-part accuracy of entry scores against global `labels`.
///
/// Part `i` counts only samples whose label lies in `parts.parts[i]`, and
/// predicts among that part's classes only (argmax of the merged scores
/// restricted to them).
pub fn accuracy_from_scores(
    scores: &Tensor,
    labels: &[usize],
    map: &LabelMap,
    parts: &ClassSplit,
) -> Result<(f64, Vec<f64>)> {
    if scores.batch() != labels.len() {
        return Err(Error::CountMismatch {
            detail: format!("{} score rows vs {} labels", scores.batch(), labels.len()),
        });
    }
    if let Some(l) = labels.iter().find(|&&l| map.global_index(l).is_none()) {
        return Err(Error::invalid(
            "evaluate",
            format!("label {l} is not a known global class"),
        ));
    }
    let merged = merge_overlapping_at_test(scores, map)?;
    let g = map.global_classes.len();
    let mut whole = 0usize;
    for (pred, &label) in argmax_rows(merged.data(), g).zip(labels) {
        whole += usize::from(map.global_classes[pred] == label);
    }
    let mut per_part = Vec::with_capacity(parts.parts.len());
    for part in &parts.parts {
        let cols = part
            .iter()
            .map(|&c| {
                map.global_index(c)
                    .ok_or_else(|| Error::invalid("evaluate", format!("part class {c} is not a known global class")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut hit, mut total) = (0usize, 0usize);
        for (row, &label) in merged.data().chunks(g).zip(labels) {
            if !part.contains(&label) {
                continue;
            }
            total += 1;
            let best = cols
                .iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |(bi, bv), (i, &c)| if row[c] > bv { (i, row[c]) } else { (bi, bv) },
                )
                .0;
            hit += usize::from(part[best] == label);
        }
        per_part.push(if total == 0 { 0.0 } else { hit as f64 / total as f64 });
    }
    Ok((whole as f64 / labels.len() as f64, per_part))
}

pub fn evaluate(model: Model<'_>, test: &LabeledSet, map: &LabelMap, parts: &ClassSplit) -> Result<EvalReport> {
    let scores = model.entry_scores(&test.images)?;
    let (accuracy_whole, accuracy_per_part) = accuracy_from_scores(&scores, &test.labels, map, parts)?;
    Ok(EvalReport {
        accuracy_whole,
        accuracy_per_part,
        param_count: model.param_count(),
    })
}
