//! Supervised training of a classifier with softmax cross-entropy.

use crate::data::{batches, LabeledSet};
use crate::error::{Error, Result};
use crate::log::{EpochRecord, Split, TrainLog};
use crate::ops;
use crate::optim::Sgd;
use crate::tape::Tape;

use super::network::Network;

/// Samples per inference chunk when evaluating.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub sgd: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            sgd: Sgd::default(),
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Labels of `set` as indices into `class_ids`, rejecting any outside
/// `0..num_classes`.
fn local_labels(set: &LabeledSet, class_ids: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    set.labels
        .iter()
        .map(|&l| {
            class_ids
                .iter()
                .position(|&c| c == l)
                .filter(|&i| i < num_classes)
                .ok_or_else(|| {
                    Error::invalid(
                        "train_classifier",
                        format!("label {l} outside the {num_classes} network classes"),
                    )
                })
        })
        .collect()
}

fn check_loss(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite { what: what.into() })
    }
}

/// Mean cross-entropy and accuracy of `net` on `set`, with labels indexed
/// through `class_ids`.
pub fn eval_classifier(net: &Network, set: &LabeledSet, class_ids: &[usize]) -> Result<(f64, f64)> {
    let labels = local_labels(set, class_ids, net.spec.num_classes)?;
    let scores = net.scores(&set.images, EVAL_CHUNK)?;
    let (loss, _) = ops::cross_entropy(&scores, &labels)?;
    let correct = argmax_rows(scores.data(), net.spec.num_classes)
        .zip(&labels)
        .filter(|(p, l)| p == *l)
        .count();
    Ok((
        check_loss(loss, "evaluation loss")?,
        correct as f64 / labels.len() as f64,
    ))
}

/// Row-wise argmax, first index on ties.
pub fn argmax_rows(data: &[f32], width: usize) -> impl Iterator<Item = usize> + '_ {
    data.chunks(width).map(|row| {
        row.iter()
            .enumerate()
            .fold(
                (0, f32::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0
    })
}

fn record(epoch: usize, split: Split, loss: f64, acc: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        split,
        loss,
        accuracy_whole: Some(acc),
        accuracy_parts: Vec::new(),
    }
}

/// Minimize cross-entropy on `train` (local labels = positions in
/// `train.class_ids`) for `hyper.epochs` epochs. The log's train rows hold
/// the running mean loss/accuracy of each epoch; val rows a full pass after
/// it. `initial` holds both evaluated before any step.
pub fn train_classifier(
    mut net: Network,
    train: &LabeledSet,
    val: &LabeledSet,
    hyper: &TrainHyper,
) -> Result<(Network, TrainLog)> {
    hyper.validate()?;
    let class_ids = &train.class_ids;
    let labels = local_labels(train, class_ids, net.spec.num_classes)?;
    local_labels(val, class_ids, net.spec.num_classes)?;

    let mut log = TrainLog::default();
    let (l0, a0) = eval_classifier(&net, train, class_ids)?;
    log.initial.push(record(0, Split::Train, l0, a0));
    let (l0, a0) = eval_classifier(&net, val, class_ids)?;
    log.initial.push(record(0, Split::Val, l0, a0));

    let width = net.spec.num_classes;
    for epoch in 1..=hyper.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for idx in batches(train.len(), hyper.batch_size, hyper.seed, epoch as u64, true) {
            let x = train.images.select(&idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let (_, scores) = net.forward(&mut tape, x, &[])?;
            let (loss, grad) = ops::cross_entropy(&scores, &y)?;
            loss_sum += check_loss(loss, "training loss")? * idx.len() as f64;
            correct += argmax_rows(scores.data(), width)
                .zip(&y)
                .filter(|(p, l)| p == *l)
                .count();
            tape.backward(&mut net.params, grad, false)?;
            hyper.sgd.step(&mut net.params)?;
        }
        let n = train.len() as f64;
        log.push(record(epoch, Split::Train, loss_sum / n, correct as f64 / n));
        let (vl, va) = eval_classifier(&net, val, class_ids)?;
        log.push(record(epoch, Split::Val, vl, va));
    }
    Ok((net, log))
}
