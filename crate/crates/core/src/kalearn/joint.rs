//! End-to-end training of a student against concatenated teacher scores:
//! joint fine-tuning (L2 on logits) and the distillation baseline.

use crate::amalgam::LabelMap;
use crate::data::{batches, ClassSplit, LabeledSet, TransferSet};
use crate::error::{Error, Result};
use crate::log::{EpochRecord, Split, TrainLog};
use crate::nets::{build_network, Network, NetworkSpec, TrainHyper, EVAL_CHUNK};
use crate::ops;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::eval::{accuracy_from_scores, teacher_scores};

const BASELINE_STREAM: u64 = 0x6b64_626c;

/// Held-out data evaluated after every epoch.
#[derive(Clone, Copy, Debug)]
pub struct EvalSetup<'a> {
    pub test: &'a LabeledSet,
    pub parts: &'a ClassSplit,
}

/// Distillation objective on student scores vs concatenated teacher scores.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// `1/2 ||s - t||^2` per sample on raw scores.
    L2,
    /// Temperature-softened cross-entropy per teacher block, scaled by `T^2`.
    Softened { temperature: f32, blocks: Vec<usize> },
}

impl Objective {
    pub fn loss(&self, student: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            Objective::L2 => ops::l2_loss(student, target),
            Objective::Softened { temperature, blocks } => {
                ops::blockwise_kd_loss(student, target, blocks, *temperature)
            }
        }
    }
}

fn full_loss(net: &Network, x: &Tensor, target: &Tensor, objective: &Objective) -> Result<f64> {
    let n = x.batch();
    let mut total = 0.0;
    for s in (0..n).step_by(EVAL_CHUNK) {
        let e = (s + EVAL_CHUNK).min(n);
        let (_, out) = net.forward_collect(&x.slice_batch(s, e)?, &[])?;
        total += objective.loss(&out, &target.slice_batch(s, e)?)?.0 * (e - s) as f64;
    }
    finite(total / n as f64)
}

fn finite(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            what: "distillation loss".into(),
        })
    }
}

struct TestTargets<'a> {
    setup: EvalSetup<'a>,
    targets: Tensor,
}

fn test_record(
    net: &Network,
    t: &TestTargets<'_>,
    map: &LabelMap,
    objective: &Objective,
    epoch: usize,
) -> Result<EpochRecord> {
    let scores = net.scores(&t.setup.test.images, EVAL_CHUNK)?;
    let loss = finite(objective.loss(&scores, &t.targets)?.0)?;
    let (whole, parts) = accuracy_from_scores(&scores, &t.setup.test.labels, map, t.setup.parts)?;
    Ok(EpochRecord {
        epoch,
        split: Split::Test,
        loss,
        accuracy_whole: Some(whole),
        accuracy_parts: parts,
    })
}

/// Train every parameter of `net` to match `targets` on the transfer
/// images under `objective`.
pub fn distill(
    mut net: Network,
    teachers: &[Network],
    transfer: &TransferSet,
    map: &LabelMap,
    objective: &Objective,
    hyper: &TrainHyper,
    eval: Option<EvalSetup<'_>>,
) -> Result<(Network, TrainLog)> {
    hyper.validate()?;
    if net.spec.num_classes != map.entry_count() {
        return Err(Error::invalid(
            "distill",
            format!(
                "student has {} outputs but the label map has {} entries",
                net.spec.num_classes,
                map.entry_count()
            ),
        ));
    }
    let targets = teacher_scores(teachers, &transfer.images)?;
    if targets.dim(1) != map.entry_count() {
        return Err(Error::invalid("distill", "teachers do not match the label map"));
    }
    let test = eval
        .map(|setup| teacher_scores(teachers, &setup.test.images).map(|targets| TestTargets { setup, targets }))
        .transpose()?;

    let mut log = TrainLog::default();
    log.initial.push(EpochRecord {
        epoch: 0,
        split: Split::Train,
        loss: full_loss(&net, &transfer.images, &targets, objective)?,
        accuracy_whole: None,
        accuracy_parts: Vec::new(),
    });
    if let Some(t) = &test {
        log.initial.push(test_record(&net, t, map, objective, 0)?);
    }
    for epoch in 1..=hyper.epochs {
        let mut sum = 0.0;
        for idx in batches(transfer.len(), hyper.batch_size, hyper.seed, epoch as u64, true) {
            let x = transfer.images.select(&idx)?;
            let y = targets.select(&idx)?;
            let mut tape = Tape::new();
            let (_, out) = net.forward(&mut tape, x, &[])?;
            let (loss, g) = objective.loss(&out, &y)?;
            sum += finite(loss)? * idx.len() as f64;
            tape.backward(&mut net.params, g, false)?;
            hyper.sgd.step(&mut net.params)?;
        }
        log.push(EpochRecord {
            epoch,
            split: Split::Train,
            loss: sum / transfer.len() as f64,
            accuracy_whole: None,
            accuracy_parts: Vec::new(),
        });
        if let Some(t) = &test {
            log.push(test_record(&net, t, map, objective, epoch)?);
        }
    }
    Ok((net, log))
}

/// Fine-tune every student parameter (adapters included) against the
/// concatenated teacher scores with `L2` on logits.
pub fn joint_finetune(
    student: Network,
    teachers: &[Network],
    transfer: &TransferSet,
    map: &LabelMap,
    hyper: &TrainHyper,
    eval: Option<EvalSetup<'_>>,
) -> Result<(Network, TrainLog)> {
    distill(student, teachers, transfer, map, &Objective::L2, hyper, eval)
}

/// Distillation settings of the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdConfig {
    pub temperature: f32,
    /// Softened blockwise targets; `false` trains with `L2` on raw scores.
    pub soft: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            temperature: 4.0,
            soft: true,
        }
    }
}

/// Baseline: a randomly initialized student (no layer-wise phase, no
/// adapters) trained end to end on the teachers' scores.
pub fn kd_baseline(
    student_spec: &NetworkSpec,
    teachers: &[Network],
    transfer: &TransferSet,
    map: &LabelMap,
    kd: &KdConfig,
    hyper: &TrainHyper,
    eval: Option<EvalSetup<'_>>,
) -> Result<(Network, TrainLog)> {
    if !(kd.temperature > 0.0 && kd.temperature.is_finite()) {
        return Err(Error::invalid(
            "kd_baseline",
            format!("temperature {} must be > 0", kd.temperature),
        ));
    }
    let net = build_network::<f32>(student_spec, &mut Rng::stream(hyper.seed, &[BASELINE_STREAM]))?;
    let objective = if kd.soft {
        Objective::Softened {
            temperature: kd.temperature,
            blocks: map.blocks(),
        }
    } else {
        Objective::L2
    };
    distill(net, teachers, transfer, map, &objective, hyper, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetworkSpec;

    fn tiny(classes: usize, seed: u64) -> Network {
        let spec = NetworkSpec::conv_stack([1, 6, 6], &[3], &[6], classes).unwrap();
        build_network(&spec, &mut Rng::new(seed)).unwrap()
    }

    fn transfer(n: usize) -> TransferSet {
        let mut rng = Rng::new(11);
        TransferSet {
            images: Tensor::new(&[n, 1, 6, 6], (0..n * 36).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap(),
        }
    }

    /// A teacher whose scores ignore the input: zero weights, fixed bias.
    fn constant_teacher(bias: &[f32]) -> Network {
        let mut t = tiny(bias.len(), 0);
        let last = t.num_layers();
        t.params[Network::<f32>::weight_id(last)].value.fill(0.0);
        t.params[Network::<f32>::bias_id(last)].value = Tensor::new(&[bias.len()], bias.to_vec()).unwrap();
        t
    }

    #[test]
    fn zero_epochs_leave_student_unchanged() {
        let teachers = vec![tiny(2, 1), tiny(2, 2)];
        let map = LabelMap::new(&[vec![0, 1], vec![2, 3]]);
        let student = tiny(4, 3);
        let hyper = TrainHyper {
            epochs: 0,
            ..TrainHyper::default()
        };
        let (out, log) = joint_finetune(student.clone(), &teachers, &transfer(8), &map, &hyper, None).unwrap();
        assert!(out.bitwise_eq(&student));
        assert!(log.records.is_empty());
    }

    #[test]
    fn constant_targets_are_matched() {
        let teachers = vec![constant_teacher(&[1.5, -0.5]), constant_teacher(&[0.25, 2.0])];
        let map = LabelMap::new(&[vec![0, 1], vec![2, 3]]);
        let hyper = TrainHyper {
            epochs: 30,
            batch_size: 8,
            ..TrainHyper::default()
        };
        let (_, log) = joint_finetune(tiny(4, 3), &teachers, &transfer(64), &map, &hyper, None).unwrap();
        let first = log.initial(Split::Train).unwrap().loss;
        let last = log.last(Split::Train).unwrap().loss;
        assert!(last < 0.01 * first, "{first} -> {last}");
    }

    #[test]
    fn width_mismatch_rejected() {
        let teachers = vec![tiny(2, 1), tiny(2, 2)];
        let map = LabelMap::new(&[vec![0, 1], vec![2, 3]]);
        let e = joint_finetune(tiny(3, 3), &teachers, &transfer(8), &map, &TrainHyper::default(), None);
        assert!(e.is_err());
    }

    #[test]
    fn self_distillation_sits_at_the_entropy_floor() {
        let teacher = tiny(3, 5);
        let map = LabelMap::new(&[vec![0, 1, 2]]);
        let x = transfer(32);
        let objective = Objective::Softened {
            temperature: 1.0,
            blocks: vec![3],
        };
        let targets = teacher.scores(&x.images, 64).unwrap();
        let own = full_loss(&teacher, &x.images, &targets, &objective).unwrap();
        let probs = ops::softmax(&targets, 1.0).unwrap();
        let entropy: f64 = -probs.data().iter().map(|&p| p as f64 * (p as f64).ln()).sum::<f64>() / 32.0;
        assert!((own - entropy).abs() < 1e-5, "{own} vs {entropy}");
        let random = full_loss(&tiny(3, 9), &x.images, &targets, &objective).unwrap();
        assert!(own < random);
        let _ = map;
    }
}
