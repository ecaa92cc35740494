//! In-memory experiment stages shared by the commands and the acceptance
//! suite: data, teachers, layer-wise amalgamation, joint learning, the
//! distillation baseline and evaluation.

use kamal_core::amalgam::{AmalgamPlan, FitHyper, LabelMap};
use kamal_core::data::{gen_synthetic_split, load_idx, make_transfer_set, split_classes, SyntheticSpec};
use kamal_core::kalearn::{
    evaluate, joint_finetune, kd_baseline, run_layerwise, EvalReport, EvalSetup, KdConfig, LayerwiseHyper,
    LayerwiseOutput, Model,
};
use kamal_core::nets::{build_network, make_student_spec, train_classifier, TrainHyper};
use kamal_core::optim::Sgd;
use kamal_core::rng::{derive_key, Rng};
use kamal_core::{ClassSplit, LabeledSet, Network, NetworkSpec, TrainLog, TransferSet};

use crate::config::{DatasetSource, Settings};
use crate::error::{CliError, Result};

const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const TEACHER_STREAM: u64 = 3;
const TRANSFER_STREAM: u64 = 4;
const AE_STREAM: u64 = 5;
const STAGE_STREAM: u64 = 6;
const JOINT_STREAM: u64 = 7;
const BASELINE_STREAM: u64 = 8;
const SCRATCH_STREAM: u64 = 9;

/// Everything derived from the dataset settings and the seed.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub split: ClassSplit,
    pub train_parts: Vec<LabeledSet>,
    pub test_parts: Vec<LabeledSet>,
    pub transfer: TransferSet,
    pub map: LabelMap,
}

impl DataBundle {
    pub fn eval_setup(&self) -> EvalSetup<'_> {
        EvalSetup {
            test: &self.test,
            parts: &self.split,
        }
    }
}

pub fn load_data(s: &Settings) -> Result<DataBundle> {
    let (train, test) = match &s.dataset {
        DatasetSource::Synthetic {
            classes,
            per_class,
            test_per_class,
            noise_sigma,
            image,
        } => {
            let spec = SyntheticSpec {
                num_classes: *classes,
                shape: *image,
                noise_sigma: *noise_sigma,
                seed: derive_key(s.seed, &[DATA_STREAM]),
            };
            gen_synthetic_split(&spec, *per_class, *test_per_class)?
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        ),
    };
    if let Some(c) = s.overlap.iter().find(|c| !train.class_ids.contains(c)) {
        return Err(CliError::config(
            "teachers.overlap",
            format!("class {c} is not in the dataset"),
        ));
    }
    let split = ClassSplit::random_equal(
        &train.class_ids,
        s.teachers,
        &s.overlap,
        derive_key(s.seed, &[SPLIT_STREAM]),
    )
    .map_err(|e| CliError::config("teachers.count", e.to_string()))?;
    let train_parts = split_classes(&train, &split)?;
    let test_parts = split_classes(&test, &split)?;
    let transfer = make_transfer_set(&train_parts, derive_key(s.seed, &[TRANSFER_STREAM]))?;
    let map = LabelMap::new(&split.parts);
    Ok(DataBundle {
        train,
        test,
        split,
        train_parts,
        test_parts,
        transfer,
        map,
    })
}

pub fn teacher_spec(s: &Settings, image: [usize; 3], classes: usize) -> Result<NetworkSpec> {
    NetworkSpec::conv_stack(image, &s.convs, &s.fcs, classes).map_err(|e| CliError::config("net.convs", e.to_string()))
}

pub fn student_spec(s: &Settings, teacher: &NetworkSpec, map: &LabelMap) -> Result<NetworkSpec> {
    make_student_spec(teacher, s.teachers, s.ratio, map.entry_count())
        .map_err(|e| CliError::config("amalgam.ratio", e.to_string()))
}

fn sgd(s: &Settings, lr: f32, weight_decay: f32) -> Sgd {
    Sgd {
        lr,
        momentum: s.train.momentum,
        weight_decay,
    }
}

fn train_hyper(s: &Settings, lr: f32, epochs: usize, stream: &[u64]) -> TrainHyper {
    TrainHyper {
        sgd: sgd(s, lr, s.train.weight_decay),
        epochs,
        batch_size: s.train.batch_size,
        seed: derive_key(s.seed, stream),
    }
}

/// Train one teacher per class part; val rows evaluate on the part's
/// held-out samples.
pub fn train_teachers(s: &Settings, data: &DataBundle) -> Result<(Vec<Network>, Vec<TrainLog>)> {
    let mut nets = Vec::with_capacity(s.teachers);
    let mut logs = Vec::with_capacity(s.teachers);
    for (i, (train, val)) in data.train_parts.iter().zip(&data.test_parts).enumerate() {
        let spec = teacher_spec(s, train.image_shape(), train.num_classes())?;
        let init = build_network::<f32>(&spec, &mut Rng::stream(s.seed, &[TEACHER_STREAM, i as u64, 0]))?;
        let hyper = train_hyper(s, s.train.lr, s.train.epochs_teacher, &[TEACHER_STREAM, i as u64, 1]);
        let (net, log) = train_classifier(init, train, val, &hyper)?;
        nets.push(net);
        logs.push(log);
    }
    Ok((nets, logs))
}

pub fn layerwise_hyper(s: &Settings) -> LayerwiseHyper {
    let fit = |lr, epochs, stream| FitHyper {
        sgd: sgd(s, lr, 0.0),
        epochs,
        batch_size: s.train.batch_size,
        seed: derive_key(s.seed, &[stream]),
    };
    LayerwiseHyper {
        autoencoder: fit(s.train.lr_ae, s.train.epochs_ae, AE_STREAM),
        stage: fit(s.train.lr_layerwise, s.train.epochs_layerwise, STAGE_STREAM),
        fam_on: s.fam,
        seed: derive_key(s.seed, &[STAGE_STREAM, 1]),
    }
}

/// Feature amalgamation and layer-wise parameter learning.
pub fn amalgamate(s: &Settings, teachers: &[Network], data: &DataBundle) -> Result<LayerwiseOutput> {
    let tspec = &teachers
        .first()
        .ok_or_else(|| CliError::config("teachers.count", "no teachers given"))?
        .spec;
    if teachers.len() != s.teachers {
        return Err(CliError::config(
            "teachers.count",
            format!(
                "{} teacher checkpoints given, config says {}",
                teachers.len(),
                s.teachers
            ),
        ));
    }
    kamal_core::amalgam::check_same_architecture(teachers).map_err(|e| CliError::config("teachers", e.to_string()))?;
    let plan = AmalgamPlan::new(s.mode, tspec, s.teachers, s.ratio)
        .map_err(|e| CliError::config("amalgam.mode", e.to_string()))?;
    let sspec = student_spec(s, tspec, &data.map)?;
    Ok(run_layerwise(
        teachers,
        &data.transfer,
        &plan,
        &sspec,
        &layerwise_hyper(s),
    )?)
}

/// Joint fine-tuning of a student on the concatenated teacher scores.
pub fn learn(s: &Settings, student: Network, teachers: &[Network], data: &DataBundle) -> Result<(Network, TrainLog)> {
    let hyper = train_hyper(s, s.train.lr_joint, s.train.epochs_joint, &[JOINT_STREAM]);
    Ok(joint_finetune(
        student,
        teachers,
        &data.transfer,
        &data.map,
        &hyper,
        Some(data.eval_setup()),
    )?)
}

/// Joint learning from a random init of the same student (adapters at
/// identity when enabled): the layer-wise phase switched off.
pub fn learn_from_scratch(s: &Settings, teachers: &[Network], data: &DataBundle) -> Result<(Network, TrainLog)> {
    let sspec = student_spec(s, &teachers[0].spec, &data.map)?;
    let mut net = build_network::<f32>(&sspec, &mut Rng::stream(s.seed, &[SCRATCH_STREAM]))?;
    if s.fam {
        net = net.with_identity_fams()?;
    }
    learn(s, net, teachers, data)
}

/// The distillation baseline: random student without adapters, same
/// epoch budget as joint learning.
pub fn baseline(s: &Settings, teachers: &[Network], data: &DataBundle) -> Result<(Network, TrainLog)> {
    let sspec = student_spec(s, &teachers[0].spec, &data.map)?;
    let kd = KdConfig {
        temperature: s.kd_temperature,
        soft: s.kd_soft,
    };
    let hyper = train_hyper(s, s.train.lr_baseline, s.train.epochs_joint, &[BASELINE_STREAM]);
    Ok(kd_baseline(
        &sspec,
        teachers,
        &data.transfer,
        &data.map,
        &kd,
        &hyper,
        Some(data.eval_setup()),
    )?)
}

pub fn eval_model(model: Model<'_>, data: &DataBundle) -> Result<EvalReport> {
    Ok(evaluate(model, &data.test, &data.map, &data.split)?)
}

/// Every artifact and report of one seeded run of the four methods.
pub struct ExperimentRun {
    pub data: DataBundle,
    pub teachers: Vec<Network>,
    pub teacher_logs: Vec<TrainLog>,
    pub layerwise: LayerwiseOutput,
    pub joint: Network,
    pub joint_log: TrainLog,
    pub baseline: Network,
    pub baseline_log: TrainLog,
    pub ensemble_report: EvalReport,
    pub baseline_report: EvalReport,
    pub layerwise_report: EvalReport,
    pub joint_report: EvalReport,
    /// Each teacher's accuracy on its own part of the test set.
    pub teacher_part_accuracy: Vec<f64>,
}

pub fn run_experiment(s: &Settings) -> Result<ExperimentRun> {
    let data = load_data(s)?;
    let (teachers, teacher_logs) = train_teachers(s, &data)?;
    run_from_teachers(s, data, teachers, teacher_logs)
}

pub fn run_from_teachers(
    s: &Settings,
    data: DataBundle,
    teachers: Vec<Network>,
    teacher_logs: Vec<TrainLog>,
) -> Result<ExperimentRun> {
    let layerwise = amalgamate(s, &teachers, &data)?;
    let (joint, joint_log) = learn(s, layerwise.student.clone(), &teachers, &data)?;
    let (baseline_net, baseline_log) = baseline(s, &teachers, &data)?;
    let teacher_part_accuracy = teachers
        .iter()
        .zip(&data.test_parts)
        .map(|(t, part)| kamal_core::nets::eval_classifier(t, part, &part.class_ids).map(|(_, acc)| acc))
        .collect::<kamal_core::Result<Vec<_>>>()?;
    Ok(ExperimentRun {
        ensemble_report: eval_model(Model::Ensemble(&teachers), &data)?,
        baseline_report: eval_model(Model::Single(&baseline_net), &data)?,
        layerwise_report: eval_model(Model::Single(&layerwise.student), &data)?,
        joint_report: eval_model(Model::Single(&joint), &data)?,
        data,
        teachers,
        teacher_logs,
        layerwise,
        joint,
        joint_log,
        baseline: baseline_net,
        baseline_log,
        teacher_part_accuracy,
    })
}
