//! Invariants of the layer-wise and joint pipeline on a small run.

use kamal_core::amalgam::{AmalgamMode, AmalgamPlan, FitHyper, LabelMap};
use kamal_core::data::{gen_synthetic_split, make_transfer_set, split_classes, SyntheticSpec};
use kamal_core::kalearn::{joint_finetune, layerwise_stage, run_layerwise, LayerwiseHyper};
use kamal_core::nets::{build_network, make_student_spec, train_classifier, TrainHyper};
use kamal_core::optim::Sgd;
use kamal_core::{ClassSplit, Network, NetworkSpec, Rng, Tensor, TransferSet};

struct Setup {
    teachers: Vec<Network>,
    transfer: TransferSet,
    map: LabelMap,
    plan: AmalgamPlan,
    student: NetworkSpec,
}

fn setup(mode: AmalgamMode, n: usize) -> Setup {
    let spec = SyntheticSpec {
        num_classes: 2 * n,
        shape: [2, 8, 8],
        noise_sigma: 0.05,
        seed: 3,
    };
    let (train, test) = gen_synthetic_split(&spec, 12, 4).unwrap();
    let split = ClassSplit::random_equal(&train.class_ids, n, &[], 1).unwrap();
    let parts = split_classes(&train, &split).unwrap();
    let tests = split_classes(&test, &split).unwrap();
    let tspec = NetworkSpec::conv_stack([2, 8, 8], &[3, 4], &[6], 2).unwrap();
    let teachers: Vec<Network> = parts
        .iter()
        .zip(&tests)
        .enumerate()
        .map(|(i, (p, t))| {
            let init = build_network(&tspec, &mut Rng::new(i as u64)).unwrap();
            let hyper = TrainHyper {
                epochs: 2,
                ..TrainHyper::default()
            };
            train_classifier(init, p, t, &hyper).unwrap().0
        })
        .collect();
    let transfer = make_transfer_set(&parts, 5).unwrap();
    let map = LabelMap::new(&split.parts);
    let plan = AmalgamPlan::new(mode, &tspec, n, 0.75).unwrap();
    let student = make_student_spec(&tspec, n, 0.75, map.entry_count()).unwrap();
    Setup {
        teachers,
        transfer,
        map,
        plan,
        student,
    }
}

fn hyper(fam_on: bool) -> LayerwiseHyper {
    let fit = FitHyper {
        epochs: 2,
        ..FitHyper::default()
    };
    LayerwiseHyper {
        autoencoder: fit,
        stage: fit,
        fam_on,
        seed: 9,
    }
}

#[test]
fn teachers_are_untouched_and_runs_repeat() {
    let s = setup(AmalgamMode::Dfa, 2);
    let before: Vec<Network> = s.teachers.clone();
    let a = run_layerwise(&s.teachers, &s.transfer, &s.plan, &s.student, &hyper(true)).unwrap();
    let b = run_layerwise(&s.teachers, &s.transfer, &s.plan, &s.student, &hyper(true)).unwrap();
    assert!(a.student.bitwise_eq(&b.student));
    for (t, u) in s.teachers.iter().zip(&before) {
        assert!(t.bitwise_eq(u));
    }
    let (_, _) = joint_finetune(
        a.student,
        &s.teachers,
        &s.transfer,
        &s.map,
        &TrainHyper::default(),
        None,
    )
    .unwrap();
    for (t, u) in s.teachers.iter().zip(&before) {
        assert!(t.bitwise_eq(u));
    }
}

#[test]
fn stages_fill_exactly_their_layers() {
    let s = setup(AmalgamMode::Ifa, 3);
    let out = run_layerwise(&s.teachers, &s.transfer, &s.plan, &s.student, &hyper(true)).unwrap();
    let l_total = s.student.num_layers();
    assert_eq!(out.stages.len(), l_total - 1);
    for st in &out.stages {
        let l = st.layer_index;
        assert!(out.student.params[Network::<f32>::weight_id(l)]
            .value
            .bitwise_eq(&st.weight.value));
        assert!(out.student.params[Network::<f32>::bias_id(l)]
            .value
            .bitwise_eq(&st.bias.value));
        assert_eq!(st.fam.is_some(), l >= 2);
    }
    // IFA over three teachers: two autoencoders per tapped layer
    assert!(out.autoencoders.iter().all(|a| a.autoencoders.len() == 2));
    assert_eq!(out.student.fam_layers(), (2..l_total).collect::<Vec<_>>());
    assert_eq!(
        out.student.count_params(),
        s.student.param_count(&out.student.fam_layers())
    );
}

#[test]
fn joint_starts_from_the_layerwise_student() {
    let s = setup(AmalgamMode::Pairwise, 2);
    let out = run_layerwise(&s.teachers, &s.transfer, &s.plan, &s.student, &hyper(true)).unwrap();
    let zero = TrainHyper {
        epochs: 0,
        ..TrainHyper::default()
    };
    let (same, log) = joint_finetune(out.student.clone(), &s.teachers, &s.transfer, &s.map, &zero, None).unwrap();
    assert!(same.bitwise_eq(&out.student));
    assert_eq!(log.initial.len(), 1);
    assert!(log.records.is_empty());
}

#[test]
fn identity_adapter_leaves_epoch_zero_loss_bitwise_equal() {
    let mut rng = Rng::new(4);
    let x = Tensor::new(&[20, 3, 4, 4], (0..20 * 48).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let y = Tensor::new(&[20, 5, 2, 2], (0..20 * 20).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let prev = kamal_core::LayerSpec::conv(
        2,
        3,
        3,
        1,
        1,
        kamal_core::ops::Activation::Relu,
        kamal_core::ops::Pool::Max { kernel: 2, stride: 2 },
    );
    let layer = kamal_core::LayerSpec::conv(
        3,
        5,
        3,
        1,
        1,
        kamal_core::ops::Activation::Relu,
        kamal_core::ops::Pool::None,
    );
    let h = FitHyper {
        epochs: 3,
        sgd: Sgd {
            lr: 0.5,
            ..FitHyper::default().sgd
        },
        ..FitHyper::default()
    };
    let on = layerwise_stage(2, &x, &y, &layer, Some(&prev), true, &h).unwrap();
    let off = layerwise_stage(2, &x, &y, &layer, Some(&prev), false, &h).unwrap();
    assert_eq!(on.report.initial_loss.to_bits(), off.report.initial_loss.to_bits());
    assert!(on.report.final_loss < on.report.initial_loss);
}
