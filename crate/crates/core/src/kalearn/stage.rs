//! Layer-wise parameter learning: each student block is fitted to map the
//! previous amalgamated features onto the current ones.

use crate::amalgam::{amalgamate_layer, AmalgamPlan, ChannelAutoencoder, FeatureBank, FitHyper, FitReport};
use crate::data::{batches, TransferSet};
use crate::error::{Error, Result};
use crate::nets::{build_network, identity_fam, init_layer, run_block, BlockParams, LayerSpec, Network, NetworkSpec};
use crate::ops;
use crate::optim::Param;
use crate::rng::{derive_key, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;

const STAGE_STREAM: u64 = 0x7374_6167;
const STUDENT_STREAM: u64 = 0x7374_7564;
const AE_STREAM: u64 = 0x6165_6e63;
/// Samples used to estimate the design energy of a stage.
const ENERGY_SAMPLES: usize = 256;
const CHUNK: usize = 128;
const FAM_STEP_RATIO: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct StageResult {
    pub layer_index: usize,
    pub weight: Param,
    pub bias: Param,
    pub fam: Option<Param>,
    pub report: FitReport,
}

fn ids(fam: bool) -> BlockParams {
    BlockParams {
        weight: 0,
        bias: 1,
        fam: fam.then_some(2),
    }
}

/// Full-pass `L_PL` of the block held in `params` over the stage data.
fn stage_loss(
    params: &[Param],
    fam: bool,
    layer: &LayerSpec,
    prev: Option<&LayerSpec>,
    input: &Tensor,
    target: &Tensor,
) -> Result<f64> {
    let n = input.batch();
    let mut total = 0.0;
    for s in (0..n).step_by(CHUNK) {
        let e = (s + CHUNK).min(n);
        let out = run_block(
            &mut Tape::inference(),
            params,
            ids(fam),
            layer,
            prev,
            input.slice_batch(s, e)?,
        )?;
        total += ops::l2_loss(&out, &target.slice_batch(s, e)?)?.0 * (e - s) as f64;
    }
    Ok(total / n as f64)
}

/// Per-sample energies that bound the curvature seen by the layer map and
/// by the adapter, used to normalize their step sizes.
fn design_energies(input: &Tensor, layer: &LayerSpec, prev: Option<&LayerSpec>, weight: &Tensor) -> Result<(f64, f64)> {
    let k = input.batch().min(ENERGY_SAMPLES);
    let x = input.slice_batch(0, k)?;
    let a = match prev {
        Some(p) => ops::nonparam(&x, p.activation, p.pool)?,
        None => x.clone(),
    };
    let x_energy = x.sum_sq() / k as f64;
    let a_energy = a.sum_sq() / k as f64;
    let (design, positions_ratio) = match layer.kind {
        crate::nets::LayerKind::Fc => (a_energy + 1.0, 1.0),
        crate::nets::LayerKind::Conv => {
            let [_, _, h, w] = a.dims4();
            let g = layer.geom();
            let (ho, wo) = (g.output_extent(h).unwrap_or(1), g.output_extent(w).unwrap_or(1));
            let ratio = (ho * wo) as f64 / (h * w) as f64;
            (
                a_energy * (layer.kernel * layer.kernel) as f64 * ratio + (ho * wo) as f64,
                ratio,
            )
        }
    };
    let fam = x_energy * weight.sum_sq() * positions_ratio;
    Ok((design, fam))
}

/// Fit block `l`: `conv(pool(act(FAM(input))))` (adapter only when
/// `fam_on` and `prev` is present) against `target` under `L_PL`.
///
/// Only the returned parameters are trained; `input` and `target` are read
/// only. The map starts from the fan-in-scaled init drawn from
/// `(hyper.seed, l)`, the adapter from the identity.
pub fn layerwise_stage(
    l: usize,
    input: &Tensor,
    target: &Tensor,
    layer: &LayerSpec,
    prev: Option<&LayerSpec>,
    fam_on: bool,
    hyper: &FitHyper,
) -> Result<StageResult> {
    hyper.validate()?;
    if input.batch() != target.batch() {
        return Err(Error::shape(
            "layerwise_stage",
            format!("{} inputs vs {} targets", input.batch(), target.batch()),
        ));
    }
    let fam_on = fam_on && prev.is_some();
    let (w, b) = init_layer::<f32>(layer, l, &mut Rng::stream(hyper.seed, &[STAGE_STREAM, l as u64]));
    let mut params = vec![w, b];
    if fam_on {
        params.push(identity_fam(l, input.dim(1)));
    }
    let probe = run_block(
        &mut Tape::inference(),
        &params,
        ids(fam_on),
        layer,
        prev,
        input.slice_batch(0, 1)?,
    )?;
    if probe.shape()[1..] != target.shape()[1..] {
        return Err(Error::shape(
            "layerwise_stage",
            format!(
                "stage {l} predicts {:?} per sample but targets are {:?}",
                &probe.shape()[1..],
                &target.shape()[1..]
            ),
        ));
    }
    let (design, fam_design) = design_energies(input, layer, prev, &params[0].value)?;
    let sgd = hyper.scaled(design)?;
    let sgd_fam = hyper.scaled(fam_design / FAM_STEP_RATIO)?;

    let initial_loss = stage_loss(&params, fam_on, layer, prev, input, target)?;
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let mut sum = 0.0;
        for idx in batches(input.batch(), hyper.batch_size, hyper.seed, epoch as u64, true) {
            let x = input.select(&idx)?;
            let y = target.select(&idx)?;
            let mut tape = Tape::new();
            let out = run_block(&mut tape, &params, ids(fam_on), layer, prev, x)?;
            let (loss, g) = ops::l2_loss(&out, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("stage {l} loss"),
                });
            }
            sum += loss * idx.len() as f64;
            tape.backward(&mut params, g, false)?;
            sgd.step(&mut params[..2])?;
            if fam_on {
                sgd_fam.step(&mut params[2..])?;
            }
        }
        loss_curve.push(sum / input.batch() as f64);
    }
    let final_loss = stage_loss(&params, fam_on, layer, prev, input, target)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite {
            what: format!("stage {l} loss"),
        });
    }
    let fam = fam_on.then(|| params.pop().expect("adapter pushed"));
    let bias = params.pop().expect("bias");
    let weight = params.pop().expect("weight");
    Ok(StageResult {
        layer_index: l,
        weight,
        bias,
        fam,
        report: FitReport {
            initial_loss,
            final_loss,
            loss_curve,
        },
    })
}

/// Settings for [`run_layerwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerwiseHyper {
    pub autoencoder: FitHyper,
    pub stage: FitHyper,
    pub fam_on: bool,
    /// Seed of the student's final (untrained) classifier.
    pub seed: u64,
}

/// Autoencoders of one tapped layer, with their fit reports.
#[derive(Clone, Debug)]
pub struct LayerAutoencoders {
    pub layer: usize,
    pub autoencoders: Vec<ChannelAutoencoder>,
    pub reports: Vec<FitReport>,
}

#[derive(Clone, Debug)]
pub struct LayerwiseOutput {
    pub student: Network,
    pub stages: Vec<StageResult>,
    pub autoencoders: Vec<LayerAutoencoders>,
}

/// Layer-wise amalgamation: for `l = 1..L-1`, collect the teachers'
/// layer-`l` features over the transfer set, amalgamate them per `plan`,
/// and fit student block `l` from `F_a^{l-1}` (the images for `l = 1`) to
/// `F_a^l`. The student's classifier keeps its random init.
pub fn run_layerwise(
    teachers: &[Network],
    transfer: &TransferSet,
    plan: &AmalgamPlan,
    student_spec: &NetworkSpec,
    hyper: &LayerwiseHyper,
) -> Result<LayerwiseOutput> {
    student_spec.validate()?;
    let l_total = student_spec.num_layers();
    if teachers.len() != plan.n_teachers {
        return Err(Error::invalid(
            "run_layerwise",
            format!("{} teachers for a {}-teacher plan", teachers.len(), plan.n_teachers),
        ));
    }
    let widths: Vec<usize> = student_spec.layers[..l_total - 1].iter().map(|s| s.out_ch).collect();
    if widths != plan.per_layer_out {
        return Err(Error::invalid(
            "run_layerwise",
            format!("student widths {widths:?} differ from planned {:?}", plan.per_layer_out),
        ));
    }
    if teachers[0].num_layers() != l_total {
        return Err(Error::invalid("run_layerwise", "student and teachers differ in depth"));
    }

    let mut student = build_network::<f32>(student_spec, &mut Rng::stream(hyper.seed, &[STUDENT_STREAM]))?;
    let mut stages = Vec::with_capacity(l_total - 1);
    let mut autoencoders = Vec::with_capacity(l_total - 1);
    let mut prev_feats: Option<Tensor> = None;
    for l in 1..l_total {
        let mut bank = FeatureBank::collect(teachers, &transfer.images, &[l])?;
        let teacher_feats = bank.take_layer(l).expect("collected");
        let refs: Vec<&Tensor> = teacher_feats.iter().collect();
        let ae_hyper = FitHyper {
            seed: derive_key(hyper.autoencoder.seed, &[AE_STREAM, l as u64]),
            ..hyper.autoencoder
        };
        let amalgam = amalgamate_layer(plan, l, &refs, &ae_hyper)?;
        drop(teacher_feats);
        let input = prev_feats.as_ref().unwrap_or(&transfer.images);
        let prev = (l > 1).then(|| &student_spec.layers[l - 2]);
        let stage = layerwise_stage(
            l,
            input,
            &amalgam.features,
            &student_spec.layers[l - 1],
            prev,
            hyper.fam_on,
            &hyper.stage,
        )?;
        student.params[Network::<f32>::weight_id(l)] =
            Param::new(format!("layer{l}.weight"), stage.weight.value.clone());
        student.params[Network::<f32>::bias_id(l)] = Param::new(format!("layer{l}.bias"), stage.bias.value.clone());
        if let Some(f) = &stage.fam {
            student.set_fam(l, f.value.clone())?;
        }
        stages.push(stage);
        autoencoders.push(LayerAutoencoders {
            layer: l,
            autoencoders: amalgam.autoencoders,
            reports: amalgam.reports,
        });
        prev_feats = Some(amalgam.features);
    }
    Ok(LayerwiseOutput {
        student,
        stages,
        autoencoders,
    })
}
