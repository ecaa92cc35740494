//! Parameter learning: layer-wise stages, joint fine-tuning, the
//! distillation baseline, and evaluation.

mod eval;
mod joint;
mod stage;

pub use eval::{
    accuracy_from_scores, ensemble_predict, evaluate, predict_from_scores, teacher_scores, EvalReport, Model,
};
pub use joint::{distill, joint_finetune, kd_baseline, EvalSetup, KdConfig, Objective};
pub use stage::{layerwise_stage, run_layerwise, LayerAutoencoders, LayerwiseHyper, LayerwiseOutput, StageResult};
