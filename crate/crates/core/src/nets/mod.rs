//! Network specifications, instantiation, forward execution, checkpoints
//! and supervised training.

mod checkpoint;
mod network;
mod spec;
mod train;

pub use checkpoint::{
    decode_container, encode_container, encode_network, load_checkpoint, network_from_container, read_container,
    save_checkpoint, write_container, Container,
};
pub use network::{build_network, identity_fam, init_layer, run_block, BlockParams, Network};
pub use spec::{make_student_spec, merged_width, LayerKind, LayerShapes, LayerSpec, NetworkSpec};
pub use train::{argmax_rows, eval_classifier, train_classifier, TrainHyper, EVAL_CHUNK};

/// Scalar count of every parameter, adapters included.
pub fn count_params<T: crate::Scalar>(net: &Network<T>) -> usize {
    net.count_params()
}
