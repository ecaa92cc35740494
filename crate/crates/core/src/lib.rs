pub mod amalgam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kalearn;
pub mod log;
pub mod nets;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use amalgam::{ChannelAutoencoder, LabelMap};
pub use data::{ClassSplit, LabeledSet, TransferSet};
pub use error::{Error, Result};
pub use log::{EpochRecord, Split, TrainLog};
pub use nets::{LayerSpec, Network, NetworkSpec};
pub use optim::{Param, Sgd};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::Tape;
pub use tensor::Tensor;
