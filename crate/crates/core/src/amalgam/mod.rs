//! Feature amalgamation through channel autoencoders, and score-vector
//! amalgamation.

mod autoencoder;
mod bank;
mod features;
mod scores;

pub use autoencoder::{encode, feature_energy, train_autoencoder, ChannelAutoencoder, FitHyper, FitReport};
pub use bank::{check_same_architecture, FeatureBank};
pub use features::{
    amalgamate_dfa, amalgamate_ifa, amalgamate_layer, amalgamate_pair, AmalgamMode, AmalgamPlan, LayerAmalgam,
};
pub use scores::{amalgamate_scores, merge_overlapping_at_test, LabelEntry, LabelMap};
