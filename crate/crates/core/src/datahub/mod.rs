//! Interaction and feature ingestion, splits, negative sampling, synthetic
//! data and robustness corruptions.

mod corrupt;
mod dataset;
mod features;
mod interactions;
mod sampling;
mod store;
mod synth;

pub use corrupt::{corrupt, CorruptionSpec};
pub use dataset::{InteractionDataset, Pair};
pub use features::{
    decode_features, encode_features, load_features, write_features, FeatureManifest, Modality, ModalityFeatures,
};
pub use interactions::{k_core, load_interactions, split_counts, split_per_user, LoadOptions, LoadReport};
pub use sampling::{sample_bpr_triplets, Triplet, TripletEpoch};
pub use store::{read_prepared, write_prepared, PreparedData};
pub use synth::{item_labels, synth_planted, SynthData, SynthSpec};
