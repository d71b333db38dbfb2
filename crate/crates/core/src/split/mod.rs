//! Partitioned inference: the toy classifier, its head/tail split at a cut
//! point, the feature wire format, and image datasets.

mod dataset;
mod features;
mod model;
pub mod wire;

pub use dataset::{gen_synthetic, load_idx, load_idx_images, parse_idx, IdxArray, ImageDataset, SYNTHETIC_SHAPE};
pub use features::{FeatureDataset, FeatureVector, Provenance, Split};
pub use model::{
    partition, run_head, run_tail, train_classifier, ClassifierConfig, ClassifierEpoch, CutPoint, CutSpec, Head,
    LayerSpec, Model, ModelSpec, Prediction, Tail,
};
pub use wire::{deserialize_features, serialize_features};
