//! Fiber structural similarity network for tractography segmentation.
//!
//! Pipeline: [`synthgen`] or a dataset file → [`preprocess`] (curvature
//! pruning to 100×3) → [`trainer`] (Siamese BLSTM/LSTM comparator from
//! [`siamese`], fed by [`pairing`]) → [`classifier`] (argmax over a labeled
//! default set, optionally rotation-augmented) → [`eval`].

pub mod error;
pub mod fiber;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod siamese;
pub mod synthgen;
pub mod pairing;
pub mod trainer;
pub mod classifier;
pub mod eval;

pub use error::{Error, Result};
pub use fiber::{
    center_fiber, load_dataset, rotate_fiber, save_dataset, split_dataset, Axis, CoarseLabel,
    Fiber, FiberDataset, FineLabel, Level, Point3, RotationSpec, TaggedRotation,
};
pub use preprocess::{curvature_scores, prune_and_pad, ProcessedFiber};
pub use siamese::{PairInput, SiameseModel, TowerConfig};
pub use synthgen::{generate_corpus, GenConfig};
