//! Pose-conditioned convolutional autoencoders for single-image novel view
//! prediction, with the objective, optimizer, training protocol and the
//! embedding analysis tools (silhouette, exact t-SNE) used to evaluate them.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature enables runtime
//! SIMD detection in the matrix kernels and the platform math library; runs
//! are reproducible within one build configuration.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod real;
pub mod rng;
pub mod silhouette;
pub mod synth;
pub mod train;
pub mod tsne;
pub mod weights;

pub use data::{
    denormalize_image, encode_pose, generate_pairs, normalize_image, split_train_test,
    DatasetManifest, ManifestRecord, PoseVector, Raster, SampleKey, ViewPair, ViewSample,
    IMAGE_PIXELS, IMAGE_SIZE,
};
pub use error::{Error, Result};
pub use loss::{embedding_loss, mse, output_loss, total_loss, LossBreakdown};
pub use model::{Embedding, ModelConfig, Network};
pub use real::Real;
pub use train::{LossMode, TrainConfig, TrainingRun};
pub use weights::{NamedTensor, WeightsHandle};
