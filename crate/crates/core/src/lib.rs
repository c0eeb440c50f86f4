//! Task-conditioned feature modulation for multi-task metric learning.
//!
//! The crate is `no_std` with `alloc`. It carries a small reverse-mode
//! differentiation engine over a fixed layer vocabulary (3x3 convolution,
//! stride-2 max pooling, residual blocks, fully-connected layers and ReLU),
//! per-task modulation modules that rescale or mix feature channels,
//! triplet losses, the Update Compliance Ratio (UCR) interference metric,
//! a correlated-attribute synthetic benchmark, Adagrad, and the training
//! and evaluation loops that tie them together.
//!
//! File formats, configuration and the command-line front end live in the
//! `taskmod` companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod arch;
pub mod error;
pub mod eval;
pub mod gradcheck;
mod kernels;
pub mod losses;
pub mod modulation;
pub mod network;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod ucr;
pub mod variant;

pub use arch::{ArchSpec, LayerSpec, Stage};
pub use error::{Error, Result};
pub use eval::{
    compare_variants, compare_variants_with, evaluate, retrieval_accuracy, EvalSet, RetrievalReport, VariantSummary,
};
pub use losses::{relevance_regularizer, triplet_loss, Margins};
pub use modulation::{
    apply_projection, apply_scaling, insert_modules, task_distance, InsertionSpec, ModulationKind, ModulationParams,
};
pub use network::{build_network, Forward, Network, ParamGroup, ParamId};
pub use optim::AdagradState;
pub use synthetic::{generate_dataset, sample_triplets, AttributeSpec, Dataset, InputKind, TripletBatch};
pub use tensor::Tensor;
pub use train::{train, train_model, EpochMetrics, TrainConfig, TrainOutcome};
pub use ucr::{compliance_sign, LedgerMode, UcrLedger, UcrMatrix};
pub use variant::{build_variant, ParamCounts, TaskModel, Variant};
