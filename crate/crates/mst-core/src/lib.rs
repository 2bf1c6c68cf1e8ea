//! Market segmentation trees: binary decision trees over user contexts whose
//! leaves hold full response models (multinomial logit, isotonic, logistic or
//! constant).  Splits are chosen by refitting the leaf models on both sides of
//! every candidate and keeping the candidate with the lowest summed training
//! loss, so the tree optimizes the quantity it will be scored on instead of a
//! surrogate impurity.
//!
//! The crate also ships the clustered benchmarks (k-means over contexts with a
//! per-cluster response model), cost-complexity pruning, synthetic ground-truth
//! generators, evaluation metrics, and the versioned on-disk formats used by
//! the `mst` command line tool.

pub mod benchmarks;
pub mod data;
pub mod error;
pub mod format;
pub mod ingest;
pub mod leaf;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod prune;
pub mod rng;
pub mod train;
pub mod tree;

pub mod datagen;

pub use data::{ContextSchema, ContextValue, Dataset, Decision, Response, VarKind, Variable};
pub use error::{Error, Result};
pub use leaf::{LeafFamily, LeafModel};
pub use tree::{Node, Split, Tree};
