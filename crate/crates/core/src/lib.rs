//! Storage and R-tree index for LC-MS intensity matrices.
//!
//! A dataset is a sparse matrix: one row per spectrum (retention time), one
//! column per m/z grid step. Rows are split into strips, strips into
//! fixed-width bounding boxes written dense or sparse, and the boxes are
//! indexed by an R-tree so range queries read only the boxes they overlap.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod bench;
pub mod error;
pub mod generate;
pub mod index;
pub mod ingest;
pub mod model;
pub mod query;
pub mod storage;

pub use error::{Error, Result};
pub use index::{BBRef, IndexParams, RTree};
pub use model::{DatasetMeta, Intensity, PeakEntry, QueryRect, Rect, SpectrumRecord};
pub use query::{range_query, MzRTree, QueryResult, Workload};
pub use storage::{build_from_mzxml, BuildOptions, Store, StoreBuilder, StoreManifest, StripChoice};
