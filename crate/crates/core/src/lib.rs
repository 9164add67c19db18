//! Building blocks for accelerating semantic segmentation annotation.
//!
//! Several model predictions are fused per pixel into a confidence-scored
//! label map ([`fusion`]); pixels the models disagree on are left for human
//! annotators and their edits merged back. The crate also covers instance
//! splitting ([`instance`]), evaluation ([`metrics`]), box-filter
//! anonymization ([`privacy`]) and dataset manifests ([`catalog`]).

pub mod catalog;
pub mod components;
pub mod fusion;
pub mod instance;
pub mod io;
pub mod metrics;
pub mod privacy;
pub mod raster;

pub use fusion::{
    fuse, merge_manual, uncertainty_map, weight_search, EditOp, FusedResult, FusionConfig,
    FusionError,
};
pub use instance::{apply_instance_edits, split_instances, InstanceEdit, InstanceMap};
pub use raster::{BitMask, ClassCatalog, Image, LabelMap, SENTINEL};
