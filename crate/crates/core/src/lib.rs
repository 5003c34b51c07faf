//! Explainable multiple-abnormality classification for volumetric scans.
//!
//! The crate is organised the way the data flows:
//!
//! - [`volgrid`]: volume containers, raw volume/mask I/O, the phantom generator
//!   and the fixed toy featurizer that turns a volume into a feature map stack.
//! - [`mil_head`]: the multiple-instance slice-scoring head, its losses,
//!   analytic gradients and momentum SGD, plus the global-average-pooling
//!   head used as a CAM-architecture reference.
//! - [`explain`]: HiResCAM (gradient path and closed form), 3D Grad-CAM and
//!   top-slice ranking.
//! - [`report_labeler`]: rule-based (abnormality x location) extraction from
//!   report sentences.
//! - [`organ_seg`]: unsupervised lung / mediastinum segmentation with QC and
//!   the heuristic fallback.
//! - [`gt_builder`]: allowed-region ground truth at feature-map resolution.
//! - [`evalx`]: OrganIoU, AUROC and per-slice score summaries.

pub mod anatomy;
pub mod error;
pub mod evalx;
pub mod explain;
pub mod gt_builder;
pub mod mil_head;
pub mod organ_seg;
pub mod report_labeler;
pub mod volgrid;

pub use anatomy::{Location, Organ};
pub use error::{Error, Result};
