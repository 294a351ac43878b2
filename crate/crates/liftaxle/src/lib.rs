//! Detection pipeline and evaluation toolkit for counting truck axles and
//! spotting lifted ones in roadside camera frames.
//!
//! The crate is organized around the data flow of the system:
//!
//! - [`geometry`]: boxes, polygon masks, IoU measures, letterbox resize
//! - [`annotations`]: YOLO-style label files, dataset manifests and splits,
//!   training configuration
//! - [`metrics`]: prediction/ground-truth matching, precision/recall/F1,
//!   average precision, confusion matrices
//! - [`cascade`]: the truck -> axle -> lifted-axle decision stage that turns
//!   raw detections into per-truck records
//! - [`backend`]: the detector abstraction, recorded-prediction files, NMS,
//!   and a synthetic scene generator used for end-to-end checks

pub mod annotations;
pub mod backend;
pub mod cascade;
pub mod geometry;
pub mod metrics;
