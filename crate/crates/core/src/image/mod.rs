//! Image data model, ingestion, warping, projection primitives, and
//! dataset management shared by every other module.

pub mod dataset;
pub mod io;
pub mod synth;
pub mod tensor;
pub mod warp;

pub use dataset::{DatasetItem, FaceDataset, SplitFractions, SplitKind};
pub use tensor::{apply_perturbation, clip_eps, clip_image_range, ImageTensor, Perturbation};
pub use warp::{random_warp, resize_bilinear, warp, WarpLimits, WarpParams};
