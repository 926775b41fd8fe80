//! Body volume from two green-screen silhouettes.
//!
//! The pipeline stages are:
//!
//! 1. **Segmentation** – hue-band thresholding against a green backdrop,
//!    then keep the largest 4-connected component and fill its holes.
//! 2. **Alignment** – rotate each mask until the pixel counts left and right
//!    of the vertical line through its bounding-box centre balance.
//! 3. **Volumetry** – pair back-view and side-view widths row by row as
//!    ellipse axes and sum the slice areas.
//! 4. **Composition** – least-squares linear model from shape features to a
//!    body-composition value.
//!
//! [`phantom`] renders analytic solids into image pairs with known volume,
//! and [`pipeline`] wires the stages together with file I/O.

pub mod alignment;
pub mod composition;
pub mod error;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod segmentation;
pub mod volumetry;

pub use alignment::{
    align_upright, asymmetry_score, bounding_rect, normalize_views, rect_centroid, rotate_mask,
    AlignmentResult, CentroidMode, Rect, RotationSearchParams,
};
pub use composition::{evaluate, fit_linear, predict, CompositionModel, Dataset, FitReport};
pub use error::{Error, Result};
pub use phantom::{analytic_volume, render_phantom, voxel_volume, PhantomSpec, PhantomTruth};
pub use pipeline::{run_pipeline, PipelineReport, RunConfig};
pub use raster::{BodyMask, RasterImage};
pub use segmentation::{clean_mask, rgb_to_hsv, segment_green_screen, HueThresholdParams};
pub use volumetry::{
    body_volume, extract_profiles, row_runs, shape_features, slice_area, slice_perimeter,
    CalibrationScale, RowRuns, ShapeFeatures, SliceProfileSet, VolumeEstimate,
};
