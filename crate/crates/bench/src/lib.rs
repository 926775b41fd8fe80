//! Shared inputs for the criterion benches.

use bodyvol_core::pipeline::{self, RunConfig};
use bodyvol_core::{BodyMask, PhantomSpec, RasterImage};

/// Back and side renders of the standard humanoid tilted by `rotation` degrees.
pub fn humanoid_images(rotation: f64) -> (RasterImage, RasterImage) {
    bodyvol_core::render_phantom(&PhantomSpec::standard_humanoid().with_rotation(rotation))
        .expect("standard humanoid fits its canvas")
}

/// Cleaned masks of [`humanoid_images`].
pub fn humanoid_masks(rotation: f64) -> (BodyMask, BodyMask) {
    let (back, side) = humanoid_images(rotation);
    let cfg = RunConfig::default();
    (
        pipeline::segment_view(&back, &cfg).unwrap(),
        pipeline::segment_view(&side, &cfg).unwrap(),
    )
}
