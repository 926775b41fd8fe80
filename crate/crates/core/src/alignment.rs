//! Upright alignment of body masks by left/right pixel-count symmetry.
//!
//! A mask is rotated over a coarse-to-fine grid of angles. At each trial
//! angle the vertical axis is re-derived from the rotated mask (by default
//! the centre of its bounding rectangle) and the normalised difference
//! between the pixel counts on either side of it is measured. The angle with
//! the smallest difference wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BodyMask;

/// Inclusive pixel bounds of the foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl Rect {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }
}

/// Tight axis-aligned bounding box of the foreground.
pub fn bounding_rect(mask: &BodyMask) -> Result<Rect> {
    let mut rect: Option<Rect> = None;
    for y in 0..mask.height() {
        let row = mask.row(y);
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        rect = Some(match rect {
            None => Rect::new(first, y, last, y),
            Some(r) => Rect::new(r.x_min.min(first), r.y_min, r.x_max.max(last), y),
        });
    }
    rect.ok_or(Error::EmptyMask)
}

/// Centre of the rectangle in pixel coordinates.
pub fn rect_centroid(rect: &Rect) -> (f64, f64) {
    (
        (rect.x_min + rect.x_max) as f64 / 2.0,
        (rect.y_min + rect.y_max) as f64 / 2.0,
    )
}

/// Mean position of the foreground pixels.
pub fn pixel_centroid(mask: &BodyMask) -> Result<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for (x, &b) in mask.row(y).iter().enumerate() {
            if b {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sx / n as f64, sy / n as f64))
}

/// How the symmetry axis (and rotation pivot) is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidMode {
    /// Centre of the smallest bounding rectangle.
    #[default]
    BoundingRect,
    /// Mean of the foreground pixel coordinates.
    PixelCentroid,
}

impl CentroidMode {
    pub fn locate(&self, mask: &BodyMask) -> Result<(f64, f64)> {
        match self {
            CentroidMode::BoundingRect => Ok(rect_centroid(&bounding_rect(mask)?)),
            CentroidMode::PixelCentroid => pixel_centroid(mask),
        }
    }
}

/// Angle grid for [`align_upright`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSearchParams {
    pub angle_min: f64,
    pub angle_max: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    pub centroid: CentroidMode,
}

impl Default for RotationSearchParams {
    fn default() -> Self {
        Self {
            angle_min: -15.0,
            angle_max: 15.0,
            coarse_step: 1.0,
            fine_step: 0.1,
            centroid: CentroidMode::BoundingRect,
        }
    }
}

impl RotationSearchParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.angle_min < self.angle_max) {
            return Err(Error::InvalidParams(format!(
                "angle_min {} must be below angle_max {}",
                self.angle_min, self.angle_max
            )));
        }
        if !(self.fine_step > 0.0 && self.fine_step <= self.coarse_step) {
            return Err(Error::InvalidParams(format!(
                "need 0 < fine_step ({}) <= coarse_step ({})",
                self.fine_step, self.coarse_step
            )));
        }
        Ok(())
    }

    fn coarse_grid(&self) -> Vec<f64> {
        let n = ((self.angle_max - self.angle_min) / self.coarse_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.angle_min + i as f64 * self.coarse_step)
            .collect()
    }

    fn fine_grid(&self, center: f64) -> Vec<f64> {
        let n = (self.coarse_step / self.fine_step + 1e-9).floor() as i64;
        (-n..=n)
            .map(|j| center + j as f64 * self.fine_step)
            .filter(|a| *a >= self.angle_min - 1e-12 && *a <= self.angle_max + 1e-12)
            .collect()
    }
}

/// Rotated mask with the angle that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub mask: BodyMask,
    /// Applied rotation in degrees, counter-clockwise as displayed.
    pub angle: f64,
    pub score: f64,
}

/// Rotates the mask by `angle` degrees (counter-clockwise as displayed, with
/// y pointing down) about `pivot`, sampling by nearest neighbour through the
/// inverse mapping. The canvas keeps the original frame at the same pixel
/// offset and grows on any side where the rotated foreground would spill out.
pub fn rotate_mask(mask: &BodyMask, angle: f64, pivot: (f64, f64)) -> BodyMask {
    let Ok(rect) = bounding_rect(mask) else {
        return mask.clone();
    };
    let (sin, cos) = angle.to_radians().sin_cos();
    let (cx, cy) = pivot;
    let forward = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    };

    let corners = [
        (rect.x_min as f64 - 0.5, rect.y_min as f64 - 0.5),
        (rect.x_max as f64 + 0.5, rect.y_min as f64 - 0.5),
        (rect.x_min as f64 - 0.5, rect.y_max as f64 + 0.5),
        (rect.x_max as f64 + 0.5, rect.y_max as f64 + 0.5),
    ];
    let (mut ex0, mut ey0, mut ex1, mut ey1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in corners {
        let (fx, fy) = forward(x, y);
        ex0 = ex0.min(fx);
        ey0 = ey0.min(fy);
        ex1 = ex1.max(fx);
        ey1 = ey1.max(fy);
    }
    const EPS: f64 = 1e-9;
    // Only pixels whose centres fall inside the rotated box can be foreground.
    let (px0, py0) = ((ex0 - EPS).ceil() as i64, (ey0 - EPS).ceil() as i64);
    let (px1, py1) = ((ex1 + EPS).floor() as i64, (ey1 + EPS).floor() as i64);

    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let (lo_x, lo_y) = (px0.min(0), py0.min(0));
    let (hi_x, hi_y) = (px1.max(w - 1), py1.max(h - 1));
    let out_w = (hi_x - lo_x + 1) as usize;
    let out_h = (hi_y - lo_y + 1) as usize;
    let mut out = BodyMask::new(out_w, out_h);

    for y in py0..=py1 {
        let dy = y as f64 - cy;
        for x in px0..=px1 {
            let dx = x as f64 - cx;
            let sx = (cx + cos * dx - sin * dy).round();
            let sy = (cy + sin * dx + cos * dy).round();
            if sx < 0.0 || sy < 0.0 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            if sx < mask.width() && sy < mask.height() && mask.get(sx, sy) {
                out.set((x - lo_x) as usize, (y - lo_y) as usize, true);
            }
        }
    }
    out
}

/// `|left − right| / total`, where left and right count foreground pixels
/// whose centres lie strictly on either side of the vertical line `x = axis_x`.
pub fn asymmetry_score(mask: &BodyMask, axis_x: f64) -> Result<f64> {
    let (mut left, mut right) = (0usize, 0usize);
    let mut total = 0usize;
    for y in 0..mask.height() {
        for (x, &b) in mask.row(y).iter().enumerate() {
            if !b {
                continue;
            }
            total += 1;
            let xf = x as f64;
            if xf < axis_x {
                left += 1;
            } else if xf > axis_x {
                right += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(left.abs_diff(right) as f64 / total as f64)
}

fn score_at(
    mask: &BodyMask,
    angle: f64,
    pivot: (f64, f64),
    mode: CentroidMode,
) -> Result<(f64, BodyMask)> {
    let rotated = rotate_mask(mask, angle, pivot);
    let (axis_x, _) = mode.locate(&rotated)?;
    Ok((asymmetry_score(&rotated, axis_x)?, rotated))
}

// Lower score wins; ties go to the smaller |angle|, then the negative angle.
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    let (sa, aa) = a;
    let (sb, ab) = b;
    sa.total_cmp(&sb)
        .then(aa.abs().total_cmp(&ab.abs()))
        .then(aa.total_cmp(&ab))
        .is_lt()
}

fn best_of(
    mask: &BodyMask,
    angles: &[f64],
    pivot: (f64, f64),
    mode: CentroidMode,
) -> Result<(f64, f64)> {
    // Evaluated in parallel, reduced sequentially in grid order.
    let scores: Vec<Result<f64>> = angles
        .par_iter()
        .map(|&a| score_at(mask, a, pivot, mode).map(|(s, _)| s))
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (&angle, score) in angles.iter().zip(scores) {
        let cand = (score?, angle);
        if best.is_none_or(|b| better(cand, b)) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::InvalidParams("empty angle grid".into()))
}

/// Finds the rotation within the search range that minimises
/// [`asymmetry_score`], searching a coarse grid and then a fine grid of
/// ±`coarse_step` around the coarse winner.
pub fn align_upright(mask: &BodyMask, params: &RotationSearchParams) -> Result<AlignmentResult> {
    params.validate()?;
    let pivot = params.centroid.locate(mask)?;
    let (_, coarse) = best_of(mask, &params.coarse_grid(), pivot, params.centroid)?;
    let (_, angle) = best_of(mask, &params.fine_grid(coarse), pivot, params.centroid)?;
    let (score, rotated) = score_at(mask, angle, pivot, params.centroid)?;
    Ok(AlignmentResult {
        mask: rotated,
        angle,
        score,
    })
}

/// Nearest-neighbour resampling along the vertical axis to exactly `rows`
/// rows. Output row `i` samples the input at fractional height `i / (rows − 1)`.
pub fn resample_rows(mask: &BodyMask, rows: usize) -> BodyMask {
    let h = mask.height();
    if rows == h {
        return mask.clone();
    }
    let mut bits = Vec::with_capacity(rows * mask.width());
    for i in 0..rows {
        let src = if rows <= 1 || h <= 1 {
            0
        } else {
            ((i as f64) * (h - 1) as f64 / (rows - 1) as f64).round() as usize
        };
        bits.extend_from_slice(mask.row(src.min(h - 1)));
    }
    BodyMask::from_bits(mask.width(), rows, bits).expect("row-resampled dimensions")
}

/// Crops a mask to its bounding rectangle.
pub fn crop_to_body(mask: &BodyMask) -> Result<BodyMask> {
    let r = bounding_rect(mask)?;
    Ok(mask.crop(r.x_min, r.y_min, r.width(), r.height()))
}

/// Crops both views to their bounding rectangles and resamples each to
/// `rows` rows, keeping each view's horizontal scale.
pub fn normalize_views(
    back: &BodyMask,
    side: &BodyMask,
    rows: usize,
) -> Result<(BodyMask, BodyMask)> {
    if rows < 2 {
        return Err(Error::InvalidParams(format!(
            "rows must be at least 2, got {rows}"
        )));
    }
    let back = crop_to_body(back)?;
    let side = crop_to_body(side)?;
    Ok((resample_rows(&back, rows), resample_rows(&side, rows)))
}
