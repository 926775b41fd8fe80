//! Row profiles and elliptical cross-section volume integration.
//!
//! Each mask row is one body level. In the back view the widest run of a row
//! is the trunk, paired with the side-view width to form an ellipse; any
//! other run (an abducted arm, a separated leg) is treated as a circular
//! cross-section of its own width. Areas are summed row by row.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BodyMask;

/// A maximal horizontal stretch of foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: usize,
    pub len: usize,
}

impl Run {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRuns {
    pub row: usize,
    pub runs: Vec<Run>,
}

impl RowRuns {
    /// Index of the longest run, leftmost on ties.
    pub fn widest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.runs.iter().enumerate() {
            if best.is_none_or(|b| r.len > self.runs[b].len) {
                best = Some(i);
            }
        }
        best
    }

    pub fn total_len(&self) -> usize {
        self.runs.iter().map(|r| r.len).sum()
    }

    /// Distance from the first run's start to the last run's end.
    pub fn extent(&self) -> usize {
        match (self.runs.first(), self.runs.last()) {
            (Some(a), Some(b)) => b.end() - a.start,
            _ => 0,
        }
    }
}

/// Maximal runs of consecutive foreground pixels in one row, left to right.
pub fn row_runs(mask: &BodyMask, row: usize) -> RowRuns {
    let mut runs = Vec::new();
    let mut current: Option<usize> = None;
    for (x, &b) in mask.row(row).iter().enumerate() {
        match (b, current) {
            (true, None) => current = Some(x),
            (false, Some(start)) => {
                runs.push(Run {
                    start,
                    len: x - start,
                });
                current = None;
            }
            _ => {}
        }
    }
    if let Some(start) = current {
        runs.push(Run {
            start,
            len: mask.width() - start,
        });
    }
    RowRuns { row, runs }
}

/// Area of an ellipse with full axes `a` and `b`.
pub fn slice_area(a: f64, b: f64) -> f64 {
    PI / 4.0 * (a * b)
}

/// Perimeter of an ellipse with full axes `a` and `b`, by Ramanujan's first
/// approximation on the semi-axes. Exact for circles.
pub fn slice_perimeter(a: f64, b: f64) -> f64 {
    let (x, y) = (a / 2.0, b / 2.0);
    PI * (3.0 * (x + y) - ((3.0 * x + y) * (x + 3.0 * y)).sqrt())
}

/// Physical size of one pixel in each view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationScale {
    pub cm_per_px_back_x: f64,
    pub cm_per_px_side_x: f64,
    pub cm_per_px_y: f64,
}

impl CalibrationScale {
    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.cm_per_px_back_x,
            self.cm_per_px_side_x,
            self.cm_per_px_y,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "calibration factors must all be positive: {self:?}"
            )))
        }
    }
}

/// Per-row measurements of both views on a shared row grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceProfileSet {
    pub rows: usize,
    pub back_runs: Vec<RowRuns>,
    pub side_width: Vec<usize>,
    pub scale: Option<CalibrationScale>,
    /// Vertical extent of one profile row, in source pixels.
    pub row_height: f64,
    /// Rows where the side view had more than one run.
    pub side_multi_run_rows: usize,
}

impl SliceProfileSet {
    /// Sets the vertical extent of a row in source pixels (1 by default).
    pub fn with_row_height(mut self, row_height: f64) -> Self {
        self.row_height = row_height;
        self
    }
}

/// Collects back-view runs and side-view total widths row by row.
pub fn extract_profiles(
    back: &BodyMask,
    side: &BodyMask,
    scale: Option<CalibrationScale>,
) -> Result<SliceProfileSet> {
    if back.height() != side.height() {
        return Err(Error::RowMismatch {
            back: back.height(),
            side: side.height(),
        });
    }
    if let Some(s) = &scale {
        s.validate()?;
    }
    let rows = back.height();
    let back_runs: Vec<RowRuns> = (0..rows).map(|y| row_runs(back, y)).collect();
    let mut side_multi_run_rows = 0;
    let side_width = (0..rows)
        .map(|y| {
            let runs = row_runs(side, y);
            if runs.runs.len() > 1 {
                side_multi_run_rows += 1;
            }
            runs.total_len()
        })
        .collect();
    if side_multi_run_rows > 0 {
        log::warn!(
            "side view has {side_multi_run_rows} rows with several runs; merged into total width"
        );
    }
    Ok(SliceProfileSet {
        rows,
        back_runs,
        side_width,
        scale,
        row_height: 1.0,
        side_multi_run_rows,
    })
}

/// Shape descriptors fed to the composition model, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeatures {
    pub total_volume: f64,
    pub trunk_volume: f64,
    pub limb_volume: f64,
    pub mean_perimeter: f64,
    pub max_back_width: f64,
    pub max_side_width: f64,
    pub height_rows: f64,
}

impl ShapeFeatures {
    pub const LEN: usize = 7;

    pub const NAMES: [&'static str; Self::LEN] = [
        "total_volume",
        "trunk_volume",
        "limb_volume",
        "mean_perimeter",
        "max_back_width",
        "max_side_width",
        "height_rows",
    ];

    pub fn to_vec(&self) -> [f64; Self::LEN] {
        [
            self.total_volume,
            self.trunk_volume,
            self.limb_volume,
            self.mean_perimeter,
            self.max_back_width,
            self.max_side_width,
            self.height_rows,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.to_vec()[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub total_px3: f64,
    pub trunk_px3: f64,
    pub limbs_px3: f64,
    pub total_cm3: Option<f64>,
    pub per_row_area: Vec<f64>,
    pub features: ShapeFeatures,
}

/// Trunk and limb cross-section areas of one row, in px².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowArea {
    pub trunk: f64,
    pub limbs: f64,
    pub total: f64,
}

pub fn row_area(runs: &RowRuns, side_width: usize) -> RowArea {
    let Some(widest) = runs.widest() else {
        return RowArea {
            trunk: 0.0,
            limbs: 0.0,
            total: 0.0,
        };
    };
    let trunk = slice_area(runs.runs[widest].len as f64, side_width as f64);
    let limbs: f64 = runs
        .runs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != widest)
        .map(|(_, r)| slice_area(r.len as f64, r.len as f64))
        .sum();
    RowArea {
        trunk,
        limbs,
        total: trunk + limbs,
    }
}

/// Integrates elliptical trunk slices and circular limb slices over all rows.
pub fn body_volume(profiles: &SliceProfileSet) -> Result<VolumeEstimate> {
    if profiles.back_runs.len() != profiles.side_width.len() {
        return Err(Error::RowMismatch {
            back: profiles.back_runs.len(),
            side: profiles.side_width.len(),
        });
    }
    let dz = profiles.row_height;
    let mut trunk_area = 0.0;
    let mut limb_area = 0.0;
    let mut per_row_area = Vec::with_capacity(profiles.rows);
    for (runs, &side) in profiles.back_runs.iter().zip(&profiles.side_width) {
        let a = row_area(runs, side);
        trunk_area += a.trunk;
        limb_area += a.limbs;
        per_row_area.push(a.total);
    }
    let trunk_px3 = trunk_area * dz;
    let limbs_px3 = limb_area * dz;
    let total_px3 = trunk_px3 + limbs_px3;
    let total_cm3 = profiles.scale.map(|s| {
        let trunk = trunk_px3 * s.cm_per_px_back_x * s.cm_per_px_side_x * s.cm_per_px_y;
        let limbs = limbs_px3 * s.cm_per_px_back_x * s.cm_per_px_back_x * s.cm_per_px_y;
        trunk + limbs
    });
    let mut estimate = VolumeEstimate {
        total_px3,
        trunk_px3,
        limbs_px3,
        total_cm3,
        per_row_area,
        features: ShapeFeatures {
            total_volume: total_px3,
            trunk_volume: trunk_px3,
            limb_volume: limbs_px3,
            mean_perimeter: 0.0,
            max_back_width: 0.0,
            max_side_width: 0.0,
            height_rows: 0.0,
        },
    };
    if let Ok(f) = shape_features(profiles, &estimate) {
        estimate.features = f;
    }
    Ok(estimate)
}

/// Assembles the fixed 7-entry feature vector. Perimeters average the trunk
/// ellipse over rows with any back-view foreground.
pub fn shape_features(
    profiles: &SliceProfileSet,
    volume: &VolumeEstimate,
) -> Result<ShapeFeatures> {
    let mut perimeter_sum = 0.0;
    let mut non_empty = 0usize;
    let mut max_back = 0usize;
    for (runs, &side) in profiles.back_runs.iter().zip(&profiles.side_width) {
        let Some(widest) = runs.widest() else {
            continue;
        };
        non_empty += 1;
        perimeter_sum += slice_perimeter(runs.runs[widest].len as f64, side as f64);
        max_back = max_back.max(runs.extent());
    }
    if non_empty == 0 {
        return Err(Error::EmptyBody);
    }
    let max_side = profiles.side_width.iter().copied().max().unwrap_or(0);
    Ok(ShapeFeatures {
        total_volume: volume.total_px3,
        trunk_volume: volume.trunk_px3,
        limb_volume: volume.limbs_px3,
        mean_perimeter: perimeter_sum / non_empty as f64,
        max_back_width: max_back as f64,
        max_side_width: max_side as f64,
        height_rows: non_empty as f64,
    })
}
