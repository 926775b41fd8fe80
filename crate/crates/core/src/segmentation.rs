//! Green-screen segmentation: hue thresholding followed by component cleanup.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BodyMask, RasterImage};

/// Background colour band in HSV space. A pixel is background when its hue
/// lies in `[hue_min, hue_max]` (wrapping through 360 when `hue_min > hue_max`)
/// and it is saturated and bright enough.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HueThresholdParams {
    pub hue_min: f64,
    pub hue_max: f64,
    pub sat_min: f64,
    pub val_min: f64,
}

impl Default for HueThresholdParams {
    fn default() -> Self {
        Self {
            hue_min: 90.0,
            hue_max: 150.0,
            sat_min: 0.25,
            val_min: 0.15,
        }
    }
}

impl HueThresholdParams {
    pub fn validate(&self) -> Result<()> {
        let hue_ok = |h: f64| (0.0..360.0).contains(&h);
        let frac_ok = |v: f64| (0.0..=1.0).contains(&v);
        if !hue_ok(self.hue_min) || !hue_ok(self.hue_max) {
            return Err(Error::InvalidParams(format!(
                "hue band [{}, {}] must lie in [0, 360)",
                self.hue_min, self.hue_max
            )));
        }
        if !frac_ok(self.sat_min) || !frac_ok(self.val_min) {
            return Err(Error::InvalidParams(format!(
                "sat_min {} and val_min {} must lie in [0, 1]",
                self.sat_min, self.val_min
            )));
        }
        Ok(())
    }

    fn hue_in_band(&self, hue: f64) -> bool {
        if self.hue_min <= self.hue_max {
            hue >= self.hue_min && hue <= self.hue_max
        } else {
            hue >= self.hue_min || hue <= self.hue_max
        }
    }

    pub fn is_background(&self, rgb: [u8; 3]) -> bool {
        let (h, s, v) = rgb_to_hsv(rgb);
        self.hue_in_band(h) && s >= self.sat_min && v >= self.val_min
    }
}

/// Hexcone RGB → HSV. Hue in degrees `[0, 360)`, reported as 0 for greys;
/// saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let val = max;
    if delta == 0.0 {
        return (0.0, 0.0, val);
    }
    let sat = delta / max;
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let hue = (sector * 60.0) % 360.0;
    (hue, sat, val)
}

/// Marks every pixel outside the green band as body.
pub fn segment_green_screen(image: &RasterImage, params: &HueThresholdParams) -> BodyMask {
    let bits = image
        .pixels()
        .iter()
        .map(|&px| !params.is_background(px))
        .collect();
    BodyMask::from_bits(image.width(), image.height(), bits)
        .expect("dimensions taken from a valid image")
}

/// Labels 4-connected foreground components. Returns per-pixel labels
/// (0 = background, components numbered from 1 in raster order of their
/// first pixel) and the size of each component.
pub fn label_components(mask: &BodyMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        sizes.push(0usize);
        let label = sizes.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            sizes[label as usize - 1] += 1;
            for_each_neighbor4(i, w, h, |j| {
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            });
        }
    }
    (labels, sizes)
}

#[inline]
fn for_each_neighbor4(i: usize, w: usize, h: usize, mut f: impl FnMut(usize)) {
    let (x, y) = (i % w, i / w);
    if x > 0 {
        f(i - 1);
    }
    if x + 1 < w {
        f(i + 1);
    }
    if y > 0 {
        f(i - w);
    }
    if y + 1 < h {
        f(i + w);
    }
}

/// Keeps the largest 4-connected foreground component (first in raster
/// order on ties) and fills every background region that is not
/// 4-connected to the image border.
pub fn clean_mask(mask: &BodyMask) -> Result<BodyMask> {
    let (w, h) = (mask.width(), mask.height());
    let (labels, sizes) = label_components(mask);
    let keep = sizes
        .iter()
        .enumerate()
        .fold(None::<(usize, usize)>, |best, (i, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i as u32 + 1)
        .ok_or(Error::EmptyMask)?;

    // Flood the background from the border; anything unreached is a hole.
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if labels[i] != keep && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        for_each_neighbor4(i, w, h, |j| {
            if labels[j] != keep && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        });
    }

    let bits = outside.into_iter().map(|o| !o).collect();
    BodyMask::from_bits(w, h, bits)
}

/// Binary erosion with a square structuring element of the given radius.
/// Pixels outside the frame count as background.
pub fn erode(mask: &BodyMask, radius: usize) -> BodyMask {
    morph(mask, radius, true)
}

/// Binary dilation with a square structuring element of the given radius.
pub fn dilate(mask: &BodyMask, radius: usize) -> BodyMask {
    morph(mask, radius, false)
}

// Separable min/max filter: horizontal pass then vertical pass.
fn morph(mask: &BodyMask, radius: usize, erode: bool) -> BodyMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let pass = |get: &dyn Fn(usize, usize) -> bool, x: usize, y: usize, horizontal: bool| {
        let (pos, len) = if horizontal { (x, w) } else { (y, h) };
        let lo = pos.saturating_sub(radius);
        let hi = pos + radius;
        let mut all = hi < len && pos >= radius;
        let mut any = false;
        for k in lo..=hi.min(len - 1) {
            let v = if horizontal { get(k, y) } else { get(x, k) };
            all &= v;
            any |= v;
        }
        if erode {
            all
        } else {
            any
        }
    };
    let horiz = BodyMask::from_fn(w, h, |x, y| pass(&|a, b| mask.get(a, b), x, y, true));
    BodyMask::from_fn(w, h, |x, y| pass(&|a, b| horiz.get(a, b), x, y, false))
}

/// Morphological opening followed by closing. Radius 0 is the identity.
pub fn smooth_mask(mask: &BodyMask, radius: usize) -> BodyMask {
    if radius == 0 {
        return mask.clone();
    }
    let opened = dilate(&erode(mask, radius), radius);
    erode(&dilate(&opened, radius), radius)
}
