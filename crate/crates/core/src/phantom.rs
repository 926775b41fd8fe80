//! Synthetic green-screen phantoms with closed-form volumes.
//!
//! A phantom is a solid built from vertical elliptic levels (or a single
//! ellipsoid), optionally with two abducted circular arms. It is rendered
//! orthographically into a back view (x = width) and a side view
//! (x = depth) as flat red on flat green. Coordinates are continuous with
//! pixel `(i, j)` covering `[i, i+1) × [j, j+1)`; a pixel is body when its
//! centre lies inside the silhouette (boundary inclusive).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BodyMask, RasterImage};

pub const BODY_RGB: [u8; 3] = [255, 0, 0];
pub const BACKGROUND_RGB: [u8; 3] = [0, 255, 0];

/// One elliptic-cylinder level of a humanoid stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub half_width: f64,
    pub half_depth: f64,
    pub rows: f64,
}

impl Level {
    pub fn new(name: &str, half_width: f64, half_depth: f64, rows: f64) -> Self {
        Self {
            name: Some(name.to_string()),
            half_width,
            half_depth,
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomShape {
    EllipticCylinder {
        half_width: f64,
        half_depth: f64,
        rows: f64,
    },
    Ellipsoid {
        half_width: f64,
        half_depth: f64,
        half_height: f64,
    },
    HumanoidStack {
        levels: Vec<Level>,
    },
}

/// Two vertical circular cylinders beside the widest level, visible only
/// in the back view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arms {
    /// Diameter in px.
    pub width: f64,
    /// Vertical length in rows.
    pub length: f64,
    /// Horizontal clearance between the widest level and each arm.
    #[serde(default = "default_arm_gap")]
    pub gap: f64,
    /// Rows of the rectangular shoulder bar joining each arm to the body at
    /// its top; 0 leaves the arms detached.
    #[serde(default = "default_bridge_rows")]
    pub bridge_rows: f64,
}

fn default_arm_gap() -> f64 {
    12.0
}

fn default_bridge_rows() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

/// Uniform per-channel noise added to a render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noise {
    pub amplitude: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: PhantomShape,
    /// Degrees, counter-clockwise as displayed, about the canvas centre.
    #[serde(default)]
    pub rotation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Arms>,
    pub canvas: Canvas,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub analytic_px3: f64,
    pub voxel_px3: Option<f64>,
    pub rotation: f64,
}

const DEFAULT_CANVAS: Canvas = Canvas {
    width: 600,
    height: 800,
};

impl PhantomSpec {
    pub fn new(shape: PhantomShape) -> Self {
        Self {
            shape,
            rotation: 0.0,
            arms: None,
            canvas: DEFAULT_CANVAS,
            noise: None,
        }
    }

    pub fn elliptic_cylinder(half_width: f64, half_depth: f64, rows: f64) -> Self {
        Self::new(PhantomShape::EllipticCylinder {
            half_width,
            half_depth,
            rows,
        })
    }

    pub fn ellipsoid(half_width: f64, half_depth: f64, half_height: f64) -> Self {
        Self::new(PhantomShape::Ellipsoid {
            half_width,
            half_depth,
            half_height,
        })
    }

    pub fn humanoid_stack(levels: Vec<Level>) -> Self {
        Self::new(PhantomShape::HumanoidStack { levels })
    }

    /// Head, neck, trunk and legs with abducted arms; 600 rows tall.
    pub fn standard_humanoid() -> Self {
        Self::humanoid_stack(vec![
            Level::new("head", 22.0, 24.0, 60.0),
            Level::new("neck", 10.0, 11.0, 25.0),
            Level::new("trunk", 70.0, 45.0, 260.0),
            Level::new("legs", 50.0, 40.0, 255.0),
        ])
        .with_arms(Arms {
            width: 26.0,
            length: 120.0,
            gap: 12.0,
            bridge_rows: 4.0,
        })
    }

    pub fn with_rotation(mut self, degrees: f64) -> Self {
        self.rotation = degrees;
        self
    }

    pub fn with_arms(mut self, arms: Arms) -> Self {
        self.arms = Some(arms);
        self
    }

    pub fn with_canvas(mut self, width: usize, height: usize) -> Self {
        self.canvas = Canvas { width, height };
        self
    }

    pub fn with_noise(mut self, amplitude: u8, seed: u64) -> Self {
        self.noise = Some(Noise { amplitude, seed });
        self
    }

    /// Every length and the canvas multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.shape = match &self.shape {
            PhantomShape::EllipticCylinder {
                half_width,
                half_depth,
                rows,
            } => PhantomShape::EllipticCylinder {
                half_width: half_width * s,
                half_depth: half_depth * s,
                rows: rows * s,
            },
            PhantomShape::Ellipsoid {
                half_width,
                half_depth,
                half_height,
            } => PhantomShape::Ellipsoid {
                half_width: half_width * s,
                half_depth: half_depth * s,
                half_height: half_height * s,
            },
            PhantomShape::HumanoidStack { levels } => PhantomShape::HumanoidStack {
                levels: levels
                    .iter()
                    .map(|l| Level {
                        name: l.name.clone(),
                        half_width: l.half_width * s,
                        half_depth: l.half_depth * s,
                        rows: l.rows * s,
                    })
                    .collect(),
            },
        };
        out.arms = self.arms.map(|a| Arms {
            width: a.width * s,
            length: a.length * s,
            gap: a.gap * s,
            bridge_rows: a.bridge_rows * s,
        });
        out.canvas = Canvas {
            width: (self.canvas.width as f64 * s).round() as usize,
            height: (self.canvas.height as f64 * s).round() as usize,
        };
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn dims(&self) -> Vec<f64> {
        let mut d = match &self.shape {
            PhantomShape::EllipticCylinder {
                half_width,
                half_depth,
                rows,
            } => vec![*half_width, *half_depth, *rows],
            PhantomShape::Ellipsoid {
                half_width,
                half_depth,
                half_height,
            } => vec![*half_width, *half_depth, *half_height],
            PhantomShape::HumanoidStack { levels } => levels
                .iter()
                .flat_map(|l| [l.half_width, l.half_depth, l.rows])
                .collect(),
        };
        if let Some(a) = self.arms {
            d.extend([a.width, a.length]);
        }
        d
    }

    /// Checks that every dimension is positive and both rotated views fit
    /// inside the canvas.
    pub fn validate(&self) -> Result<()> {
        if let PhantomShape::HumanoidStack { levels } = &self.shape {
            if levels.is_empty() {
                return Err(Error::SpecOutOfBounds(
                    "humanoid stack has no levels".into(),
                ));
            }
        }
        if let Some(bad) = self
            .dims()
            .into_iter()
            .find(|d| !(d.is_finite() && *d > 0.0))
        {
            return Err(Error::SpecOutOfBounds(format!(
                "dimensions must be positive, got {bad}"
            )));
        }
        if self
            .arms
            .is_some_and(|a| !(a.gap >= 0.0 && a.bridge_rows >= 0.0 && a.bridge_rows <= a.length))
        {
            return Err(Error::SpecOutOfBounds(
                "arm gap and bridge rows must be non-negative, bridge no longer than the arm"
                    .into(),
            ));
        }
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(Error::SpecOutOfBounds("canvas must be non-empty".into()));
        }
        let g = Geometry::new(self);
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        let (sin, cos) = (sin.abs(), cos.abs());
        // Body box relative to the canvas centre, rotated.
        let dy_top = g.top - self.canvas.height as f64 / 2.0;
        let dy_bottom = dy_top + g.height;
        let half_h = dy_top.abs().max(dy_bottom.abs());
        for (view, half_w) in [
            ("back", g.back_half_extent()),
            ("side", g.side_half_extent()),
        ] {
            let need_x = half_w * cos + half_h * sin;
            let need_y = half_w * sin + half_h * cos;
            if need_x > self.canvas.width as f64 / 2.0 || need_y > self.canvas.height as f64 / 2.0 {
                return Err(Error::SpecOutOfBounds(format!(
                    "{view} view needs {:.1}x{:.1} px around the centre, canvas is {}x{}",
                    2.0 * need_x,
                    2.0 * need_y,
                    self.canvas.width,
                    self.canvas.height
                )));
            }
        }
        Ok(())
    }
}

/// Resolved placement of a phantom: vertical extent and arm position.
#[derive(Debug, Clone)]
struct Geometry {
    shape: PhantomShape,
    arms: Option<Arms>,
    /// Continuous y of the body's top edge on the canvas.
    top: f64,
    height: f64,
    /// Level start offsets from the top (humanoid only).
    starts: Vec<f64>,
    arm_offset: f64,
    arm_top: f64,
    widest_half: f64,
}

impl Geometry {
    fn new(spec: &PhantomSpec) -> Self {
        let mut starts = Vec::new();
        let (height, widest_half, widest_top, widest_rows) = match &spec.shape {
            PhantomShape::EllipticCylinder {
                half_width, rows, ..
            } => (*rows, *half_width, 0.0, *rows),
            PhantomShape::Ellipsoid {
                half_width,
                half_height,
                ..
            } => (2.0 * half_height, *half_width, 0.0, 2.0 * half_height),
            PhantomShape::HumanoidStack { levels } => {
                let mut t = 0.0;
                let mut widest = (0.0f64, 0.0, 0.0);
                for l in levels {
                    starts.push(t);
                    if l.half_width > widest.0 {
                        widest = (l.half_width, t, l.rows);
                    }
                    t += l.rows;
                }
                (t, widest.0, widest.1, widest.2)
            }
        };
        let (arm_offset, arm_top) = match (&spec.shape, spec.arms) {
            (_, None) => (0.0, 0.0),
            (PhantomShape::HumanoidStack { .. }, Some(a)) => {
                (widest_half + a.gap + a.width / 2.0, widest_top)
            }
            (_, Some(a)) => (
                widest_half + a.gap + a.width / 2.0,
                ((widest_rows - a.length) / 2.0).max(0.0),
            ),
        };
        Self {
            shape: spec.shape.clone(),
            arms: spec.arms,
            top: ((spec.canvas.height as f64 - height) / 2.0).round(),
            height,
            starts,
            arm_offset,
            arm_top,
            widest_half,
        }
    }

    fn back_half_extent(&self) -> f64 {
        let body = self.max_half(|l| l.half_width, true);
        match self.arms {
            Some(a) => body.max(self.arm_offset + a.width / 2.0),
            None => body,
        }
    }

    fn side_half_extent(&self) -> f64 {
        let body = self.max_half(|l| l.half_depth, false);
        match self.arms {
            Some(a) => body.max(a.width / 2.0),
            None => body,
        }
    }

    fn max_half(&self, pick: impl Fn(&Level) -> f64, back: bool) -> f64 {
        match &self.shape {
            PhantomShape::EllipticCylinder {
                half_width,
                half_depth,
                ..
            }
            | PhantomShape::Ellipsoid {
                half_width,
                half_depth,
                ..
            } => {
                if back {
                    *half_width
                } else {
                    *half_depth
                }
            }
            PhantomShape::HumanoidStack { levels } => levels.iter().map(pick).fold(0.0, f64::max),
        }
    }

    /// Body cross-section semi-axes (half width, half depth) at height `t`
    /// below the top, or `None` outside the body. For the ellipsoid these
    /// are the semi-axes of the horizontal slice.
    fn section(&self, t: f64) -> Option<(f64, f64)> {
        if !(t >= 0.0 && t < self.height) {
            return None;
        }
        match &self.shape {
            PhantomShape::EllipticCylinder {
                half_width,
                half_depth,
                ..
            } => Some((*half_width, *half_depth)),
            PhantomShape::Ellipsoid {
                half_width,
                half_depth,
                half_height,
            } => {
                let s = (t - half_height) / half_height;
                let k = 1.0 - s * s;
                (k >= 0.0).then(|| {
                    let r = k.sqrt();
                    (half_width * r, half_depth * r)
                })
            }
            PhantomShape::HumanoidStack { levels } => {
                let i = self.level_index(t)?;
                Some((levels[i].half_width, levels[i].half_depth))
            }
        }
    }

    fn level_index(&self, t: f64) -> Option<usize> {
        let PhantomShape::HumanoidStack { levels } = &self.shape else {
            return None;
        };
        self.starts
            .iter()
            .zip(levels)
            .position(|(&s, l)| t >= s && t < s + l.rows)
    }

    fn arm_active(&self, t: f64) -> bool {
        self.arms
            .is_some_and(|a| t >= self.arm_top && t < self.arm_top + a.length)
    }

    fn bridge_active(&self, t: f64) -> bool {
        self.arms
            .is_some_and(|a| t >= self.arm_top && t < self.arm_top + a.bridge_rows)
    }

    /// Shoulder bar spans `|u|` from the widest level's edge to the arm's
    /// inner edge.
    fn in_bridge_u(&self, u: f64) -> bool {
        self.arms.is_some_and(|a| {
            let au = u.abs();
            au >= self.widest_half && au <= self.widest_half + a.gap
        })
    }

    fn in_back(&self, u: f64, t: f64) -> bool {
        if let Some((hw, _)) = self.section(t) {
            if u.abs() <= hw {
                return true;
            }
        }
        if self.bridge_active(t) && self.in_bridge_u(u) {
            return true;
        }
        match self.arms {
            Some(a) if self.arm_active(t) => (u.abs() - self.arm_offset).abs() <= a.width / 2.0,
            _ => false,
        }
    }

    fn in_side(&self, v: f64, t: f64) -> bool {
        self.section(t).is_some_and(|(_, hd)| v.abs() <= hd)
    }

    fn in_solid(&self, u: f64, v: f64, t: f64) -> bool {
        if let Some((hw, hd)) = self.section(t) {
            if hw > 0.0 && hd > 0.0 && (u / hw).powi(2) + (v / hd).powi(2) <= 1.0 {
                return true;
            }
        }
        match self.arms {
            Some(a) if self.bridge_active(t) && self.in_bridge_u(u) && v.abs() <= a.width / 2.0 => {
                true
            }
            Some(a) if self.arm_active(t) => {
                let du = u.abs() - self.arm_offset;
                du * du + v * v <= (a.width / 2.0).powi(2)
            }
            _ => false,
        }
    }
}

fn render_mask(
    spec: &PhantomSpec,
    g: &Geometry,
    inside: impl Fn(f64, f64) -> bool + Sync,
) -> BodyMask {
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = spec.rotation.to_radians().sin_cos();
    let bits: Vec<bool> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let inside = &inside;
            (0..w).map(move |x| {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                // Inverse rotation back into the upright body frame.
                let ux = cos * dx - sin * dy;
                let uy = sin * dx + cos * dy;
                inside(ux, uy + cy - g.top)
            })
        })
        .collect();
    BodyMask::from_bits(w, h, bits).expect("canvas dimensions")
}

/// Ground-truth body regions of the back and side renders.
pub fn render_masks(spec: &PhantomSpec) -> Result<(BodyMask, BodyMask)> {
    spec.validate()?;
    let g = Geometry::new(spec);
    let back = render_mask(spec, &g, |u, t| g.in_back(u, t));
    let side = render_mask(spec, &g, |v, t| g.in_side(v, t));
    Ok((back, side))
}

pub fn paint(mask: &BodyMask) -> RasterImage {
    let pixels = mask
        .bits()
        .iter()
        .map(|&b| if b { BODY_RGB } else { BACKGROUND_RGB })
        .collect();
    RasterImage::new(mask.width(), mask.height(), pixels).expect("mask dimensions")
}

/// Adds independent uniform integer noise in `[−amplitude, amplitude]` to
/// every channel, clamped to `[0, 255]`.
pub fn add_noise(image: &mut RasterImage, amplitude: u8, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = i16::from(amplitude);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let px = image.get(x, y).map(|c| {
                let n: i16 = rng.gen_range(-amp..=amp);
                (i16::from(c) + n).clamp(0, 255) as u8
            });
            image.set(x, y, px);
        }
    }
}

/// Renders the back and side views as flat red on flat green, rotated
/// about the canvas centre, with optional noise.
pub fn render_phantom(spec: &PhantomSpec) -> Result<(RasterImage, RasterImage)> {
    let (back, side) = render_masks(spec)?;
    let mut back = paint(&back);
    let mut side = paint(&side);
    if let Some(n) = spec.noise {
        add_noise(&mut back, n.amplitude, n.seed);
        add_noise(&mut side, n.amplitude, n.seed.wrapping_add(1));
    }
    Ok((back, side))
}

/// Closed-form volume of the phantom, in px³.
pub fn analytic_volume(spec: &PhantomSpec) -> f64 {
    let body = match &spec.shape {
        PhantomShape::EllipticCylinder {
            half_width,
            half_depth,
            rows,
        } => PI * half_width * half_depth * rows,
        PhantomShape::Ellipsoid {
            half_width,
            half_depth,
            half_height,
        } => 4.0 / 3.0 * PI * half_width * half_depth * half_height,
        PhantomShape::HumanoidStack { levels } => levels
            .iter()
            .map(|l| PI * l.half_width * l.half_depth * l.rows)
            .sum(),
    };
    let arms = spec.arms.map_or(0.0, |a| {
        2.0 * PI * (a.width / 2.0).powi(2) * a.length + 2.0 * a.gap * a.width * a.bridge_rows
    });
    body + arms
}

/// Brute-force volume: counts sub-voxel centres inside the solid on a grid
/// of `resolution` subdivisions per pixel, divided by `resolution³`.
/// Rotation is ignored.
pub fn voxel_volume(spec: &PhantomSpec, resolution: usize) -> f64 {
    let r = resolution.max(1);
    let rf = r as f64;
    let g = Geometry::new(spec);
    let u_half = g.back_half_extent().ceil() + 1.0;
    let v_half = g.side_half_extent().ceil() + 1.0;
    let nu = (2.0 * u_half * rf) as usize;
    let nv = (2.0 * v_half * rf) as usize;
    let nt = (g.height * rf).ceil() as usize;

    let count_layer = |t: f64| -> u64 {
        let mut n = 0u64;
        for i in 0..nv {
            let v = -v_half + (i as f64 + 0.5) / rf;
            for j in 0..nu {
                let u = -u_half + (j as f64 + 0.5) / rf;
                if g.in_solid(u, v, t) {
                    n += 1;
                }
            }
        }
        n
    };

    let total: u64 = match &spec.shape {
        PhantomShape::Ellipsoid { .. } => (0..nt)
            .into_par_iter()
            .map(|k| count_layer((k as f64 + 0.5) / rf))
            .sum(),
        // Layers of a level stack repeat; count each distinct cross-section once.
        _ => {
            let mut cache: HashMap<(Option<usize>, bool, bool), u64> = HashMap::new();
            let mut total = 0u64;
            for k in 0..nt {
                let t = (k as f64 + 0.5) / rf;
                let key = (
                    g.level_index(t).or_else(|| g.section(t).map(|_| 0)),
                    g.arm_active(t),
                    g.bridge_active(t),
                );
                total += *cache.entry(key).or_insert_with(|| count_layer(t));
            }
            total
        }
    };
    total as f64 / (rf * rf * rf)
}

pub fn truth(spec: &PhantomSpec, voxel_resolution: Option<usize>) -> PhantomTruth {
    PhantomTruth {
        analytic_px3: analytic_volume(spec),
        voxel_px3: voxel_resolution.map(|r| voxel_volume(spec, r)),
        rotation: spec.rotation,
    }
}
