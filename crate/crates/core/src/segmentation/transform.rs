use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SegmentationError;
use crate::image::BinaryMask;

/// Rotation + isotropic scale + translation mapping VIS pixels to TH pixels.
///
/// A source point `p` maps to `c + scale * R(rotation) * (p - c) + (dx, dy)`
/// where `c` is the center of the source raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    rotation: f64,
    dx: f64,
    dy: f64,
    scale: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl SimilarityTransform {
    pub fn new(rotation: f64, dx: f64, dy: f64, scale: f64) -> Result<Self, SegmentationError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(SegmentationError::InvalidTransform(format!(
                "scale {scale} must be finite and > 0"
            )));
        }
        if !(rotation.is_finite() && dx.is_finite() && dy.is_finite()) {
            return Err(SegmentationError::InvalidTransform(
                "non-finite parameter".into(),
            ));
        }
        Ok(Self {
            rotation: wrap_angle(rotation),
            dx,
            dy,
            scale,
        })
    }

    pub const fn identity() -> Self {
        Self {
            rotation: 0.0,
            dx: 0.0,
            dy: 0.0,
            scale: 1.0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            rotation: 0.0,
            dx,
            dy,
            scale: 1.0,
        }
    }

    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Forward map of a point about `center`.
    pub fn apply(&self, (x, y): (f64, f64), (cx, cy): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (px, py) = (x - cx, y - cy);
        (
            cx + self.scale * (c * px - s * py) + self.dx,
            cy + self.scale * (s * px + c * py) + self.dy,
        )
    }

    /// Inverse map of a point about `center`.
    pub fn invert_point(&self, (x, y): (f64, f64), (cx, cy): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (px, py) = (
            (x - cx - self.dx) / self.scale,
            (y - cy - self.dy) / self.scale,
        );
        (cx + c * px + s * py, cy - s * px + c * py)
    }

    /// Inverse transform, valid when source and target rasters share a center.
    pub fn inverse(&self) -> Self {
        let (s, c) = self.rotation.sin_cos();
        // t' = -(1/s) R(-θ) t
        let tx = -(c * self.dx + s * self.dy) / self.scale;
        let ty = -(-s * self.dx + c * self.dy) / self.scale;
        Self {
            rotation: wrap_angle(-self.rotation),
            dx: tx,
            dy: ty,
            scale: 1.0 / self.scale,
        }
    }
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Text record: `rotation_rad dx dy scale` on one line; `#` lines are comments.
impl fmt::Display for SimilarityTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# rotation_rad dx dy scale")?;
        writeln!(
            f,
            "{} {} {} {}",
            self.rotation, self.dx, self.dy, self.scale
        )
    }
}

impl FromStr for SimilarityTransform {
    type Err = SegmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let line = s
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| SegmentationError::InvalidTransform("empty transform record".into()))?;
        let fields: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SegmentationError::InvalidTransform(format!("bad number: {e}")))?;
        match fields[..] {
            [r, dx, dy, sc] => SimilarityTransform::new(r, dx, dy, sc),
            _ => Err(SegmentationError::InvalidTransform(format!(
                "expected 4 fields, found {}",
                fields.len()
            ))),
        }
    }
}

pub fn raster_center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Nearest-neighbour warp of a mask into an `out_width x out_height` raster.
/// Output pixels whose pre-image falls outside the source are background.
pub fn apply_similarity(
    mask: &BinaryMask,
    t: &SimilarityTransform,
    out_width: usize,
    out_height: usize,
) -> BinaryMask {
    let center = raster_center(mask.width(), mask.height());
    let (s, c) = t.rotation.sin_cos();
    let inv_scale = 1.0 / t.scale;
    let (cx, cy) = center;
    let mut data = Vec::with_capacity(out_width * out_height);
    for y in 0..out_height {
        let qy = (y as f64 - cy - t.dy) * inv_scale;
        for x in 0..out_width {
            let qx = (x as f64 - cx - t.dx) * inv_scale;
            let sx = cx + c * qx + s * qy;
            let sy = cy - s * qx + c * qy;
            data.push(mask.get_or_false((sx + 0.5).floor() as isize, (sy + 0.5).floor() as isize));
        }
    }
    BinaryMask::new(out_width, out_height, data).expect("output dimensions are positive")
}
