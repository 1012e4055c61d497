//! Hand normalization and the three analysis regions: index finger,
//! central hand zone and the whole normalized hand.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, GrayImage, ImageError};

/// Fewest hand pixels accepted by [`normalize_hand`].
pub const MIN_MASK_PIXELS: usize = 100;
/// Relative eigenvalue gap below which the principal axis is undefined.
pub const ISOTROPY_LIMIT: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("mask has {0} hand pixels, need at least {MIN_MASK_PIXELS}")]
    MaskTooSmall(usize),
    #[error("mask is isotropic (eigenvalue gap {gap:.4}); principal axis undefined")]
    Isotropic { gap: f64 },
    #[error(
        "only {found} finger components separable above the palm; fall back to the whole hand"
    )]
    FingersNotSeparable { found: usize },
    #[error("thumb component is not at either end of the finger row; fall back to the whole hand")]
    ThumbNotAtEnd,
    #[error("invalid region configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl RegionError {
    /// Stable short code for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            RegionError::MaskTooSmall(_) => "mask-too-small",
            RegionError::Isotropic { .. } => "isotropic",
            RegionError::FingersNotSeparable { .. } => "fingers-not-separable",
            RegionError::ThumbNotAtEnd => "thumb-not-at-end",
            RegionError::InvalidConfig(_) => "invalid-config",
            RegionError::Image(_) => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Finger,
    #[serde(rename = "central")]
    CentralZone,
    #[serde(rename = "hand")]
    WholeHand,
}

impl RegionKind {
    pub const ALL: [RegionKind; 3] = [
        RegionKind::Finger,
        RegionKind::CentralZone,
        RegionKind::WholeHand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Finger => "finger",
            RegionKind::CentralZone => "central",
            RegionKind::WholeHand => "hand",
        }
    }
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionKind {
    type Err = RegionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finger" => Ok(RegionKind::Finger),
            "central" => Ok(RegionKind::CentralZone),
            "hand" => Ok(RegionKind::WholeHand),
            other => Err(RegionError::InvalidConfig(format!(
                "unknown region {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub out_size: usize,
    /// Row fractions `[start, end)` of the central zone.
    pub central_rows: (f64, f64),
    /// Column fractions `[start, end)` of the central zone.
    pub central_cols: (f64, f64),
    pub finger_width: usize,
    pub finger_height: usize,
    pub min_fingers: usize,
    /// Zero the background of the normalized image (DCT sees the masked hand).
    /// When false the raw intensities around the hand are kept.
    pub mask_background: bool,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            out_size: 128,
            central_rows: (0.45, 1.0),
            central_cols: (0.2, 0.8),
            finger_width: 32,
            finger_height: 96,
            min_fingers: 4,
            mask_background: true,
        }
    }
}

impl RegionConfig {
    fn validate(&self) -> Result<(), RegionError> {
        let frac_ok = |(a, b): (f64, f64)| (0.0..1.0).contains(&a) && b > a && b <= 1.0;
        if self.out_size < 2 || self.finger_width == 0 || self.finger_height == 0 {
            return Err(RegionError::InvalidConfig("sizes must be positive".into()));
        }
        if !frac_ok(self.central_rows) || !frac_ok(self.central_cols) {
            return Err(RegionError::InvalidConfig(
                "central zone fractions must satisfy 0 <= a < b <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Hand rotated to a vertical principal axis, cropped to its bounding box
/// (padded to a square) and resampled to a fixed size.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHand {
    pub image: GrayImage,
    pub mask: BinaryMask,
    /// Rotation applied to the source, radians in (-pi/2, pi/2].
    pub applied_rotation: f64,
    /// Top-left corner of the crop square in the rotated, centroid-centered frame.
    pub crop_origin: (f64, f64),
    /// Source pixels per output pixel.
    pub scale: f64,
    /// Mask centroid in source coordinates.
    pub centroid: (f64, f64),
}

impl NormalizedHand {
    pub fn size(&self) -> usize {
        self.image.width()
    }

    /// Source coordinates of output pixel center `(x, y)`.
    pub fn source_point(&self, x: f64, y: f64) -> (f64, f64) {
        let rx = self.crop_origin.0 + (x + 0.5) * self.scale;
        let ry = self.crop_origin.1 + (y + 0.5) * self.scale;
        let (s, c) = self.applied_rotation.sin_cos();
        // inverse rotation R(-phi)
        (
            self.centroid.0 + c * rx + s * ry,
            self.centroid.1 - s * rx + c * ry,
        )
    }

    /// Nearest-neighbour resampling of a source-frame label map into the
    /// normalized frame (0 outside the source).
    pub fn warp_labels(&self, labels: &[u8], width: usize, height: usize) -> Vec<u8> {
        let n = self.size();
        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = self.source_point(x as f64, y as f64);
                let (xi, yi) = ((sx + 0.5).floor(), (sy + 0.5).floor());
                let inside =
                    xi >= 0.0 && yi >= 0.0 && (xi as usize) < width && (yi as usize) < height;
                out.push(if inside {
                    labels[yi as usize * width + xi as usize]
                } else {
                    0
                });
            }
        }
        out
    }
}

/// Centroid, covariance `(sxx, sxy, syy)` and pixel count of a mask.
pub fn mask_covariance(mask: &BinaryMask) -> Option<((f64, f64), (f64, f64, f64), usize)> {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                n += 1;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                cxx += dx * dx;
                cxy += dx * dy;
                cyy += dy * dy;
            }
        }
    }
    let nf = n as f64;
    Some(((mx, my), (cxx / nf, cxy / nf, cyy / nf), n))
}

/// Rotation that brings the principal axis of `mask` to the vertical.
pub fn principal_rotation(mask: &BinaryMask) -> Result<f64, RegionError> {
    let (_, (a, b, c), n) = mask_covariance(mask).ok_or(RegionError::MaskTooSmall(0))?;
    if n < MIN_MASK_PIXELS {
        return Err(RegionError::MaskTooSmall(n));
    }
    let half_diff = 0.5 * (a - c);
    let root = (half_diff * half_diff + b * b).sqrt();
    let l1 = 0.5 * (a + c) + root;
    let l2 = 0.5 * (a + c) - root;
    let gap = if l1 > 0.0 { (l1 - l2) / l1 } else { 0.0 };
    if gap < ISOTROPY_LIMIT {
        return Err(RegionError::Isotropic { gap });
    }
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (mut vx, mut vy) = (theta.cos(), theta.sin());
    if vy < 0.0 || (vy == 0.0 && vx < 0.0) {
        vx = -vx;
        vy = -vy;
    }
    let mut phi = vx.atan2(vy);
    if phi <= -std::f64::consts::FRAC_PI_2 {
        phi += std::f64::consts::PI;
    }
    Ok(phi)
}

pub fn normalize_hand(
    image: &GrayImage,
    mask: &BinaryMask,
    out_size: usize,
) -> Result<NormalizedHand, RegionError> {
    normalize_hand_with(
        image,
        mask,
        &RegionConfig {
            out_size,
            ..RegionConfig::default()
        },
    )
}

pub fn normalize_hand_with(
    image: &GrayImage,
    mask: &BinaryMask,
    config: &RegionConfig,
) -> Result<NormalizedHand, RegionError> {
    let out_size = config.out_size;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(ImageError::DimensionMismatch(
            image.width(),
            image.height(),
            mask.width(),
            mask.height(),
        )
        .into());
    }
    if out_size < 2 {
        return Err(RegionError::InvalidConfig(
            "out_size must be at least 2".into(),
        ));
    }
    let phi = principal_rotation(mask)?;
    let ((mx, my), _, _) = mask_covariance(mask).expect("non-empty mask");
    let (s, c) = phi.sin_cos();

    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                let (rx, ry) = (c * dx - s * dy, s * dx + c * dy);
                x0 = x0.min(rx);
                x1 = x1.max(rx);
                y0 = y0.min(ry);
                y1 = y1.max(ry);
            }
        }
    }
    // pixel extents rather than centers
    let side = (x1 - x0).max(y1 - y0) + 1.0;
    let crop_origin = (0.5 * (x0 + x1) - 0.5 * side, 0.5 * (y0 + y1) - 0.5 * side);
    let scale = side / out_size as f64;

    let geometry = NormalizedHand {
        image: GrayImage::filled(1, 1, 0.0)?,
        mask: BinaryMask::filled(1, 1, false)?,
        applied_rotation: phi,
        crop_origin,
        scale,
        centroid: (mx, my),
    };
    let mask_img = mask.to_image();
    let mut pixels = Vec::with_capacity(out_size * out_size);
    let mut hand = Vec::with_capacity(out_size * out_size);
    for y in 0..out_size {
        for x in 0..out_size {
            let (sx, sy) = geometry.source_point(x as f64, y as f64);
            let inside = mask_img.sample_bilinear(sx, sy) >= 0.5;
            hand.push(inside);
            let keep = inside || !config.mask_background;
            pixels.push(if keep {
                image.sample_bilinear(sx, sy)
            } else {
                0.0
            });
        }
    }
    Ok(NormalizedHand {
        image: GrayImage::new(out_size, out_size, pixels)?,
        mask: BinaryMask::new(out_size, out_size, hand)?,
        ..geometry
    })
}

pub fn extract_region(hand: &NormalizedHand, kind: RegionKind) -> Result<GrayImage, RegionError> {
    extract_region_with(hand, kind, &RegionConfig::default())
}

pub fn extract_region_with(
    hand: &NormalizedHand,
    kind: RegionKind,
    config: &RegionConfig,
) -> Result<GrayImage, RegionError> {
    config.validate()?;
    match kind {
        RegionKind::WholeHand => Ok(hand.image.clone()),
        RegionKind::CentralZone => central_zone(&hand.image, config),
        RegionKind::Finger => Ok(index_finger(hand, config)?.image),
    }
}

fn central_zone(image: &GrayImage, config: &RegionConfig) -> Result<GrayImage, RegionError> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let r0 = (config.central_rows.0 * h).round() as usize;
    let r1 = (config.central_rows.1 * h).round() as usize;
    let c0 = (config.central_cols.0 * w).round() as usize;
    let c1 = (config.central_cols.1 * w).round() as usize;
    if r1 <= r0 || c1 <= c0 {
        return Err(RegionError::InvalidConfig(
            "central zone is empty at this size".into(),
        ));
    }
    Ok(image.crop(c0, r0, c1 - c0, r1 - r0)?)
}

/// Index finger crop together with its component in the normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerRegion {
    pub image: GrayImage,
    /// Component pixels in normalized-hand coordinates.
    pub component: BinaryMask,
    /// Palm line: the components were separated using rows `[0, cut_row)`.
    pub cut_row: usize,
    pub finger_count: usize,
}

#[derive(Debug, Clone)]
struct Component {
    pixels: Vec<(usize, usize)>,
    top: usize,
    mean_x: f64,
}

/// 4-connected components of `mask` restricted to rows `[0, rows)`.
fn components_above(mask: &BinaryMask, rows: usize) -> Vec<Component> {
    let w = mask.width();
    let mut seen = vec![false; w * rows];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for y0 in 0..rows {
        for x0 in 0..w {
            if seen[y0 * w + x0] || !mask.get(x0, y0) {
                continue;
            }
            seen[y0 * w + x0] = true;
            stack.push((x0, y0));
            let mut pixels = Vec::new();
            while let Some((x, y)) = stack.pop() {
                pixels.push((x, y));
                let mut visit = |nx: usize, ny: usize| {
                    if ny < rows && nx < w && !seen[ny * w + nx] && mask.get(nx, ny) {
                        seen[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    visit(x - 1, y);
                }
                visit(x + 1, y);
                if y > 0 {
                    visit(x, y - 1);
                }
                visit(x, y + 1);
            }
            let top = pixels.iter().map(|p| p.1).min().unwrap_or(0);
            let mean_x = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / pixels.len() as f64;
            out.push(Component {
                pixels,
                top,
                mean_x,
            });
        }
    }
    out
}

/// Locates the index finger: the palm line is the lowest row above which the
/// largest number of mask components is separable, the thumb is the
/// component whose top is lowest, and the index finger is its neighbour in
/// left-to-right order.
pub fn index_finger(
    hand: &NormalizedHand,
    config: &RegionConfig,
) -> Result<FingerRegion, RegionError> {
    config.validate()?;
    let mask = &hand.mask;
    // components smaller than this are resampling specks, not fingers
    let min_pixels = (mask.width() * mask.height() / 2000).max(4);
    let fingers = |rows: usize| -> Vec<Component> {
        components_above(mask, rows)
            .into_iter()
            .filter(|c| c.pixels.len() >= min_pixels)
            .collect()
    };
    let mut best = (0usize, 0usize);
    for rows in 1..=mask.height() {
        let count = fingers(rows).len();
        if count >= best.0 && count > 0 {
            best = (count, rows);
        }
    }
    let (count, cut_row) = best;
    if count < config.min_fingers {
        return Err(RegionError::FingersNotSeparable { found: count });
    }
    let mut comps = fingers(cut_row);
    comps.sort_by(|a, b| a.mean_x.total_cmp(&b.mean_x));
    let thumb = comps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.top.cmp(&b.1.top).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least min_fingers components");
    let index = if thumb == 0 {
        1
    } else if thumb == comps.len() - 1 {
        comps.len() - 2
    } else {
        return Err(RegionError::ThumbNotAtEnd);
    };
    let comp = &comps[index];
    let (w, h) = (mask.width(), mask.height());
    let mut component = vec![false; w * h];
    for &(x, y) in &comp.pixels {
        component[y * w + x] = true;
    }
    let x0 = comp.pixels.iter().map(|p| p.0).min().unwrap();
    let x1 = comp.pixels.iter().map(|p| p.0).max().unwrap();
    let y0 = comp.top;
    let y1 = comp.pixels.iter().map(|p| p.1).max().unwrap();
    let crop = GrayImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        if component[(y0 + y) * w + x0 + x] {
            hand.image.get(x0 + x, y0 + y)
        } else {
            0.0
        }
    })?;
    Ok(FingerRegion {
        image: crop.resize_bilinear(config.finger_width, config.finger_height)?,
        component: BinaryMask::new(w, h, component)?,
        cut_row,
        finger_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse(w: usize, h: usize, a: f64, b: f64, angle: f64) -> BinaryMask {
        let (s, c) = angle.sin_cos();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // undo the rotation R(angle)
            let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .unwrap()
    }

    #[test]
    fn vertical_ellipse_needs_no_rotation() {
        let m = ellipse(80, 80, 12.0, 30.0, 0.0);
        let n = normalize_hand(&m.to_image(), &m, 64).unwrap();
        assert!(n.applied_rotation.abs() < 1f64.to_radians());
        assert_eq!((n.image.width(), n.image.height()), (64, 64));
    }

    #[test]
    fn rotated_ellipse_is_rotated_back() {
        let m = ellipse(90, 90, 12.0, 30.0, 30f64.to_radians());
        let n = normalize_hand(&m.to_image(), &m, 64).unwrap();
        assert!(
            (n.applied_rotation.to_degrees() + 30.0).abs() < 1.0,
            "{}",
            n.applied_rotation.to_degrees()
        );
    }

    #[test]
    fn small_and_isotropic_masks_fail() {
        let tiny = BinaryMask::from_fn(20, 20, |x, y| x < 5 && y < 5).unwrap();
        assert!(matches!(
            normalize_hand(&tiny.to_image(), &tiny, 32),
            Err(RegionError::MaskTooSmall(25))
        ));
        let disc = ellipse(61, 61, 20.0, 20.0, 0.0);
        let err = normalize_hand(&disc.to_image(), &disc, 32).unwrap_err();
        assert_eq!(err.code(), "isotropic");
    }

    #[test]
    fn whole_hand_is_identity_and_central_zone_has_fixed_size() {
        let m = ellipse(80, 80, 12.0, 30.0, 0.0);
        let n = normalize_hand(&m.to_image(), &m, 128).unwrap();
        assert_eq!(extract_region(&n, RegionKind::WholeHand).unwrap(), n.image);
        let c = extract_region(&n, RegionKind::CentralZone).unwrap();
        assert_eq!((c.width(), c.height()), (76, 70));
    }

    #[test]
    fn ellipse_has_no_fingers() {
        let m = ellipse(80, 80, 12.0, 30.0, 0.0);
        let n = normalize_hand(&m.to_image(), &m, 128).unwrap();
        assert!(matches!(
            extract_region(&n, RegionKind::Finger),
            Err(RegionError::FingersNotSeparable { found: 1 })
        ));
    }

    #[test]
    fn region_names_round_trip() {
        for k in RegionKind::ALL {
            assert_eq!(k.as_str().parse::<RegionKind>().unwrap(), k);
        }
        assert!("palm".parse::<RegionKind>().is_err());
    }
}
