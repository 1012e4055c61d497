//! Simplex-search registration of a VIS mask onto a thermal frame.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::otsu::{binarize, otsu_threshold, Polarity};
use super::simplex::{minimize, SimplexConfig};
use super::transform::{apply_similarity, raster_center, wrap_angle, SimilarityTransform};
use super::SegmentationError;
use crate::image::{BinaryMask, GrayImage};

/// Loss minimized over similarity transforms; receives the VIS mask already
/// warped into the thermal raster.
pub trait RegistrationObjective: Sync {
    fn loss(&self, warped: &BinaryMask) -> f64;
}

/// `1 - Dice(warped, target)`.
#[derive(Debug, Clone)]
pub struct DiceLoss {
    target: BinaryMask,
    target_count: usize,
}

impl DiceLoss {
    pub fn new(target: BinaryMask) -> Self {
        let target_count = target.count();
        Self {
            target,
            target_count,
        }
    }

    pub fn target(&self) -> &BinaryMask {
        &self.target
    }
}

impl RegistrationObjective for DiceLoss {
    fn loss(&self, warped: &BinaryMask) -> f64 {
        let total = warped.count() + self.target_count;
        if total == 0 {
            return 0.0;
        }
        let inter = warped
            .overlap(&self.target)
            .expect("warped into target raster");
        1.0 - 2.0 * inter as f64 / total as f64
    }
}

/// Negative mean thermal intensity under the warped mask.
#[derive(Debug, Clone)]
pub struct MeanIntensityLoss {
    pub image: GrayImage,
}

impl RegistrationObjective for MeanIntensityLoss {
    fn loss(&self, warped: &BinaryMask) -> f64 {
        let (sum, n) = warped
            .data()
            .iter()
            .zip(self.image.data())
            .filter(|(m, _)| **m)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            -sum / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub simplex: SimplexConfig,
    /// Initial simplex edges: rotation (rad), dx (px), dy (px), scale (ratio).
    pub initial_steps: [f64; 4],
    /// Also try a start point from matching centroid, orientation and area.
    pub moment_seed: bool,
    pub bins: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            simplex: SimplexConfig::default(),
            initial_steps: [0.035, 2.0, 2.0, 0.02],
            moment_seed: true,
            bins: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Search space: rotation (rad), translation / raster width, log-scale.
struct Parametrization {
    width: f64,
}

impl Parametrization {
    fn encode(&self, t: &SimilarityTransform) -> [f64; 4] {
        [
            t.rotation(),
            t.dx() / self.width,
            t.dy() / self.width,
            t.scale().ln(),
        ]
    }

    fn decode(&self, p: &[f64]) -> Option<SimilarityTransform> {
        SimilarityTransform::new(p[0], p[1] * self.width, p[2] * self.width, p[3].exp()).ok()
    }
}

/// Registers `vis_mask` onto the Otsu-binarized warm region of `th_image`
/// by minimizing `1 - Dice`.
pub fn register_masks(
    vis_mask: &BinaryMask,
    th_image: &GrayImage,
    init: &SimilarityTransform,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, SegmentationError> {
    let otsu = otsu_threshold(th_image, config.bins)?;
    if otsu.degenerate {
        return Err(SegmentationError::DegenerateTarget);
    }
    let target = binarize(th_image, otsu.level, Polarity::HandAbove);
    if target.count() == 0 {
        return Err(SegmentationError::DegenerateTarget);
    }
    let seed = if config.moment_seed {
        moment_seed(vis_mask, &target)
    } else {
        None
    };
    let objective = DiceLoss::new(target);
    register_with(
        vis_mask,
        th_image.width(),
        th_image.height(),
        &objective,
        init,
        seed,
        config,
    )
}

/// Generic registration against any objective. `seed`, when given, is used
/// as the start point instead of `init` if it scores strictly better.
pub fn register_with<O: RegistrationObjective + ?Sized>(
    vis_mask: &BinaryMask,
    out_width: usize,
    out_height: usize,
    objective: &O,
    init: &SimilarityTransform,
    seed: Option<SimilarityTransform>,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, SegmentationError> {
    if vis_mask.count() == 0 {
        return Err(SegmentationError::EmptyMask);
    }
    let param = Parametrization {
        width: out_width as f64,
    };
    let eval = |t: &SimilarityTransform| {
        objective.loss(&apply_similarity(vis_mask, t, out_width, out_height))
    };

    let init_value = eval(init);
    if !init_value.is_finite() {
        return Err(SegmentationError::NonFiniteObjective);
    }
    let mut start = *init;
    let mut start_value = init_value;
    if let Some(s) = seed {
        let v = eval(&s);
        if v.is_finite() && v < start_value {
            start = s;
            start_value = v;
        }
    }

    let [rot, dx, dy, sc] = config.initial_steps;
    let steps = [rot, dx / param.width, dy / param.width, (1.0 + sc).ln()];
    let mut non_finite = false;
    let outcome = minimize(
        |p| match param.decode(p) {
            Some(t) => {
                let v = eval(&t);
                if v.is_finite() {
                    v
                } else {
                    non_finite = true;
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        },
        &param.encode(&start),
        &steps,
        &config.simplex,
    );
    if non_finite {
        return Err(SegmentationError::NonFiniteObjective);
    }
    let (transform, objective_value) = match param.decode(&outcome.point) {
        Some(t) if outcome.value <= start_value => (t, outcome.value),
        _ => (start, start_value),
    };
    Ok(RegistrationResult {
        transform,
        objective_value,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Centroid, principal orientation (rad, modulo pi) and area of a mask.
pub(crate) fn mask_moments(mask: &BinaryMask) -> Option<((f64, f64), f64, f64)> {
    let mut n = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                n += 1.0;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    if n < 3.0 {
        return None;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                cxx += dx * dx;
                cyy += dy * dy;
                cxy += dx * dy;
            }
        }
    }
    let angle = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    Some(((mx, my), angle, n))
}

/// Start point that maps the source centroid, orientation and area onto the target's.
pub fn moment_seed(source: &BinaryMask, target: &BinaryMask) -> Option<SimilarityTransform> {
    let ((sx, sy), sa, sn) = mask_moments(source)?;
    let ((tx, ty), ta, tn) = mask_moments(target)?;
    let mut rot = wrap_angle(ta - sa);
    if rot > FRAC_PI_2 {
        rot -= std::f64::consts::PI;
    } else if rot <= -FRAC_PI_2 {
        rot += std::f64::consts::PI;
    }
    let scale = (tn / sn).sqrt();
    let center = raster_center(source.width(), source.height());
    let probe = SimilarityTransform::new(rot, 0.0, 0.0, scale).ok()?;
    let (px, py) = probe.apply((sx, sy), center);
    SimilarityTransform::new(rot, tx - px, ty - py, scale).ok()
}
