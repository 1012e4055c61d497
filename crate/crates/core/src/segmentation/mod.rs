//! VIS-guided thermal segmentation.
//!
//! The visible frame is binarized with Otsu's method, the resulting mask is
//! carried into thermal coordinates by a similarity transform (either a fixed
//! calibration or one found by [`register_masks`]), and the thermal frame is
//! masked with it. Cold fingers that sit at background temperature are kept
//! because the hand outline comes from the visible frame.

mod otsu;
mod registration;
mod simplex;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{apply_mask, BinaryMask, GrayImage, ImageError};

pub use otsu::{
    bin_index, binarize, histogram, otsu_split, otsu_threshold, OtsuThreshold, Polarity,
};
pub use registration::{
    moment_seed, register_masks, register_with, DiceLoss, MeanIntensityLoss, RegistrationConfig,
    RegistrationObjective, RegistrationResult,
};
pub use simplex::{minimize, SimplexConfig, SimplexOutcome};
pub use transform::{apply_similarity, raster_center, wrap_angle, SimilarityTransform};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("histogram needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("invalid similarity transform: {0}")]
    InvalidTransform(String),
    #[error("thermal image has no two-class split; registration undefined")]
    DegenerateTarget,
    #[error("source mask has no hand pixels")]
    EmptyMask,
    #[error("registration objective is not finite")]
    NonFiniteObjective,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub bins: usize,
    pub polarity: Polarity,
    /// Replaces the Otsu level on the VIS frame when set.
    pub manual_threshold: Option<f64>,
    /// One 3x3 majority pass over the VIS mask before transfer.
    pub majority_filter: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            bins: 256,
            polarity: Polarity::HandAbove,
            manual_threshold: None,
            majority_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSegmentation {
    pub vis_mask: BinaryMask,
    pub th_mask: BinaryMask,
    pub masked_th: GrayImage,
}

/// Binarizes the VIS frame according to `config`.
pub fn segment_visible(
    vis: &GrayImage,
    config: &SegmentConfig,
) -> Result<BinaryMask, SegmentationError> {
    let level = match config.manual_threshold {
        Some(level) => level,
        None => otsu_threshold(vis, config.bins)?.level,
    };
    let mask = binarize(vis, level, config.polarity);
    Ok(if config.majority_filter {
        mask.majority_filter()
    } else {
        mask
    })
}

pub fn segment_thermal(
    vis: &GrayImage,
    th: &GrayImage,
    t: &SimilarityTransform,
) -> Result<ThermalSegmentation, SegmentationError> {
    segment_thermal_with(vis, th, t, &SegmentConfig::default())
}

pub fn segment_thermal_with(
    vis: &GrayImage,
    th: &GrayImage,
    t: &SimilarityTransform,
    config: &SegmentConfig,
) -> Result<ThermalSegmentation, SegmentationError> {
    let vis_mask = segment_visible(vis, config)?;
    let th_mask = apply_similarity(&vis_mask, t, th.width(), th.height());
    let masked_th = apply_mask(th, &th_mask)?;
    Ok(ThermalSegmentation {
        vis_mask,
        th_mask,
        masked_th,
    })
}

/// Baseline that thresholds the thermal frame directly (loses cold fingers).
pub fn segment_thermal_direct(
    th: &GrayImage,
    bins: usize,
) -> Result<BinaryMask, SegmentationError> {
    let t = otsu_threshold(th, bins)?;
    Ok(binarize(th, t.level, Polarity::HandAbove))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_composition_matches_direct_masking() {
        let img = GrayImage::from_fn(40, 30, |x, y| {
            let inside =
                (x as f64 - 20.0).powi(2) / 150.0 + (y as f64 - 15.0).powi(2) / 60.0 <= 1.0;
            if inside {
                0.7 + 0.001 * x as f64
            } else {
                0.1 + 0.001 * y as f64
            }
        })
        .unwrap();
        let cfg = SegmentConfig {
            majority_filter: false,
            ..Default::default()
        };
        let seg = segment_thermal_with(&img, &img, &SimilarityTransform::identity(), &cfg).unwrap();
        let level = otsu_threshold(&img, 256).unwrap().level;
        let expect = apply_mask(&img, &binarize(&img, level, Polarity::HandAbove)).unwrap();
        assert_eq!(seg.masked_th, expect);
    }

    #[test]
    fn manual_threshold_overrides_otsu() {
        let img = GrayImage::new(3, 1, vec![0.1, 0.5, 0.9]).unwrap();
        let cfg = SegmentConfig {
            manual_threshold: Some(0.7),
            majority_filter: false,
            ..Default::default()
        };
        assert_eq!(
            segment_visible(&img, &cfg).unwrap().data(),
            &[false, false, true]
        );
    }
}
