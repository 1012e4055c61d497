//! DCT-II features: transform, inverse and low-frequency coefficient scans.

mod dct;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

pub use dct::{dct2, dct2_rect, idct2, DctCoefficients};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("DCT input must be square, got {width}x{height}")]
    NotSquare { width: usize, height: usize },
    #[error("requested {requested} coefficients but only {available} exist")]
    TooManyCoefficients { requested: usize, available: usize },
    #[error("coefficient count must be positive")]
    ZeroCount,
    #[error("bad coefficient shape: {0}")]
    Shape(String),
    #[error("non-finite coefficient")]
    NonFinite,
}

/// Coefficient scan defining which components come "first".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanOrder {
    /// JPEG zigzag from the DC term.
    #[default]
    Zigzag,
    /// Row-major.
    Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    order: ScanOrder,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, order: ScanOrder) -> Self {
        Self { values, order }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn order(&self) -> ScanOrder {
        self.order
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values, ScanOrder::Zigzag)
    }
}

/// `(row, col)` visiting order for a `height x width` matrix.
pub fn scan_positions(width: usize, height: usize, order: ScanOrder) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(width * height);
    match order {
        ScanOrder::Raster => {
            for r in 0..height {
                for c in 0..width {
                    out.push((r, c));
                }
            }
        }
        ScanOrder::Zigzag => {
            for s in 0..(width + height - 1) {
                let r_lo = s.saturating_sub(width - 1);
                let r_hi = s.min(height - 1);
                if s % 2 == 0 {
                    // up and to the right
                    for r in (r_lo..=r_hi).rev() {
                        out.push((r, s - r));
                    }
                } else {
                    for r in r_lo..=r_hi {
                        out.push((r, s - r));
                    }
                }
            }
        }
    }
    out
}

pub fn zigzag_select(
    coeffs: &DctCoefficients,
    count: usize,
) -> Result<FeatureVector, FeatureError> {
    select_coefficients(coeffs, count, ScanOrder::Zigzag)
}

pub fn select_coefficients(
    coeffs: &DctCoefficients,
    count: usize,
    order: ScanOrder,
) -> Result<FeatureVector, FeatureError> {
    let available = coeffs.width() * coeffs.height();
    if count == 0 {
        return Err(FeatureError::ZeroCount);
    }
    if count > available {
        return Err(FeatureError::TooManyCoefficients {
            requested: count,
            available,
        });
    }
    let values = scan_positions(coeffs.width(), coeffs.height(), order)
        .into_iter()
        .take(count)
        .map(|(r, c)| coeffs.at(r, c))
        .collect();
    Ok(FeatureVector::new(values, order))
}

/// DCT of a region image followed by the first `count` coefficients in `order`.
pub fn extract_features(
    image: &GrayImage,
    count: usize,
    order: ScanOrder,
) -> Result<FeatureVector, FeatureError> {
    select_coefficients(&dct2_rect(image), count, order)
}
