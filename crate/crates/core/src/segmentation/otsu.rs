use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::SegmentationError;
use crate::image::{BinaryMask, GrayImage};

/// Result of Otsu threshold selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    /// Intensity level; pixels strictly above it form the upper class.
    pub level: f64,
    /// Last bin of the lower class, `None` when no split exists.
    pub split_bin: Option<usize>,
    /// Set when the histogram has no two-class split with positive variance.
    pub degenerate: bool,
}

/// Which side of the threshold is labeled as hand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    HandAbove,
    HandBelow,
}

/// Bin `b` covers `(b/bins, (b+1)/bins]`; zero and below land in bin 0.
///
/// With this convention a split after bin `t` is reproduced exactly by the
/// comparison `v > (t+1)/bins`.
#[inline]
pub fn bin_index(v: f64, bins: usize) -> usize {
    let scaled = (v * bins as f64).ceil();
    if scaled <= 1.0 {
        0
    } else {
        ((scaled as usize) - 1).min(bins - 1)
    }
}

pub fn histogram(image: &GrayImage, bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins];
    for &v in image.data() {
        hist[bin_index(v, bins)] += 1;
    }
    hist
}

/// Split index `t` (lower class = bins `0..=t`) maximizing the between-class
/// variance. The comparison is exact: the variance of split `t` is
/// proportional to `(n0*s1 - n1*s0)^2 / (n0*n1)` with integer counts and
/// bin-index sums, so ties are real ties and the lowest `t` wins.
pub fn otsu_split(hist: &[u64]) -> Option<usize> {
    let total_n: u128 = hist.iter().map(|&c| c as u128).sum();
    let total_s: u128 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| b as u128 * c as u128)
        .sum();
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    let mut best: Option<(usize, u128, u128)> = None;
    for (t, &c) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
        n0 += c as u128;
        s0 += t as u128 * c as u128;
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = n0 * s1 - n1 * s0;
        if diff == 0 {
            continue;
        }
        let num = diff * diff;
        let den = n0 * n1;
        match best {
            Some((_, bn, bd)) if cmp_fraction(num, den, bn, bd) != Ordering::Greater => {}
            _ => best = Some((t, num, den)),
        }
    }
    best.map(|(t, _, _)| t)
}

/// Exact comparison of `an/ad` against `bn/bd` by continued-fraction expansion.
fn cmp_fraction(mut an: u128, mut ad: u128, mut bn: u128, mut bd: u128) -> Ordering {
    loop {
        let (aq, ar) = (an / ad, an % ad);
        let (bq, br) = (bn / bd, bn % bd);
        if aq != bq {
            return aq.cmp(&bq);
        }
        match (ar == 0, br == 0) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            // ar/ad < br/bd  <=>  bd/br < ad/ar
            (false, false) => (an, ad, bn, bd) = (bd, br, ad, ar),
        }
    }
}

pub fn otsu_threshold(image: &GrayImage, bins: usize) -> Result<OtsuThreshold, SegmentationError> {
    if bins < 2 {
        return Err(SegmentationError::InvalidBins(bins));
    }
    let hist = histogram(image, bins);
    Ok(match otsu_split(&hist) {
        Some(t) => OtsuThreshold {
            level: (t + 1) as f64 / bins as f64,
            split_bin: Some(t),
            degenerate: false,
        },
        None => {
            let data = image.data();
            OtsuThreshold {
                level: data.iter().sum::<f64>() / data.len() as f64,
                split_bin: None,
                degenerate: true,
            }
        }
    })
}

pub fn binarize(image: &GrayImage, threshold: f64, polarity: Polarity) -> BinaryMask {
    let data = image
        .data()
        .iter()
        .map(|&v| match polarity {
            Polarity::HandAbove => v > threshold,
            Polarity::HandBelow => v <= threshold,
        })
        .collect();
    BinaryMask::new(image.width(), image.height(), data)
        .expect("dimensions come from a valid image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 256), 0);
        assert_eq!(bin_index(1.0 / 256.0, 256), 0);
        assert_eq!(bin_index(1.0, 256), 255);
        assert_eq!(bin_index(0.1, 256), 25);
    }

    #[test]
    fn bimodal_threshold_lies_between_modes() {
        let img = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 0.1 } else { 0.9 }).unwrap();
        let t = otsu_threshold(&img, 256).unwrap();
        assert!(!t.degenerate);
        assert!(t.level > 0.1 && t.level < 0.9, "{}", t.level);
        // lowest of the tied splits
        assert_eq!(t.split_bin, Some(25));
        let mask = binarize(&img, t.level, Polarity::HandAbove);
        assert_eq!(mask.count(), 50);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = GrayImage::filled(8, 8, 0.5).unwrap();
        let t = otsu_threshold(&img, 256).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.level, 0.5);
        assert!(matches!(
            otsu_threshold(&img, 1),
            Err(SegmentationError::InvalidBins(1))
        ));
    }

    #[test]
    fn binarize_rules() {
        let img = GrayImage::new(2, 1, vec![0.2, 0.8]).unwrap();
        assert_eq!(
            binarize(&img, 0.5, Polarity::HandAbove).data(),
            &[false, true]
        );
        assert_eq!(
            binarize(&img, 0.5, Polarity::HandBelow).data(),
            &[true, false]
        );
        let pos = GrayImage::from_fn(4, 4, |x, y| (1 + x + 4 * y) as f64 / 16.0).unwrap();
        assert_eq!(binarize(&pos, 0.0, Polarity::HandAbove).count(), 16);
        assert_eq!(binarize(&pos, 1.0, Polarity::HandAbove).count(), 0);
    }

    #[test]
    fn fraction_comparison() {
        assert_eq!(cmp_fraction(1, 3, 2, 6), Ordering::Equal);
        assert_eq!(cmp_fraction(7, 5, 10, 7), Ordering::Less);
        assert_eq!(
            cmp_fraction(u128::MAX / 3, u128::MAX / 7, 2, 1),
            Ordering::Greater
        );
    }
}
