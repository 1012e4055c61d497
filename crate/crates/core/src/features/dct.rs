use std::f64::consts::PI;

use super::FeatureError;
use crate::image::GrayImage;

/// Orthonormal 2D DCT-II coefficients.
///
/// Stored row-major: row `v` is the vertical frequency (pairs with image
/// rows `y`), column `u` the horizontal frequency (pairs with image columns `x`).
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DctCoefficients {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(FeatureError::Shape(format!(
                "{width}x{height} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds from matrix rows `[v][u]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(FeatureError::Shape("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Transform size for square blocks.
    pub fn n(&self) -> Option<usize> {
        (self.width == self.height).then_some(self.width)
    }

    /// Coefficient at horizontal frequency `u`, vertical frequency `v`.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Entry at matrix position `(row, col)`.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum()
    }
}

/// `basis[k][n] = alpha(k) * cos(pi * (2n + 1) * k / 2N)`, flattened row-major.
fn basis(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let a0 = (1.0 / nf).sqrt();
    let ak = (2.0 / nf).sqrt();
    let mut b = Vec::with_capacity(n * n);
    for k in 0..n {
        let alpha = if k == 0 { a0 } else { ak };
        for i in 0..n {
            b.push(alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos());
        }
    }
    b
}

/// Square DCT-II; rejects non-square input.
pub fn dct2(image: &GrayImage) -> Result<DctCoefficients, FeatureError> {
    if image.width() != image.height() {
        return Err(FeatureError::NotSquare {
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(dct2_rect(image))
}

/// Separable DCT-II for any `W x H` raster (per-axis normalization).
pub fn dct2_rect(image: &GrayImage) -> DctCoefficients {
    let (w, h) = (image.width(), image.height());
    let bw = basis(w);
    let bh = basis(h);
    let f = image.data();

    // rows: tmp[y][u] = sum_x f[y][x] * bw[u][x]
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &f[y * w..(y + 1) * w];
        for u in 0..w {
            let bu = &bw[u * w..(u + 1) * w];
            tmp[y * w + u] = row.iter().zip(bu).map(|(a, b)| a * b).sum();
        }
    }
    // columns: out[v][u] = sum_y bh[v][y] * tmp[y][u]
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        let bv = &bh[v * h..(v + 1) * h];
        let dst = &mut out[v * w..(v + 1) * w];
        for (y, &coef) in bv.iter().enumerate() {
            let src = &tmp[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += coef * s;
            }
        }
    }
    DctCoefficients {
        width: w,
        height: h,
        data: out,
    }
}

/// Inverse of [`dct2_rect`].
pub fn idct2(coeffs: &DctCoefficients) -> GrayImage {
    let (w, h) = (coeffs.width, coeffs.height);
    let bw = basis(w);
    let bh = basis(h);
    let c = &coeffs.data;

    // tmp[y][u] = sum_v bh[v][y] * c[v][u]
    let mut tmp = vec![0.0; w * h];
    for v in 0..h {
        let src = &c[v * w..(v + 1) * w];
        for y in 0..h {
            let coef = bh[v * h + y];
            let dst = &mut tmp[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += coef * s;
            }
        }
    }
    // out[y][x] = sum_u tmp[y][u] * bw[u][x]
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for u in 0..w {
            let t = tmp[y * w + u];
            let bu = &bw[u * w..(u + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, b) in dst.iter_mut().zip(bu) {
                *d += t * b;
            }
        }
    }
    GrayImage::new(w, h, out).expect("finite coefficients give finite pixels")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_dc_only() {
        let n = 8;
        let c = 0.37;
        let coeffs = dct2(&GrayImage::filled(n, n, c).unwrap()).unwrap();
        assert!((coeffs.get(0, 0) - n as f64 * c).abs() < 1e-12);
        for v in 0..n {
            for u in 0..n {
                if (u, v) != (0, 0) {
                    assert!(coeffs.get(u, v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn first_horizontal_cosine_hits_one_coefficient() {
        let n = 8;
        let img = GrayImage::from_fn(n, n, |x, _| {
            (PI * (2 * x + 1) as f64 / (2.0 * n as f64)).cos()
        })
        .unwrap();
        let coeffs = dct2(&img).unwrap();
        for v in 0..n {
            for u in 0..n {
                let c = coeffs.get(u, v);
                if (u, v) == (1, 0) {
                    assert!(c.abs() > 1.0);
                } else {
                    assert!(c.abs() < 1e-12, "({u},{v}) = {c}");
                }
            }
        }
    }

    #[test]
    fn inverse_of_trivial_inputs() {
        let zero = DctCoefficients::new(5, 5, vec![0.0; 25]).unwrap();
        assert!(idct2(&zero).data().iter().all(|&v| v == 0.0));
        let mut dc = vec![0.0; 36];
        dc[0] = 6.0 * 0.25;
        let img = idct2(&DctCoefficients::new(6, 6, dc).unwrap());
        assert!(img.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn non_square_rejected_by_square_entry_point() {
        let img = GrayImage::filled(4, 3, 0.0).unwrap();
        assert!(matches!(
            dct2(&img),
            Err(FeatureError::NotSquare {
                width: 4,
                height: 3
            })
        ));
        let rect = dct2_rect(&img);
        assert_eq!((rect.width(), rect.height()), (4, 3));
    }
}
