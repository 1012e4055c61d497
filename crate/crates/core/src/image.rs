//! Grayscale rasters, binary masks and binary PGM (P5) I/O.
//!
//! Intensities are kept as `f64` in the nominal range `[0, 1]` regardless of
//! the bit depth they were loaded from. 16-bit PGM samples are big-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("bit depth mismatch: declared {declared}-bit, file maxval {maxval}")]
    DepthMismatch { declared: u8, maxval: u32 },
    #[error("unsupported bit depth {0} (expected 8 or 16)")]
    UnsupportedDepth(u8),
    #[error("truncated pixel data: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("buffer length {len} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("non-finite intensity at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Supported PGM sample depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u8) -> Result<Self, ImageError> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(ImageError::UnsupportedDepth(other)),
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Row-major grayscale raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates; outside the raster
    /// the image is treated as zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let px = |xi: isize, yi: isize| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as isize || yi >= self.height as isize {
                0.0
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
        let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Sub-image `[x0, x0+w) x [y0, y0+h)`, clipped to the raster.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage, ImageError> {
        let x1 = (x0 + w).min(self.width);
        let y1 = (y0 + h).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(ImageError::InvalidDimensions {
                width: w,
                height: h,
            });
        }
        GrayImage::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Sum of squared intensities.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Bilinear resize with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<GrayImage, ImageError> {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        GrayImage::from_fn(width, height, |x, y| {
            let px = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let py = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            self.sample_bilinear(px, py)
        })
    }
}

/// Row-major boolean labeling; `true` marks hand pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Lookup that treats out-of-raster coordinates as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Intersection count with another mask of the same size.
    pub fn overlap(&self, other: &BinaryMask) -> Result<usize, ImageError> {
        self.check_same_size(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    /// Dice coefficient `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
    pub fn dice(&self, other: &BinaryMask) -> Result<f64, ImageError> {
        let inter = self.overlap(other)?;
        let total = self.count() + other.count();
        if total == 0 {
            return Ok(1.0);
        }
        Ok(2.0 * inter as f64 / total as f64)
    }

    /// Single pass of a 3x3 majority filter (out-of-raster neighbours count as background).
    pub fn majority_filter(&self) -> BinaryMask {
        let mut out = vec![false; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut votes = 0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if self.get_or_false(x as isize + dx, y as isize + dy) {
                            votes += 1;
                        }
                    }
                }
                out[y * self.width + x] = votes >= 5;
            }
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Mask rendered as an image with 1.0 for hand and 0.0 for background.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    fn check_same_size(&self, other: &BinaryMask) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage, ImageError> {
    if image.width != mask.width || image.height != mask.height {
        return Err(ImageError::DimensionMismatch(
            image.width,
            image.height,
            mask.width,
            mask.height,
        ));
    }
    let data = image
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    Ok(GrayImage {
        width: image.width,
        height: image.height,
        data,
    })
}

/// Loads a binary PGM and scales samples by `1 / (2^depth - 1)`.
pub fn load_image(path: impl AsRef<Path>, depth: BitDepth) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::NotFound(path.display().to_string()),
        _ => ImageError::Io(e),
    })?;
    read_pgm(BufReader::new(file), depth)
}

pub fn save_image(
    image: &GrayImage,
    path: impl AsRef<Path>,
    depth: BitDepth,
) -> Result<(), ImageError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, image, depth)?;
    w.flush()?;
    Ok(())
}

/// Masks are stored as 8-bit PGM with 0 / 255.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), ImageError> {
    save_image(&mask.to_image(), path, BitDepth::Eight)
}

/// Any nonzero sample counts as hand.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, ImageError> {
    let img = load_image(path, BitDepth::Eight)?;
    BinaryMask::new(
        img.width,
        img.height,
        img.data.iter().map(|&v| v > 0.0).collect(),
    )
}

pub fn read_pgm<R: Read>(mut reader: R, depth: BitDepth) -> Result<GrayImage, ImageError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let (width, height, maxval, offset) = parse_header(&bytes)?;
    let file_bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let declared_bytes = match depth {
        BitDepth::Eight => 1,
        BitDepth::Sixteen => 2,
    };
    if file_bytes_per_sample != declared_bytes {
        return Err(ImageError::DepthMismatch {
            declared: depth.bits(),
            maxval,
        });
    }
    let n = width * height;
    let expected = n * declared_bytes;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let scale = depth.max_value() as f64;
    let data: Vec<f64> = match depth {
        BitDepth::Eight => payload[..n].iter().map(|&b| b as f64 / scale).collect(),
        BitDepth::Sixteen => payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect(),
    };
    GrayImage::new(width, height, data)
}

pub fn write_pgm<W: Write>(mut w: W, image: &GrayImage, depth: BitDepth) -> Result<(), ImageError> {
    let maxval = depth.max_value();
    write!(w, "P5\n{} {}\n{}\n", image.width, image.height, maxval)?;
    let scale = maxval as f64;
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * scale).round() as u32;
    match depth {
        BitDepth::Eight => {
            let buf: Vec<u8> = image.data.iter().map(|&v| quantize(v) as u8).collect();
            w.write_all(&buf)?;
        }
        BitDepth::Sixteen => {
            let mut buf = Vec::with_capacity(image.data.len() * 2);
            for &v in &image.data {
                buf.extend_from_slice(&(quantize(v) as u16).to_be_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Returns `(width, height, maxval, payload_offset)`.
fn parse_header(bytes: &[u8]) -> Result<(usize, usize, u32, usize), ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(ImageError::MalformedHeader("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => {
                    return Err(ImageError::MalformedHeader(format!(
                        "header ends before field {i}"
                    )))
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedHeader(format!(
                "field {i} is not a number"
            )));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::MalformedHeader(format!("field {i} out of range")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "missing separator after maxval".into(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImageError::InvalidDimensions {
            width: width as usize,
            height: height as usize,
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    Ok((width as usize, height as usize, maxval as u32, pos))
}
