//! Pixel buffers, masks and gradient fields, plus the two per-pixel
//! primitives every attack step goes through: L∞ clipping and masked
//! composition.
//!
//! Images are stored row-major as `height × width × 3` `f64` components in
//! `[0, 1]`. Masks are single channel and broadcast across RGB; a mask value
//! of 1 marks a pixel that must keep its original value, 0 marks a pixel the
//! attack may modify.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// `(height, width)` in pixels.
pub type Dims = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, CHANNELS, data.len())?;
        if let Some(i) = data.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!(
                "component {i} = {} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from raw components, clamping each into `[0, 1]`.
    /// NaN components become 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(height, width, CHANNELS, data.len())?;
        for c in &mut data {
            *c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value), "fill value outside [0, 1]");
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image from a per-component function; results are clamped
    /// into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    let v = f(y, x, c);
                    data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Wraps data already known to satisfy the range invariant.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        debug_assert!(data.iter().all(|c| (0.0..=1.0).contains(c)));
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub(crate) fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Largest absolute component difference.
    pub fn linf_distance(&self, other: &ImageBuffer) -> Result<f64> {
        same_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Rec. 601 luma, one value per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        if let Some(i) = data.iter().position(|&m| m > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask element {i} = {} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Everything preserved.
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Everything attackable.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_preserved(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == 1
    }

    /// Number of pixels the attack may modify.
    pub fn attackable_count(&self) -> usize {
        self.data.iter().filter(|&&m| m == 0).count()
    }
}

/// Same shape as an [`ImageBuffer`] with unconstrained, finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, CHANNELS, data.len())?;
        if data.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gradient component".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_raw(height, width, vec![0.0; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|g| g.abs()).sum()
    }

    pub fn scaled(&self, factor: f64) -> GradientField {
        Self::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|g| g * factor).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &GradientField) -> Result<()> {
        same_dims(self.dims(), other.dims())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

/// Clamps every component of `adv` into `[orig − eps, orig + eps] ∩ [0, 1]`.
pub fn clip_linf(adv: &ImageBuffer, orig: &ImageBuffer, eps: f64) -> Result<ImageBuffer> {
    same_dims(orig.dims(), adv.dims())?;
    check_eps(eps)?;
    let mut data = adv.data.clone();
    clip_in_place(&mut data, &orig.data, eps);
    Ok(ImageBuffer::from_raw(adv.height, adv.width, data))
}

/// `orig · M + adv · (1 − M)`, with the mask broadcast over RGB.
pub fn masked_compose(
    orig: &ImageBuffer,
    adv: &ImageBuffer,
    mask: &MaskImage,
) -> Result<ImageBuffer> {
    same_dims(orig.dims(), adv.dims())?;
    same_dims(orig.dims(), mask.dims())?;
    let mut data = adv.data.clone();
    compose_in_place(&mut data, &orig.data, mask);
    Ok(ImageBuffer::from_raw(adv.height, adv.width, data))
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    Ok(())
}

/// Slice-level clip; `candidate` may hold out-of-range values on entry.
pub(crate) fn clip_in_place(candidate: &mut [f64], orig: &[f64], eps: f64) {
    for (v, &o) in candidate.iter_mut().zip(orig) {
        let lo = (o - eps).max(0.0);
        let hi = (o + eps).min(1.0);
        *v = v.max(lo).min(hi);
    }
}

/// Slice-level compose; restores `orig` wherever the mask is 1.
pub(crate) fn compose_in_place(candidate: &mut [f64], orig: &[f64], mask: &MaskImage) {
    for (p, &m) in mask.data.iter().enumerate() {
        if m == 1 {
            let i = p * CHANNELS;
            candidate[i..i + CHANNELS].copy_from_slice(&orig[i..i + CHANNELS]);
        }
    }
}

pub(crate) fn same_dims(expected: Dims, actual: Dims) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(expected, actual));
    }
    Ok(())
}

fn check_len(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    if len != height * width * channels {
        return Err(Error::InvalidArgument(format!(
            "expected {} components for {height}x{width}x{channels}, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}
