//! Bilinear resampling with half-pixel-center alignment, its exact adjoint,
//! and the multi-scale pyramid built from it.
//!
//! The operator is determined by the source and destination dimensions
//! alone, so the encoder's fixed-size resize and the pyramid levels share the
//! same code path (and the same adjoint).

use crate::error::{Error, Result};
use crate::image::{Dims, GradientField, ImageBuffer, CHANNELS};

/// Scale factors applied to every image when building the attack pyramid.
pub const DEFAULT_SCALE_FACTORS: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

/// One output coordinate's pair of source taps and the weight of the second.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(in_len - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn scaled_dims(dims: Dims, factor: f64) -> Dims {
    let scale = |d: usize| ((factor * d as f64).round() as usize).max(1);
    (scale(dims.0), scale(dims.1))
}

pub(crate) fn check_factor(factor: f64) -> Result<()> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be in (0, 1], got {factor}"
        )));
    }
    Ok(())
}

/// Resamples raw interleaved RGB data between arbitrary positive dimensions.
pub(crate) fn resample(src: &[f64], from: Dims, to: Dims) -> Vec<f64> {
    if from == to {
        return src.to_vec();
    }
    let (h, w) = from;
    let ys = axis_taps(h, to.0);
    let xs = axis_taps(w, to.1);
    let at = |y: usize, x: usize, c: usize| src[(y * w + x) * CHANNELS + c];
    let mut out = Vec::with_capacity(to.0 * to.1 * CHANNELS);
    for ty in &ys {
        for tx in &xs {
            for c in 0..CHANNELS {
                let a00 = at(ty.lo, tx.lo, c);
                let a01 = at(ty.lo, tx.hi, c);
                let a10 = at(ty.hi, tx.lo, c);
                let a11 = at(ty.hi, tx.hi, c);
                let top = a00 + (a01 - a00) * tx.frac;
                let bottom = a10 + (a11 - a10) * tx.frac;
                out.push(top + (bottom - top) * ty.frac);
            }
        }
    }
    out
}

/// Transpose of [`resample`]: scatters `grad` (at `to` dims) back onto `from`.
pub(crate) fn resample_adjoint(grad: &[f64], to: Dims, from: Dims) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let (h, w) = from;
    let ys = axis_taps(h, to.0);
    let xs = axis_taps(w, to.1);
    let mut out = vec![0.0; h * w * CHANNELS];
    let mut i = 0;
    for ty in &ys {
        for tx in &xs {
            let w00 = (1.0 - ty.frac) * (1.0 - tx.frac);
            let w01 = (1.0 - ty.frac) * tx.frac;
            let w10 = ty.frac * (1.0 - tx.frac);
            let w11 = ty.frac * tx.frac;
            for c in 0..CHANNELS {
                let g = grad[i];
                i += 1;
                out[(ty.lo * w + tx.lo) * CHANNELS + c] += g * w00;
                out[(ty.lo * w + tx.hi) * CHANNELS + c] += g * w01;
                out[(ty.hi * w + tx.lo) * CHANNELS + c] += g * w10;
                out[(ty.hi * w + tx.hi) * CHANNELS + c] += g * w11;
            }
        }
    }
    out
}

/// Resizes to an explicit size; used by the encoder's fixed input size.
pub fn resize_to(img: &ImageBuffer, dims: Dims) -> Result<ImageBuffer> {
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::InvalidArgument(format!("target dims {dims:?} are empty")));
    }
    if dims == img.dims() {
        return Ok(img.clone());
    }
    let mut data = resample(img.data(), img.dims(), dims);
    // Interpolation can overshoot [0, 1] by an ulp.
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(ImageBuffer::from_raw(dims.0, dims.1, data))
}

/// Output dims are `max(1, round(factor × dim))`; factor 1 is the identity.
pub fn resize_bilinear(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor(factor)?;
    resize_to(img, scaled_dims(img.dims(), factor))
}

/// Exact linear transpose of the resize from `target_dims` to `grad.dims()`.
pub fn resize_adjoint(grad: &GradientField, target_dims: Dims) -> Result<GradientField> {
    if target_dims.0 == 0 || target_dims.1 == 0 {
        return Err(Error::InvalidArgument(format!(
            "target dims {target_dims:?} are empty"
        )));
    }
    if grad.height() > target_dims.0 || grad.width() > target_dims.1 {
        return Err(Error::dims(target_dims, grad.dims()));
    }
    let data = resample_adjoint(grad.data(), grad.dims(), target_dims);
    Ok(GradientField::from_raw(target_dims.0, target_dims.1, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    pub factors: Vec<f64>,
    pub levels: Vec<ImageBuffer>,
}

pub fn build_pyramid(img: &ImageBuffer, factors: &[f64]) -> Result<ScalePyramid> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("empty scale factor list".into()));
    }
    let levels = factors
        .iter()
        .map(|&f| resize_bilinear(img, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalePyramid {
        factors: factors.to_vec(),
        levels,
    })
}
