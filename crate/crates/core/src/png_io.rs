//! PNG boundary. Attack math never sees quantized values; conversion happens
//! only here.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, MaskImage, CHANNELS};

/// Decoded PNG normalized to `[0, 1]`, before channel handling.
struct Decoded {
    height: usize,
    width: usize,
    channels: usize,
    has_alpha: bool,
    values: Vec<f64>,
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let malformed = |e: png::DecodingError| Error::MalformedPng {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(malformed)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::MalformedPng {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(malformed)?;

    let (channels, has_alpha) = match info.color_type {
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (2, true),
        png::ColorType::Rgb => (3, false),
        png::ColorType::Rgba => (4, true),
        png::ColorType::Indexed => return Err(unsupported(path, &info)),
    };
    let values: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / 65535.0)
            .collect(),
        _ => return Err(unsupported(path, &info)),
    };
    let (height, width) = (info.height as usize, info.width as usize);
    if values.len() != height * width * channels {
        return Err(Error::MalformedPng {
            path: path.to_path_buf(),
            reason: "pixel data length does not match header".into(),
        });
    }
    Ok(Decoded {
        height,
        width,
        channels,
        has_alpha,
        values,
    })
}

fn unsupported(path: &Path, info: &png::OutputInfo) -> Error {
    Error::UnsupportedColorType {
        path: path.to_path_buf(),
        color_type: format!("{:?}", info.color_type),
        bit_depth: info.bit_depth as u8,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Per-pixel RGB triples; grayscale is broadcast and alpha dropped.
fn to_rgb(d: &Decoded) -> Vec<f64> {
    let color = d.channels - usize::from(d.has_alpha);
    let mut out = Vec::with_capacity(d.height * d.width * CHANNELS);
    for px in d.values.chunks_exact(d.channels) {
        if color == 1 {
            out.extend_from_slice(&[px[0]; 3]);
        } else {
            out.extend_from_slice(&px[..3]);
        }
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let d = decode(bytes, Path::new("<memory>"))?;
    ImageBuffer::new(d.height, d.width, to_rgb(&d))
}

/// Loads an 8- or 16-bit RGB/RGBA (or grayscale) PNG into `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let d = decode(&read(path)?, path)?;
    ImageBuffer::new(d.height, d.width, to_rgb(&d))
}

/// 8-bit RGB with each component written as `round(c × 255)`.
pub fn encode_png(img: &ImageBuffer) -> Vec<u8> {
    let bytes: Vec<u8> = img.data().iter().map(|&c| quantize(c)).collect();
    encode_raw(img.width(), img.height(), png::ColorType::Rgb, &bytes)
}

pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_png(img)).map_err(|e| Error::io(path, e))
}

/// Pixels with luminance at or above `threshold` become 1 (preserved).
pub fn load_mask(path: impl AsRef<Path>, threshold: f64) -> Result<MaskImage> {
    let path = path.as_ref();
    let d = decode(&read(path)?, path)?;
    let rgb = to_rgb(&d);
    let data = rgb
        .chunks_exact(CHANNELS)
        .map(|p| u8::from(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] >= threshold))
        .collect();
    MaskImage::new(d.height, d.width, data)
}

/// 8-bit grayscale, 255 where the mask is 1.
pub fn save_mask(mask: &MaskImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = mask.data().iter().map(|&m| m * 255).collect();
    let png = encode_raw(mask.width(), mask.height(), png::ColorType::Grayscale, &bytes);
    fs::write(path, png).map_err(|e| Error::io(path, e))
}

pub(crate) fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_raw(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        // Writing into a Vec only fails on internal encoder invariants.
        let mut writer = encoder.write_header().expect("png header");
        writer.write_image_data(bytes).expect("png data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_raw(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.write_header().unwrap().write_image_data(data).unwrap();
    }

    #[test]
    fn zeros_and_scaling() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.png");
        write_raw(&p, 2, 2, png::ColorType::Rgb, png::BitDepth::Eight, &[0; 12]);
        assert_eq!(load_png(&p).unwrap(), ImageBuffer::zeros(2, 2));

        let p = dir.path().join("v.png");
        write_raw(&p, 1, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[255, 128, 0, 7]);
        let img = load_png(&p).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert!((img.get(0, 0, 1) - 128.0 / 255.0).abs() < 1e-9);
        assert_eq!(img.get(0, 0, 2), 0.0);
    }

    #[test]
    fn sixteen_bit_input() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("w.png");
        let px = [0xff, 0xff, 0x80, 0x00, 0x00, 0x00];
        write_raw(&p, 1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &px);
        let img = load_png(&p).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert!((img.get(0, 0, 1) - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_png(dir.path().join("missing.png")),
            Err(Error::FileNotFound(_))
        ));
        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"definitely not a png").unwrap();
        assert!(matches!(load_png(&bad), Err(Error::MalformedPng { .. })));

        let idx = dir.path().join("idx.png");
        let file = fs::File::create(&idx).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(vec![0u8, 0, 0]);
        enc.write_header().unwrap().write_image_data(&[0]).unwrap();
        assert!(matches!(
            load_png(&idx),
            Err(Error::UnsupportedColorType { .. })
        ));
    }

    #[test]
    fn round_trip_extremes() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rt.png");
        for v in [0.0, 1.0] {
            let img = ImageBuffer::filled(3, 4, v);
            save_png(&img, &p).unwrap();
            assert_eq!(load_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn round_trip_bound_over_all_levels() {
        // Midpoints between adjacent levels are the worst case for round().
        let mut values = Vec::new();
        for k in 0..256 {
            let base = k as f64 / 255.0;
            values.push(base);
            values.push((base + 0.5 / 255.0 - 1e-12).min(1.0));
            values.push((base - 0.5 / 255.0 + 1e-12).max(0.0));
        }
        let n = values.len() / 3;
        let img = ImageBuffer::new(1, n, values).unwrap();
        let back = decode_png(&encode_png(&img)).unwrap();
        assert!(img.linf_distance(&back).unwrap() <= 1.0 / 510.0);
    }

    #[test]
    fn mask_thresholding() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_raw(&p, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[255, 255]);
        assert_eq!(load_mask(&p, 0.5).unwrap(), MaskImage::ones(1, 2));
        write_raw(&p, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[0, 0]);
        assert_eq!(load_mask(&p, 0.5).unwrap(), MaskImage::zeros(1, 2));

        let (w, h) = (5usize, 4usize);
        let gray: Vec<u8> = (0..h * w).map(|i| if (i / w + i % w) % 2 == 0 { 255 } else { 0 }).collect();
        let rgb: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
        write_raw(&p, w as u32, h as u32, png::ColorType::Rgb, png::BitDepth::Eight, &rgb);
        let mask = load_mask(&p, 0.5).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expected = u8::from(f64::from(gray[y * w + x]) / 255.0 >= 0.5);
                assert_eq!(mask.get(y, x), expected);
            }
        }
        let q = dir.path().join("m2.png");
        save_mask(&mask, &q).unwrap();
        assert_eq!(load_mask(&q, 0.5).unwrap(), mask);
    }
}
