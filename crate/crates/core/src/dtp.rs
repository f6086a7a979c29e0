//! Deceptive text overlay: misleading strings rendered opaquely onto the
//! image on evenly spaced rows, bullet-chat style.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font::{Glyph, GlyphFont};
use crate::image::{Dims, ImageBuffer};

pub type Rgb = [f64; 3];

pub const BLACK: Rgb = [0.0, 0.0, 0.0];
pub const WHITE: Rgb = [1.0, 1.0, 1.0];
pub const MIN_TEXT_SIZE: usize = 4;
const REPLACEMENT: char = '?';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtpConfig {
    pub texts: Vec<String>,
    pub color: Rgb,
    /// Glyph height in pixels.
    pub size: usize,
    pub quantity: usize,
    pub outline: Option<Rgb>,
    pub placement_seed: u64,
    /// `None` selects the built-in font.
    pub font: Option<PathBuf>,
}

impl Default for DtpConfig {
    fn default() -> Self {
        Self {
            texts: Vec::new(),
            color: BLACK,
            size: 16,
            quantity: 6,
            outline: None,
            placement_seed: 0,
            font: None,
        }
    }
}

impl DtpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_TEXT_SIZE {
            return Err(Error::InvalidConfig(format!(
                "text size must be >= {MIN_TEXT_SIZE}, got {}",
                self.size
            )));
        }
        if self.quantity > 0 && self.texts.is_empty() {
            return Err(Error::InvalidConfig("no deceptive texts for a nonzero quantity".into()));
        }
        let in_unit = |c: &Rgb| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.color) || !self.outline.as_ref().is_none_or(in_unit) {
            return Err(Error::InvalidConfig("colors must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load_font(&self) -> Result<GlyphFont> {
        match &self.font {
            Some(path) => GlyphFont::load(path),
            None => Ok(GlyphFont::builtin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPlacement {
    pub text_index: usize,
    /// Left edge of the first glyph.
    pub x: usize,
    /// Row centerline; glyphs span `y − size/2 .. y − size/2 + size`.
    pub y: usize,
    pub color: Rgb,
    pub size: usize,
    pub outline: Option<Rgb>,
}

/// A glyph resampled to a target height.
struct ScaledGlyph<'a> {
    glyph: &'a Glyph,
    font_height: usize,
    height: usize,
    width: usize,
    advance: usize,
}

impl ScaledGlyph<'_> {
    fn covered(&self, row: usize, col: usize) -> bool {
        let sy = row * self.font_height / self.height;
        let sx = col * self.glyph.width / self.width;
        self.glyph.covered(sy, sx)
    }
}

fn scale_glyph<'a>(font: &'a GlyphFont, glyph: &'a Glyph, size: usize) -> ScaledGlyph<'a> {
    let s = size as f64 / font.height() as f64;
    ScaledGlyph {
        glyph,
        font_height: font.height(),
        height: size,
        width: ((glyph.width as f64 * s).round() as usize).max(1),
        advance: (glyph.advance as f64 * s).round() as usize,
    }
}

/// Resolves each character to a glyph, substituting `?` for missing ones.
fn resolve<'a>(text: &str, font: &'a GlyphFont, substituted: &mut Vec<char>) -> Vec<&'a Glyph> {
    text.chars()
        .map(|ch| match font.glyph(ch) {
            Some(g) => g,
            None => {
                substituted.push(ch);
                font.glyph(REPLACEMENT).expect("font has '?'")
            }
        })
        .collect()
}

/// Rendered width of `text` in pixels at `size`.
pub fn text_width(text: &str, font: &GlyphFont, size: usize) -> usize {
    resolve(text, font, &mut Vec::new())
        .into_iter()
        .map(|g| scale_glyph(font, g, size).advance)
        .sum()
}

/// Outline thickness in pixels: one font pixel at the rendered size.
pub fn outline_radius(font: &GlyphFont, size: usize) -> usize {
    ((size as f64 / font.height() as f64).round() as usize).max(1)
}

/// `quantity` rows at pitch `height / (quantity + 1)`, seeded horizontal
/// offsets, texts assigned round-robin.
pub fn plan_placements(dims: Dims, cfg: &DtpConfig, font: &GlyphFont) -> Result<Vec<TextPlacement>> {
    if cfg.quantity == 0 {
        return Ok(Vec::new());
    }
    cfg.validate()?;
    let (h, w) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.placement_seed);
    let placements = (0..cfg.quantity)
        .map(|k| {
            let text_index = k % cfg.texts.len();
            let y = ((k + 1) as f64 * h as f64 / (cfg.quantity + 1) as f64).round() as usize;
            let span = w.saturating_sub(text_width(&cfg.texts[text_index], font, cfg.size));
            let x = rng.random_range(0..=span).min(w - 1);
            TextPlacement {
                text_index,
                x,
                y: y.min(h - 1),
                color: cfg.color,
                size: cfg.size,
                outline: cfg.outline,
            }
        })
        .collect();
    Ok(placements)
}

/// Fill and outline-ring masks for one string, clipped to the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub fill: Vec<bool>,
    pub ring: Vec<bool>,
}

pub fn string_coverage(
    dims: Dims,
    text: &str,
    placement: &TextPlacement,
    font: &GlyphFont,
    substituted: &mut Vec<char>,
) -> Coverage {
    let (h, w) = dims;
    let mut fill = vec![false; h * w];
    let top = placement.y as isize - (placement.size / 2) as isize;
    let mut pen = placement.x as isize;
    for glyph in resolve(text, font, substituted) {
        let sg = scale_glyph(font, glyph, placement.size);
        for row in 0..sg.height {
            let py = top + row as isize;
            if py < 0 || py >= h as isize {
                continue;
            }
            for col in 0..sg.width {
                let px = pen + col as isize;
                if px >= 0 && px < w as isize && sg.covered(row, col) {
                    fill[py as usize * w + px as usize] = true;
                }
            }
        }
        pen += sg.advance as isize;
    }

    let mut ring = vec![false; h * w];
    if placement.outline.is_some() {
        let r = outline_radius(font, placement.size) as isize;
        for y in 0..h as isize {
            for x in 0..w as isize {
                if !fill[(y as usize) * w + x as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                            let i = ny as usize * w + nx as usize;
                            if !fill[i] {
                                ring[i] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Coverage { fill, ring }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: ImageBuffer,
    /// Characters the font lacked, each drawn as `?`.
    pub substituted: Vec<char>,
}

/// Opaquely composites one string: outline ring first, fill on top.
pub fn draw_string(img: &ImageBuffer, text: &str, placement: &TextPlacement, font: &GlyphFont) -> Rendered {
    let mut image = img.clone();
    let mut substituted = Vec::new();
    paint(&mut image, text, placement, font, &mut substituted);
    Rendered { image, substituted }
}

fn paint(image: &mut ImageBuffer, text: &str, placement: &TextPlacement, font: &GlyphFont, substituted: &mut Vec<char>) {
    let before = substituted.len();
    let w = image.width();
    let cov = string_coverage(image.dims(), text, placement, font, substituted);
    for ch in &substituted[before..] {
        log::warn!("no glyph for {ch:?}; rendered as '?'");
    }
    if let Some(outline) = placement.outline {
        for (i, _) in cov.ring.iter().enumerate().filter(|(_, &r)| r) {
            image.set_pixel(i / w, i % w, outline);
        }
    }
    for (i, _) in cov.fill.iter().enumerate().filter(|(_, &f)| f) {
        image.set_pixel(i / w, i % w, placement.color);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtpOutput {
    pub image: ImageBuffer,
    pub placements: Vec<TextPlacement>,
    pub substituted: Vec<char>,
}

/// Plans placements and draws each string in list order.
pub fn dtp_attack(img: &ImageBuffer, cfg: &DtpConfig, font: &GlyphFont) -> Result<DtpOutput> {
    let placements = plan_placements(img.dims(), cfg, font)?;
    let mut image = img.clone();
    let mut substituted = Vec::new();
    for p in &placements {
        paint(&mut image, &cfg.texts[p.text_index], p, font, &mut substituted);
    }
    Ok(DtpOutput {
        image,
        placements,
        substituted,
    })
}
