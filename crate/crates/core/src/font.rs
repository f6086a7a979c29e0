//! Binary-coverage bitmap fonts.
//!
//! The built-in font is the public-domain 8×8 basic Latin set. Other fonts
//! are read from a small container:
//!
//! ```text
//! magic        4 bytes  "PGFN"
//! version      u16      1
//! height       u16      glyph height in pixels
//! glyph_count  u16
//! per glyph:
//!   codepoint  u32
//!   width      u16
//!   advance    u16
//!   coverage   height × width bytes, row-major, each 0 or 1
//! ```
//!
//! Integers are little-endian. Every printable ASCII codepoint must be
//! present.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FONT_MAGIC: &[u8; 4] = b"PGFN";
const FONT_VERSION: u16 = 1;
const PRINTABLE: std::ops::RangeInclusive<u32> = 0x20..=0x7e;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub width: usize,
    pub advance: usize,
    /// `height × width`, row-major.
    pub coverage: Vec<bool>,
}

impl Glyph {
    pub fn covered(&self, row: usize, col: usize) -> bool {
        self.coverage[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphFont {
    height: usize,
    glyphs: BTreeMap<char, Glyph>,
}

impl GlyphFont {
    pub fn builtin() -> Self {
        let glyphs = PRINTABLE
            .map(|cp| {
                let rows = font8x8::legacy::BASIC_LEGACY[cp as usize];
                // Bit 0 of each row byte is the leftmost pixel.
                let coverage = rows
                    .iter()
                    .flat_map(|&row| (0..8).map(move |bit| row & (1 << bit) != 0))
                    .collect();
                let glyph = Glyph {
                    width: 8,
                    advance: 8,
                    coverage,
                };
                (char::from_u32(cp).expect("ascii"), glyph)
            })
            .collect();
        Self { height: 8, glyphs }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn glyph(&self, ch: char) -> Option<&Glyph> {
        self.glyphs.get(&ch)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != FONT_MAGIC {
            return Err(Error::MalformedFont("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FONT_VERSION {
            return Err(Error::MalformedFont(format!("unsupported version {version}")));
        }
        let height = r.u16()? as usize;
        if height == 0 {
            return Err(Error::MalformedFont("zero glyph height".into()));
        }
        let count = r.u16()?;
        let mut glyphs = BTreeMap::new();
        for _ in 0..count {
            let cp = r.u32()?;
            let ch = char::from_u32(cp)
                .ok_or_else(|| Error::MalformedFont(format!("invalid codepoint {cp:#x}")))?;
            let width = r.u16()? as usize;
            let advance = r.u16()? as usize;
            let raw = r.take(width * height)?;
            if raw.iter().any(|&b| b > 1) {
                return Err(Error::MalformedFont(format!("non-binary coverage for {ch:?}")));
            }
            let coverage = raw.iter().map(|&b| b == 1).collect();
            glyphs.insert(
                ch,
                Glyph {
                    width,
                    advance,
                    coverage,
                },
            );
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedFont("trailing bytes".into()));
        }
        if let Some(cp) = PRINTABLE.clone().find(|&cp| !glyphs.contains_key(&char::from_u32(cp).unwrap())) {
            return Err(Error::MalformedFont(format!(
                "missing glyph for {:?}",
                char::from_u32(cp).unwrap()
            )));
        }
        Ok(Self { height, glyphs })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FONT_MAGIC);
        out.extend_from_slice(&FONT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.glyphs.len() as u16).to_le_bytes());
        for (ch, g) in &self.glyphs {
            out.extend_from_slice(&(*ch as u32).to_le_bytes());
            out.extend_from_slice(&(g.width as u16).to_le_bytes());
            out.extend_from_slice(&(g.advance as u16).to_le_bytes());
            out.extend(g.coverage.iter().map(|&c| u8::from(c)));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::MalformedFont("truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
