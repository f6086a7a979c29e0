//! Seeded synthetic street scenes with a single key object and its mask.
//! Used for fixtures, the demo page, and reproducible batch runs without an
//! external dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, MaskImage};
use crate::pipeline::{ManifestEntry, TaskKind};
use crate::png_io::{save_mask, save_png};

pub const OBJECT_COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [0.85, 0.12, 0.1]),
    ("blue", [0.12, 0.2, 0.8]),
    ("white", [0.92, 0.92, 0.9]),
    ("black", [0.08, 0.08, 0.1]),
    ("green", [0.15, 0.65, 0.2]),
    ("yellow", [0.9, 0.82, 0.15]),
];

pub const OBJECT_KINDS: [&str; 4] = ["car", "truck", "bus", "motorcycle"];

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageBuffer,
    /// 0 on the object (attackable), 1 elsewhere.
    pub mask: MaskImage,
    pub color: &'static str,
    pub kind: &'static str,
    /// `(top, left, height, width)` of the object box.
    pub object_box: (usize, usize, usize, usize),
}

impl Scene {
    pub fn caption(&self) -> String {
        format!("a {} {} on the road", self.color, self.kind)
    }
}

/// Sky, road with lane markings, and one colored object box with a little
/// texture so gradients are not degenerate.
pub fn scene(height: usize, width: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (color, rgb) = OBJECT_COLORS[rng.random_range(0..OBJECT_COLORS.len())];
    let kind = OBJECT_KINDS[rng.random_range(0..OBJECT_KINDS.len())];
    let horizon = (height as f64 * rng.random_range(0.35..0.5)) as usize;
    let ow = ((width as f64 * rng.random_range(0.3..0.5)) as usize).max(2);
    let oh = ((height as f64 * rng.random_range(0.25..0.4)) as usize).max(2);
    let top = (horizon + rng.random_range(0..(height - horizon).saturating_sub(oh).max(1))).min(height - oh);
    let left = rng.random_range(0..=(width - ow));
    let sky = [rng.random_range(0.45..0.65), rng.random_range(0.6..0.75), rng.random_range(0.8..0.95)];
    let road = rng.random_range(0.3..0.45);
    let noise: Vec<f64> = (0..height * width * 3).map(|_| rng.random_range(-0.04..0.04)).collect();

    let in_object = |y: usize, x: usize| y >= top && y < top + oh && x >= left && x < left + ow;
    let image = ImageBuffer::from_fn(height, width, |y, x, c| {
        let base = if in_object(y, x) {
            // Darker windows band across the upper third of the object.
            let window = y < top + oh / 3 && x > left + ow / 6 && x + ow / 6 < left + ow;
            if window { rgb[c] * 0.4 + 0.1 } else { rgb[c] }
        } else if y < horizon {
            sky[c] * (0.8 + 0.2 * (1.0 - y as f64 / horizon as f64))
        } else {
            let lane = (x as isize - width as isize / 2).unsigned_abs() < (width / 40).max(1)
                && (y / (height / 12).max(1)).is_multiple_of(2);
            if lane { 0.95 } else { road }
        };
        base + noise[(y * width + x) * 3 + c]
    });
    let mask = MaskImage::from_fn(height, width, |y, x| !in_object(y, x));
    Scene {
        image,
        mask,
        color,
        kind,
        object_box: (top, left, oh, ow),
    }
}

/// Deceptive strings contradicting the scene, one per task family.
pub fn deceptive_texts(scene: &Scene) -> Vec<String> {
    let other_color = OBJECT_COLORS
        .iter()
        .map(|(n, _)| *n)
        .find(|n| *n != scene.color)
        .unwrap_or("purple");
    let other_kind = OBJECT_KINDS.iter().find(|k| **k != scene.kind).unwrap_or(&"bicycle");
    vec![
        format!("the {} is {}", scene.kind, other_color),
        format!("this is a {other_kind}"),
        format!("three {other_kind}s"),
    ]
}

/// Writes `count` scenes plus a JSON-lines manifest into `dir`; returns the
/// manifest path.
pub fn write_fixture(dir: &Path, count: usize, size: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tasks = [TaskKind::Color, TaskKind::Classification, TaskKind::Counting];
    let mut lines = String::new();
    for i in 0..count {
        let s = scene(size, size, seed.wrapping_add(i as u64));
        let id = format!("scene_{i:04}");
        let image_path = PathBuf::from(format!("{id}.png"));
        let mask_path = PathBuf::from(format!("{id}_mask.png"));
        save_png(&s.image, dir.join(&image_path))?;
        save_mask(&s.mask, dir.join(&mask_path))?;
        let entry = ManifestEntry {
            id,
            image_path,
            mask_path,
            caption: s.caption(),
            task: tasks[i % tasks.len()],
            deceptive_texts: deceptive_texts(&s),
            decoys: None,
        };
        lines.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
