#![allow(dead_code)]

use pgattack::image::{ImageBuffer, MaskImage};
use pgattack::model::{Caption, DualEncoder};
use pgattack::synth::{scene, OBJECT_COLORS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(h, w, |_, _, _| lo + (hi - lo) * rng.random::<f64>())
}

pub fn candidate_captions() -> Vec<Caption> {
    OBJECT_COLORS
        .iter()
        .map(|(name, _)| Caption::new(format!("a {name} car on the road")).unwrap())
        .collect()
}

/// A seeded scene whose true caption is the candidate the clean image
/// already retrieves best; the remaining candidates are decoys.
pub struct Instance {
    pub image: ImageBuffer,
    pub mask: MaskImage,
    pub truth: Caption,
    pub decoys: Vec<Caption>,
}

pub fn instance<E: DualEncoder>(model: &E, size: usize, seed: u64) -> Instance {
    let s = scene(size, size, seed);
    let candidates = candidate_captions();
    let e = model.embed_image(&s.image);
    let cos: Vec<f64> = candidates
        .iter()
        .map(|c| e.cosine(&model.embed_text(c).unwrap()))
        .collect();
    let best = (0..cos.len())
        .max_by(|&a, &b| cos[a].partial_cmp(&cos[b]).unwrap())
        .unwrap();
    let truth = candidates[best].clone();
    let decoys = candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, c)| c)
        .collect();
    Instance {
        image: s.image,
        mask: s.mask,
        truth,
        decoys,
    }
}

/// splitmix64 stream mapped to `[0, 1)` with 53 bits; mirrored by the
/// script that produced the frozen SSIM reference values.
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Pair `k` of the SSIM reference set: `x` uniform, `y` = clip(x + noise)
/// with noise amplitude `0.05 + 0.05·k`.
pub fn ssim_reference_pair(k: usize) -> (ImageBuffer, ImageBuffer) {
    let mut g = SplitMix::new(1000 + k as u64);
    let n = 32 * 32 * 3;
    let x: Vec<f64> = (0..n).map(|_| g.next_f64()).collect();
    let amp = 0.05 + 0.05 * k as f64;
    let y: Vec<f64> = x
        .iter()
        .map(|&v| (v + (g.next_f64() - 0.5) * amp).clamp(0.0, 1.0))
        .collect();
    (
        ImageBuffer::new(32, 32, x).unwrap(),
        ImageBuffer::new(32, 32, y).unwrap(),
    )
}

/// Reference SSIM (luminance, 11×11 Gaussian σ 1.5, no sample-covariance
/// correction, data range 1) for [`ssim_reference_pair`], computed with
/// scikit-image's `structural_similarity`.
pub const SSIM_REFERENCE: [f64; 20] = [
    0.998741780911,
    0.994720056490,
    0.989926701426,
    0.980400661867,
    0.967517263728,
    0.954752482317,
    0.941869804958,
    0.931567216564,
    0.917610615403,
    0.893472460422,
    0.875186434011,
    0.864179930707,
    0.840599152754,
    0.814055734838,
    0.809159934933,
    0.741865088519,
    0.734672734982,
    0.753334661111,
    0.696107633243,
    0.687081750240,
];

/// Removes every `elapsed_ms` field, recursively.
pub fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("elapsed_ms");
            for (_, child) in map.iter_mut() {
                strip_timing(child);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
