//! Differentiable surrogate for the vision-language source model.
//!
//! The attack only talks to [`DualEncoder`]; [`ToyDualEncoder`] is the
//! built-in implementation: a linear+tanh image tower over a fixed 32×32
//! resample and a bag-of-tokens text tower, both L2-normalized, with
//! analytic pixel gradients.

mod snapshot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{GradientField, ImageBuffer, CHANNELS};
use crate::resize::{resample, resample_adjoint};

pub use snapshot::{load_snapshot, read_snapshot, save_snapshot, write_snapshot, SNAPSHOT_MAGIC};

pub const PATCH_SIZE: usize = 32;
pub const EMBED_DIM: usize = 64;
pub const VOCAB_SIZE: usize = 4096;
const INPUT_LEN: usize = PATCH_SIZE * PATCH_SIZE * CHANNELS;

/// Lower bound on the norm used when normalizing embeddings.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `raw` by `max(‖raw‖, NORM_FLOOR)`.
    pub fn normalized(raw: Vec<f64>) -> Self {
        let norm = l2(&raw).max(NORM_FLOOR);
        Embedding(raw.into_iter().map(|v| v / norm).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `1 − cosine`, the distance the attack maximizes. In `[0, 2]`.
pub fn loss(img_emb: &Embedding, txt_emb: &Embedding) -> f64 {
    (1.0 - img_emb.cosine(txt_emb)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    text: String,
    replication: usize,
}

impl Caption {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        Self::replicated(text, 1)
    }

    pub fn replicated(text: impl Into<String>, replication: usize) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyCaption);
        }
        if replication == 0 {
            return Err(Error::InvalidArgument("caption replication must be >= 1".into()));
        }
        Ok(Self { text, replication })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn replication(&self) -> usize {
        self.replication
    }

    /// Lowercased whitespace-separated tokens.
    pub fn tokens(&self) -> Vec<String> {
        self.text.split_whitespace().map(str::to_lowercase).collect()
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn token_bucket(token: &str) -> usize {
    (fnv1a64(token.as_bytes()) % VOCAB_SIZE as u64) as usize
}

/// A text-side target for the image loss, weighted in the mean.
#[derive(Debug, Clone)]
pub struct WeightedTarget {
    pub embedding: Embedding,
    pub weight: f64,
}

/// What the attack needs from a source model.
pub trait DualEncoder {
    fn embed_image(&self, img: &ImageBuffer) -> Embedding;

    fn embed_text(&self, caption: &Caption) -> Result<Embedding>;

    /// Weighted mean of `1 − cos(E_I(img), target)` and its gradient with
    /// respect to every pixel component of `img`.
    fn loss_and_grad(&self, img: &ImageBuffer, targets: &[WeightedTarget]) -> (f64, GradientField);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDualEncoder {
    seed: Option<u64>,
    /// `INPUT_LEN × EMBED_DIM`, row-major.
    image_projection: Vec<f64>,
    /// `VOCAB_SIZE × EMBED_DIM`, row-major.
    token_table: Vec<f64>,
    /// `EMBED_DIM × EMBED_DIM`, row-major.
    text_projection: Vec<f64>,
}

/// Draws weights uniformly from `(-1, 1) / sqrt(fan_in)` out of a ChaCha8
/// stream, in declaration order.
pub fn init_model(seed: u64) -> ToyDualEncoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
        let scale = 1.0 / (fan_in as f64).sqrt();
        (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect()
    };
    let image_projection = draw(INPUT_LEN * EMBED_DIM, INPUT_LEN);
    let token_table = draw(VOCAB_SIZE * EMBED_DIM, EMBED_DIM);
    let text_projection = draw(EMBED_DIM * EMBED_DIM, EMBED_DIM);
    ToyDualEncoder {
        seed: Some(seed),
        image_projection,
        token_table,
        text_projection,
    }
}

impl ToyDualEncoder {
    pub(crate) fn from_weights(
        image_projection: Vec<f64>,
        token_table: Vec<f64>,
        text_projection: Vec<f64>,
    ) -> Result<Self> {
        let check = |name: &str, m: &[f64], len: usize| {
            if m.len() != len {
                return Err(Error::MalformedSnapshot(format!(
                    "{name}: expected {len} weights, got {}",
                    m.len()
                )));
            }
            if m.iter().any(|w| !w.is_finite()) {
                return Err(Error::MalformedSnapshot(format!("{name}: non-finite weight")));
            }
            Ok(())
        };
        check("image_projection", &image_projection, INPUT_LEN * EMBED_DIM)?;
        check("token_table", &token_table, VOCAB_SIZE * EMBED_DIM)?;
        check("text_projection", &text_projection, EMBED_DIM * EMBED_DIM)?;
        Ok(Self {
            seed: None,
            image_projection,
            token_table,
            text_projection,
        })
    }

    /// `None` when loaded from a snapshot.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn image_projection(&self) -> &[f64] {
        &self.image_projection
    }

    pub fn token_table(&self) -> &[f64] {
        &self.token_table
    }

    pub fn text_projection(&self) -> &[f64] {
        &self.text_projection
    }

    fn project_image(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; EMBED_DIM];
        for (xi, row) in x.iter().zip(self.image_projection.chunks_exact(EMBED_DIM)) {
            if *xi != 0.0 {
                for (zj, w) in z.iter_mut().zip(row) {
                    *zj += xi * w;
                }
            }
        }
        z
    }

    /// Pre-activation of the image tower plus the resampled input.
    fn image_preactivation(&self, img: &ImageBuffer) -> Vec<f64> {
        let x = resample(img.data(), img.dims(), (PATCH_SIZE, PATCH_SIZE));
        self.project_image(&x)
    }
}

impl DualEncoder for ToyDualEncoder {
    fn embed_image(&self, img: &ImageBuffer) -> Embedding {
        let z = self.image_preactivation(img);
        Embedding::normalized(z.into_iter().map(f64::tanh).collect())
    }

    fn embed_text(&self, caption: &Caption) -> Result<Embedding> {
        let tokens = caption.tokens();
        if tokens.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let mut mean = vec![0.0; EMBED_DIM];
        for tok in &tokens {
            let b = token_bucket(tok);
            for (m, w) in mean.iter_mut().zip(&self.token_table[b * EMBED_DIM..(b + 1) * EMBED_DIM]) {
                *m += w;
            }
        }
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);

        let mut z = vec![0.0; EMBED_DIM];
        for (mi, row) in mean.iter().zip(self.text_projection.chunks_exact(EMBED_DIM)) {
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += mi * w;
            }
        }
        Ok(Embedding::normalized(z.into_iter().map(f64::tanh).collect()))
    }

    fn loss_and_grad(&self, img: &ImageBuffer, targets: &[WeightedTarget]) -> (f64, GradientField) {
        let (h, w) = img.dims();
        let total: f64 = targets.iter().map(|t| t.weight).sum();
        if targets.is_empty() || total <= 0.0 {
            return (0.0, GradientField::zeros(h, w));
        }

        let z = self.image_preactivation(img);
        let act: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let raw_norm = l2(&act);
        let norm = raw_norm.max(NORM_FLOOR);
        let e: Vec<f64> = act.iter().map(|v| v / norm).collect();

        // dL/de = -(weighted mean of targets)
        let mut target_mean = vec![0.0; EMBED_DIM];
        let mut mean_loss = 0.0;
        for t in targets {
            let wt = t.weight / total;
            let cos: f64 = e.iter().zip(t.embedding.values()).map(|(a, b)| a * b).sum();
            mean_loss += wt * (1.0 - cos);
            for (m, v) in target_mean.iter_mut().zip(t.embedding.values()) {
                *m += wt * v;
            }
        }

        // Through the normalization; below the floor it is a plain scaling.
        let d_act: Vec<f64> = if raw_norm > NORM_FLOOR {
            let proj: f64 = e.iter().zip(&target_mean).map(|(a, b)| a * b).sum();
            e.iter()
                .zip(&target_mean)
                .map(|(ei, ti)| -(ti - ei * proj) / norm)
                .collect()
        } else {
            target_mean.iter().map(|t| -t / norm).collect()
        };
        let d_z: Vec<f64> = d_act
            .iter()
            .zip(&act)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();

        let d_x: Vec<f64> = self
            .image_projection
            .chunks_exact(EMBED_DIM)
            .map(|row| row.iter().zip(&d_z).map(|(w, d)| w * d).sum())
            .collect();
        let grad = resample_adjoint(&d_x, (PATCH_SIZE, PATCH_SIZE), (h, w));
        (mean_loss, GradientField::from_raw(h, w, grad))
    }
}

/// Text targets for `captions`, each weighted by its replication count.
pub fn caption_targets<E: DualEncoder + ?Sized>(
    model: &E,
    captions: &[Caption],
) -> Result<Vec<WeightedTarget>> {
    captions
        .iter()
        .map(|c| {
            Ok(WeightedTarget {
                embedding: model.embed_text(c)?,
                weight: c.replication() as f64,
            })
        })
        .collect()
}

/// Gradient of the replication-weighted mean caption loss with respect to
/// the pixels of `img`.
pub fn grad_wrt_pixels<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
) -> Result<GradientField> {
    if captions.is_empty() {
        return Err(Error::InvalidArgument("at least one caption required".into()));
    }
    let targets = caption_targets(model, captions)?;
    Ok(model.loss_and_grad(img, &targets).1)
}

/// Replication-weighted mean caption loss at `img`.
pub fn caption_loss<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
) -> Result<f64> {
    if captions.is_empty() {
        return Err(Error::InvalidArgument("at least one caption required".into()));
    }
    let e = model.embed_image(img);
    let mut total = 0.0;
    let mut weight = 0.0;
    for c in captions {
        let w = c.replication() as f64;
        total += w * loss(&e, &model.embed_text(c)?);
        weight += w;
    }
    Ok(total / weight)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(h, w, |_, _, _| 0.1 + 0.8 * rng.random::<f64>())
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(7);
        let b = init_model(7);
        assert_eq!(a, b);
        let c = init_model(8);
        assert_ne!(a.image_projection, c.image_projection);
    }

    #[test]
    fn seed_zero_weights_are_small_and_finite() {
        let m = init_model(0);
        for w in m.image_projection.iter().chain(&m.token_table).chain(&m.text_projection) {
            assert!(w.is_finite() && w.abs() < 1.0);
        }
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn image_embedding_is_unit_and_deterministic() {
        let m = init_model(1);
        let img = random_image(20, 24, 3);
        let e = m.embed_image(&img);
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert_eq!(e, m.embed_image(&img.clone()));
    }

    #[test]
    fn zero_image_embeds_to_floored_zero() {
        let m = init_model(1);
        let e = m.embed_image(&ImageBuffer::zeros(8, 8));
        // tanh(W^T 0) = 0, and 0 / max(0, floor) = 0.
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn text_embedding_properties() {
        let m = init_model(2);
        let a = m.embed_text(&Caption::new("a red car").unwrap()).unwrap();
        assert_eq!(a, m.embed_text(&Caption::new("a red car").unwrap()).unwrap());
        let b = m.embed_text(&Caption::new("car red a").unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let r = m.embed_text(&Caption::replicated("a red car", 3).unwrap()).unwrap();
        assert_eq!(a, r);
        assert!(Caption::new("   ").is_err());
    }

    #[test]
    fn single_token_hand_trace() {
        let m = init_model(4);
        let b = token_bucket("truck");
        let row = &m.token_table[b * EMBED_DIM..(b + 1) * EMBED_DIM];
        let mut z = vec![0.0; EMBED_DIM];
        for j in 0..EMBED_DIM {
            for i in 0..EMBED_DIM {
                z[j] += row[i] * m.text_projection[i * EMBED_DIM + j];
            }
        }
        let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = m.embed_text(&Caption::new("TRUCK").unwrap()).unwrap();
        for (a, b) in e.values().iter().zip(&h) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_reference_points() {
        let e = Embedding::normalized(vec![1.0, 0.0]);
        let f = Embedding::normalized(vec![0.0, 1.0]);
        let g = Embedding::normalized(vec![-1.0, 0.0]);
        assert_eq!(loss(&e, &e), 0.0);
        assert_eq!(loss(&e, &g), 2.0);
        assert_eq!(loss(&e, &f), 1.0);
        assert_eq!(loss(&e, &f), loss(&f, &e));
    }

    #[test]
    fn replication_and_linearity_of_gradient() {
        let m = init_model(5);
        let img = random_image(8, 8, 9);
        let c = Caption::new("a white van").unwrap();
        let g1 = grad_wrt_pixels(&m, &img, std::slice::from_ref(&c)).unwrap();
        let g3 = grad_wrt_pixels(&m, &img, &[Caption::replicated("a white van", 3).unwrap()]).unwrap();
        for (a, b) in g1.data().iter().zip(g3.data()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }

        let d = Caption::new("two pedestrians crossing").unwrap();
        let gd = grad_wrt_pixels(&m, &img, std::slice::from_ref(&d)).unwrap();
        let both = grad_wrt_pixels(&m, &img, &[c, d]).unwrap();
        for ((a, b), s) in g1.data().iter().zip(gd.data()).zip(both.data()) {
            assert!((0.5 * (a + b) - s).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_and_grad_reports_caption_loss() {
        let m = init_model(6);
        let img = random_image(12, 10, 1);
        let caps = [Caption::new("green light").unwrap(), Caption::replicated("black car", 2).unwrap()];
        let targets = caption_targets(&m, &caps).unwrap();
        let (l, _) = m.loss_and_grad(&img, &targets);
        assert!((l - caption_loss(&m, &img, &caps).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_caption_list_rejected() {
        let m = init_model(0);
        assert!(grad_wrt_pixels(&m, &ImageBuffer::zeros(4, 4), &[]).is_err());
    }
}
