//! SSIM, the ASR-weighted final score, and attack-success oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{same_dims, ImageBuffer};
use crate::model::{Caption, DualEncoder, Embedding};

/// Gaussian-window SSIM parameters. Defaults are the canonical 11×11,
/// σ = 1.5, K1 = 0.01, K2 = 0.03 on unit-range data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let center = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - center;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig("ssim window must be odd and positive".into()));
        }
        if !(self.sigma > 0.0) || !(self.dynamic_range > 0.0) || self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::InvalidConfig("ssim sigma, range and constants must be positive".into()));
        }
        Ok(())
    }
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean of the windowed SSIM map over luminance, windows fully inside the
/// image.
pub fn ssim(x: &ImageBuffer, y: &ImageBuffer, params: &SsimParams) -> Result<f64> {
    same_dims(x.dims(), y.dims())?;
    params.validate()?;
    let (h, w) = x.dims();
    if h < params.window || w < params.window {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {}x{} ssim window",
            params.window, params.window
        )));
    }
    let a = x.luminance();
    let b = y.luminance();
    let taps = params.taps();
    let product = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };

    let mu_a = filter_valid(&a, h, w, &taps);
    let mu_b = filter_valid(&b, h, w, &taps);
    let aa = filter_valid(&product(&a, &a), h, w, &taps);
    let bb = filter_valid(&product(&b, &b), h, w, &taps);
    let ab = filter_valid(&product(&a, &b), h, w, &taps);

    let (c1, c2) = (params.c1(), params.c2());
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// One image's attack outcome and similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry {
    pub asr: u8,
    pub ssim: f64,
}

impl From<(u8, f64)> for ScoreEntry {
    fn from((asr, ssim): (u8, f64)) -> Self {
        Self { asr, ssim }
    }
}

/// `asr · (alpha + (1 − alpha) · ssim)`.
pub fn contribution(entry: ScoreEntry, alpha: f64) -> f64 {
    f64::from(entry.asr) * (alpha + (1.0 - alpha) * entry.ssim)
}

/// `(1/n) Σ asr_i · (alpha + (1 − alpha) · ssim_i)`.
pub fn final_score(entries: &[ScoreEntry], alpha: f64) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("no entries to score".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    for e in entries {
        if e.asr > 1 {
            return Err(Error::InvalidArgument(format!("asr must be 0 or 1, got {}", e.asr)));
        }
        if !(-1.0..=1.0).contains(&e.ssim) {
            return Err(Error::InvalidArgument(format!("ssim must be in [-1, 1], got {}", e.ssim)));
        }
    }
    let sum: f64 = entries.iter().map(|&e| contribution(e, alpha)).sum();
    Ok(sum / entries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub asr: u8,
    /// `None` when only the final image is available.
    pub ssim_pre_text: Option<f64>,
    pub ssim_post_text: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub images: Vec<ImageScore>,
    pub alpha: f64,
    /// Absent when no image could be scored.
    pub final_score: Option<f64>,
    pub ssim_params: SsimParams,
}

impl ScoreReport {
    /// Scores each image on its post-text SSIM.
    pub fn build(
        rows: Vec<(String, u8, Option<f64>, f64)>,
        alpha: f64,
        ssim_params: SsimParams,
    ) -> Result<Self> {
        let entries: Vec<ScoreEntry> = rows.iter().map(|r| ScoreEntry { asr: r.1, ssim: r.3 }).collect();
        let final_score = if entries.is_empty() {
            None
        } else {
            Some(final_score(&entries, alpha)?)
        };
        let images = rows
            .into_iter()
            .zip(&entries)
            .map(|((id, asr, pre, post), &e)| ImageScore {
                id,
                asr,
                ssim_pre_text: pre,
                ssim_post_text: post,
                contribution: contribution(e, alpha),
            })
            .collect();
        Ok(Self {
            images,
            alpha,
            final_score,
            ssim_params,
        })
    }
}

/// Judges whether an adversarial image fooled the target.
pub trait AnswerOracle {
    fn evaluate(&self, adv: &ImageBuffer) -> bool;
}

/// Retrieval flip on the surrogate: the attack succeeds when some decoy
/// caption is strictly closer to the image than the true caption.
pub struct SurrogateRetrievalOracle<'a, E: DualEncoder + ?Sized> {
    model: &'a E,
    truth: Embedding,
    decoys: Vec<Embedding>,
}

impl<'a, E: DualEncoder + ?Sized> SurrogateRetrievalOracle<'a, E> {
    pub fn new(model: &'a E, true_caption: &Caption, decoys: &[Caption]) -> Result<Self> {
        if decoys.is_empty() {
            return Err(Error::InvalidArgument("retrieval oracle needs at least one decoy".into()));
        }
        let bag = |c: &Caption| {
            let mut t = c.tokens();
            t.sort();
            t
        };
        let truth_bag = bag(true_caption);
        if let Some(d) = decoys.iter().find(|d| bag(d) == truth_bag) {
            return Err(Error::InvalidArgument(format!(
                "decoy {:?} is identical to the true caption",
                d.text()
            )));
        }
        Ok(Self {
            model,
            truth: model.embed_text(true_caption)?,
            decoys: decoys.iter().map(|d| model.embed_text(d)).collect::<Result<_>>()?,
        })
    }

    /// `max_decoy cos − true cos`; positive means the retrieval flipped.
    pub fn margin(&self, adv: &ImageBuffer) -> f64 {
        let e = self.model.embed_image(adv);
        let best_decoy = self
            .decoys
            .iter()
            .map(|d| e.cosine(d))
            .fold(f64::NEG_INFINITY, f64::max);
        best_decoy - e.cosine(&self.truth)
    }
}

impl<E: DualEncoder + ?Sized> AnswerOracle for SurrogateRetrievalOracle<'_, E> {
    fn evaluate(&self, adv: &ImageBuffer) -> bool {
        // Ties count as failure.
        self.margin(adv) > 0.0
    }
}

pub fn evaluate_asr(oracle: &dyn AnswerOracle, adv: &ImageBuffer) -> u8 {
    u8::from(oracle.evaluate(adv))
}
