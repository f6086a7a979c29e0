//! Browser bindings: a synthetic scene the page can perturb, overlay with
//! text, and score.

use pgattack::dtp::{dtp_attack, DtpConfig};
use pgattack::font::GlyphFont;
use pgattack::image::{ImageBuffer, MaskImage};
use pgattack::metrics::{contribution, evaluate_asr, ssim, ScoreEntry, SsimParams, SurrogateRetrievalOracle};
use pgattack::model::{init_model, loss, Caption, DualEncoder, ToyDualEncoder};
use pgattack::pipeline::parse_color;
use pgattack::pmp::{pmp_attack, PmpConfig};
use pgattack::synth::{scene, OBJECT_COLORS, OBJECT_KINDS};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn rgba(img: &ImageBuffer) -> Vec<u8> {
    img.data()
        .chunks_exact(3)
        .flat_map(|p| {
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [q(p[0]), q(p[1]), q(p[2]), 255]
        })
        .collect()
}

#[derive(Serialize)]
struct Ranked {
    caption: String,
    cosine: f64,
}

#[derive(Serialize)]
struct Stats {
    caption: String,
    clean_loss: f64,
    loss: f64,
    linf: f64,
    ssim: f64,
    asr: u8,
    score: f64,
    ranking: Vec<Ranked>,
}

#[wasm_bindgen]
pub struct Demo {
    model: ToyDualEncoder,
    clean: ImageBuffer,
    mask: MaskImage,
    truth: Caption,
    decoys: Vec<Caption>,
    perturbed: ImageBuffer,
    result: ImageBuffer,
    font: GlyphFont,
}

#[wasm_bindgen]
impl Demo {
    /// A `size`×`size` scene. The true caption is whichever color/kind
    /// caption the surrogate already ranks first on the clean image.
    #[wasm_bindgen(constructor)]
    pub fn new(scene_seed: u32, size: usize) -> Result<Demo, JsValue> {
        if !(16..=512).contains(&size) {
            return Err(js_err("size must be in 16..=512"));
        }
        let model = init_model(0);
        let s = scene(size, size, u64::from(scene_seed));
        let candidates: Vec<Caption> = OBJECT_COLORS
            .iter()
            .flat_map(|(c, _)| OBJECT_KINDS.iter().map(move |k| format!("a {c} {k} on the road")))
            .map(|t| Caption::new(t).map_err(js_err))
            .collect::<Result<_, _>>()?;
        let e = model.embed_image(&s.image);
        let cos = |c: &Caption| e.cosine(&model.embed_text(c).expect("caption is non-empty"));
        let best = (0..candidates.len())
            .max_by(|&a, &b| cos(&candidates[a]).total_cmp(&cos(&candidates[b])))
            .expect("candidates are non-empty");
        let mut decoys = candidates;
        let truth = decoys.remove(best);
        Ok(Demo {
            model,
            perturbed: s.image.clone(),
            result: s.image.clone(),
            clean: s.image,
            mask: s.mask,
            truth,
            decoys,
            font: GlyphFont::builtin(),
        })
    }

    pub fn size(&self) -> usize {
        self.clean.width()
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        rgba(&self.clean)
    }

    pub fn result_rgba(&self) -> Vec<u8> {
        rgba(&self.result)
    }

    /// Attackable region in white.
    pub fn mask_rgba(&self) -> Vec<u8> {
        self.mask
            .data()
            .iter()
            .flat_map(|&m| {
                let v = if m == 0 { 255 } else { 0 };
                [v, v, v, 255]
            })
            .collect()
    }

    /// `|result − clean|` scaled by `gain`.
    pub fn difference_rgba(&self, gain: f64) -> Vec<u8> {
        let diff: Vec<f64> = self
            .result
            .data()
            .iter()
            .zip(self.clean.data())
            .map(|(a, b)| ((a - b).abs() * gain).min(1.0))
            .collect();
        rgba(&ImageBuffer::new(self.clean.height(), self.clean.width(), diff).expect("same dims"))
    }

    /// Runs the mask-constrained perturbation from the clean image. `eps`
    /// and `step` are in 1/255 units. Clears any text overlay.
    pub fn perturb(
        &mut self,
        eps: f64,
        step: f64,
        steps: usize,
        lambda: f64,
        whole_image: bool,
    ) -> Result<(), JsValue> {
        let cfg = PmpConfig {
            eps: eps / 255.0,
            step_alpha: step / 255.0,
            steps_t: steps,
            momentum_lambda: lambda,
            ..PmpConfig::default()
        };
        let open;
        let mask = if whole_image {
            open = MaskImage::zeros(self.clean.height(), self.clean.width());
            &open
        } else {
            &self.mask
        };
        let (adv, _) = pmp_attack(&self.model, &self.clean, &self.truth, mask, &cfg).map_err(js_err)?;
        self.perturbed = adv;
        self.result = self.perturbed.clone();
        Ok(())
    }

    pub fn reset(&mut self) {
        self.perturbed = self.clean.clone();
        self.result = self.clean.clone();
    }

    /// Renders `quantity` copies of `text` over the perturbed image.
    #[allow(clippy::too_many_arguments)]
    pub fn overlay(
        &mut self,
        text: &str,
        quantity: usize,
        color: &str,
        size: usize,
        outline: Option<String>,
        seed: u32,
    ) -> Result<(), JsValue> {
        let outline = outline
            .filter(|s| !s.is_empty())
            .map(|s| parse_color(&s))
            .transpose()
            .map_err(js_err)?;
        let cfg = DtpConfig {
            texts: vec![text.to_string()],
            color: parse_color(color).map_err(js_err)?,
            size,
            quantity,
            outline,
            placement_seed: u64::from(seed),
            font: None,
        };
        self.result = dtp_attack(&self.perturbed, &cfg, &self.font).map_err(js_err)?.image;
        Ok(())
    }

    /// JSON: losses, L∞, SSIM, retrieval success, score contribution at
    /// `alpha`, and the top-5 caption ranking for the current result.
    pub fn stats(&self, alpha: f64) -> Result<String, JsValue> {
        let t = self.model.embed_text(&self.truth).map_err(js_err)?;
        let e = self.model.embed_image(&self.result);
        let oracle = SurrogateRetrievalOracle::new(&self.model, &self.truth, &self.decoys).map_err(js_err)?;
        let asr = evaluate_asr(&oracle, &self.result);
        let s = ssim(&self.clean, &self.result, &SsimParams::default()).map_err(js_err)?;
        let mut ranking: Vec<Ranked> = std::iter::once(&self.truth)
            .chain(&self.decoys)
            .map(|c| {
                Ok(Ranked {
                    caption: c.text().to_string(),
                    cosine: e.cosine(&self.model.embed_text(c).map_err(js_err)?),
                })
            })
            .collect::<Result<_, JsValue>>()?;
        ranking.sort_by(|a, b| b.cosine.total_cmp(&a.cosine));
        ranking.truncate(5);
        let stats = Stats {
            caption: self.truth.text().to_string(),
            clean_loss: loss(&self.model.embed_image(&self.clean), &t),
            loss: loss(&e, &t),
            linf: self.result.linf_distance(&self.clean).map_err(js_err)?,
            ssim: s,
            asr,
            score: contribution(ScoreEntry { asr, ssim: s }, alpha),
            ranking,
        };
        serde_json::to_string(&stats).map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturb_overlay_and_stats() {
        let mut d = Demo::new(3, 48).unwrap();
        assert_eq!(d.clean_rgba().len(), 48 * 48 * 4);
        d.perturb(16.0, 2.0, 10, 1.0, false).unwrap();
        let stats: serde_json::Value = serde_json::from_str(&d.stats(0.5).unwrap()).unwrap();
        assert!(stats["loss"].as_f64().unwrap() > stats["clean_loss"].as_f64().unwrap());
        assert!(stats["linf"].as_f64().unwrap() <= 16.0 / 255.0 + 1e-9);
        assert_eq!(stats["ranking"].as_array().unwrap().len(), 5);

        let after_pmp = d.result_rgba();
        d.overlay("STOP", 2, "#ffffff", 8, Some("black".into()), 1).unwrap();
        assert_ne!(d.result_rgba(), after_pmp);
        d.reset();
        assert_eq!(d.result_rgba(), d.clean_rgba());
    }
}
