//! Precision mask perturbation: a two-loop momentum sign-gradient attack
//! whose every update is confined to the attackable region of a mask and to
//! an L∞ ball around the clean image.
//!
//! The first loop runs `steps_n` amplified steps (10α) against replicated
//! captions on the unscaled image to warm up momentum. The second loop
//! restarts from the clean image, keeps the warmed momentum, and runs
//! `steps_t` steps of size α with gradients summed over the scale pyramid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    check_eps, clip_in_place, compose_in_place, same_dims, Dims, GradientField, ImageBuffer,
    MaskImage,
};
use crate::model::{caption_targets, Caption, DualEncoder, WeightedTarget, NORM_FLOOR};
use crate::resize::{build_pyramid, check_factor, resample_adjoint, DEFAULT_SCALE_FACTORS};

pub const DEFAULT_STEP_ALPHA: f64 = 2.0 / 255.0;
pub const DEFAULT_EPS: f64 = 16.0 / 255.0;
/// Multiplier on α for the interactive warm-up loop.
pub const INTERACTIVE_STEP_MULTIPLIER: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmpConfig {
    pub step_alpha: f64,
    pub steps_t: usize,
    pub steps_n: usize,
    pub momentum_lambda: f64,
    pub eps: f64,
    pub scale_factors: Vec<f64>,
    pub caption_replication: usize,
}

impl Default for PmpConfig {
    fn default() -> Self {
        Self {
            step_alpha: DEFAULT_STEP_ALPHA,
            steps_t: 60,
            steps_n: 5,
            momentum_lambda: 1.0,
            eps: DEFAULT_EPS,
            scale_factors: DEFAULT_SCALE_FACTORS.to_vec(),
            caption_replication: 3,
        }
    }
}

impl PmpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.step_alpha > 0.0 && self.step_alpha.is_finite()) {
            return bad(format!("step_alpha must be > 0, got {}", self.step_alpha));
        }
        if self.steps_t == 0 {
            return bad("steps_t must be >= 1".into());
        }
        if !self.momentum_lambda.is_finite() {
            return bad("momentum_lambda must be finite".into());
        }
        check_eps(self.eps).map_err(|_| Error::InvalidConfig(format!("eps must be >= 0, got {}", self.eps)))?;
        if self.scale_factors.is_empty() {
            return bad("scale_factors must not be empty".into());
        }
        for &f in &self.scale_factors {
            check_factor(f).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if self.caption_replication == 0 {
            return bad("caption_replication must be >= 1".into());
        }
        Ok(())
    }
}

/// Accumulated gradient `g` carried across iterations and loops.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub g: GradientField,
}

impl MomentumState {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            g: GradientField::zeros(dims.0, dims.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackTrace {
    /// Caption loss of each interactive iterate, after its update.
    pub interactive_losses: Vec<f64>,
    /// Caption loss of each multi-scale iterate, after its update.
    pub multiscale_losses: Vec<f64>,
    pub clean_loss: f64,
    pub final_loss: f64,
    pub final_linf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Interactive,
    MultiScale,
}

/// Called with every iterate the attack produces.
pub type Observer<'a> = &'a mut dyn FnMut(Phase, usize, &ImageBuffer);

/// `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `g' = λ·g + grad_sum`.
pub fn momentum_update(
    state: &MomentumState,
    grad_sum: &GradientField,
    lambda: f64,
) -> Result<MomentumState> {
    same_dims(state.g.dims(), grad_sum.dims())?;
    let (h, w) = state.g.dims();
    let data = state
        .g
        .data()
        .iter()
        .zip(grad_sum.data())
        .map(|(g, s)| lambda * g + s)
        .collect();
    Ok(MomentumState {
        g: GradientField::from_raw(h, w, data),
    })
}

/// Sums L1-normalized per-pair gradients, each mapped back to `full_dims`.
/// Captions cycle when there are more images than captions.
pub fn normalized_grad_sum<E: DualEncoder + ?Sized>(
    model: &E,
    images: &[&ImageBuffer],
    captions: &[Caption],
    full_dims: Dims,
) -> Result<GradientField> {
    if captions.is_empty() {
        return Err(Error::InvalidArgument("empty caption list".into()));
    }
    let targets = captions
        .iter()
        .map(|c| {
            Ok(WeightedTarget {
                embedding: model.embed_text(c)?,
                weight: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    normalized_grad_sum_targets(model, images, &targets, full_dims).map(|(g, _)| g)
}

/// Returns the summed gradient and the loss of the first pair.
fn normalized_grad_sum_targets<E: DualEncoder + ?Sized>(
    model: &E,
    images: &[&ImageBuffer],
    targets: &[WeightedTarget],
    full_dims: Dims,
) -> Result<(GradientField, f64)> {
    if images.is_empty() || targets.is_empty() {
        return Err(Error::InvalidArgument("empty image or caption list".into()));
    }
    let mut sum = GradientField::zeros(full_dims.0, full_dims.1);
    let mut first_loss = 0.0;
    for (j, img) in images.iter().enumerate() {
        if img.height() > full_dims.0 || img.width() > full_dims.1 {
            return Err(Error::dims(full_dims, img.dims()));
        }
        let target = &targets[j % targets.len()];
        let (loss, grad) = model.loss_and_grad(img, std::slice::from_ref(target));
        if j == 0 {
            first_loss = loss;
        }
        let norm = grad.l1_norm().max(NORM_FLOOR);
        let normalized: Vec<f64> = grad.data().iter().map(|g| g / norm).collect();
        let full = resample_adjoint(&normalized, img.dims(), full_dims);
        for (s, v) in sum.data_mut().iter_mut().zip(&full) {
            *s += v;
        }
    }
    Ok((sum, first_loss))
}

/// `Clip_{orig,eps}(orig·M + (current + step·sign(g))·(1−M))`.
fn masked_sign_step(
    orig: &ImageBuffer,
    current: &ImageBuffer,
    g: &GradientField,
    step: f64,
    mask: &MaskImage,
    eps: f64,
) -> ImageBuffer {
    let mut candidate: Vec<f64> = current
        .data()
        .iter()
        .zip(g.data())
        .map(|(x, gi)| x + step * sign(*gi))
        .collect();
    compose_in_place(&mut candidate, orig.data(), mask);
    clip_in_place(&mut candidate, orig.data(), eps);
    ImageBuffer::from_raw(orig.height(), orig.width(), candidate)
}

fn check_inputs(img: &ImageBuffer, mask: &MaskImage, captions: &[Caption], cfg: &PmpConfig) -> Result<()> {
    same_dims(img.dims(), mask.dims())?;
    if captions.is_empty() {
        return Err(Error::InvalidArgument("empty caption set".into()));
    }
    cfg.validate()
}

fn iterate_loss<E: DualEncoder + ?Sized>(model: &E, img: &ImageBuffer, targets: &[WeightedTarget]) -> f64 {
    model.loss_and_grad(img, targets).0
}

/// Warm-up loop: `steps_n` amplified steps, returning the last iterate, the
/// accumulated momentum and per-iteration losses.
pub fn interactive_phase<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
    mask: &MaskImage,
    cfg: &PmpConfig,
) -> Result<(ImageBuffer, MomentumState, Vec<f64>)> {
    interactive_phase_observed(model, img, captions, mask, cfg, &mut |_, _, _| {})
}

pub fn interactive_phase_observed<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
    mask: &MaskImage,
    cfg: &PmpConfig,
    observer: Observer<'_>,
) -> Result<(ImageBuffer, MomentumState, Vec<f64>)> {
    check_inputs(img, mask, captions, cfg)?;
    let targets = unit_targets(model, captions)?;
    let step = INTERACTIVE_STEP_MULTIPLIER * cfg.step_alpha;
    let mut state = MomentumState::zeros(img.dims());
    let mut adv = img.clone();
    let mut losses = Vec::with_capacity(cfg.steps_n);
    for k in 0..cfg.steps_n {
        // Every replicated caption is paired with the unscaled iterate.
        let images = vec![&adv; targets.len()];
        let (grad_sum, _) = normalized_grad_sum_targets(model, &images, &targets, img.dims())?;
        state = momentum_update(&state, &grad_sum, cfg.momentum_lambda)?;
        adv = masked_sign_step(img, &adv, &state.g, step, mask, cfg.eps);
        observer(Phase::Interactive, k, &adv);
        losses.push(iterate_loss(model, &adv, &targets));
    }
    Ok((adv, state, losses))
}

/// Main loop: restarts from the clean image with inherited momentum and
/// runs `steps_t` steps over the scale pyramid.
pub fn multiscale_phase<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
    mask: &MaskImage,
    cfg: &PmpConfig,
    warm_momentum: MomentumState,
) -> Result<(ImageBuffer, Vec<f64>)> {
    multiscale_phase_observed(model, img, captions, mask, cfg, warm_momentum, &mut |_, _, _| {})
}

pub fn multiscale_phase_observed<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    captions: &[Caption],
    mask: &MaskImage,
    cfg: &PmpConfig,
    warm_momentum: MomentumState,
    observer: Observer<'_>,
) -> Result<(ImageBuffer, Vec<f64>)> {
    check_inputs(img, mask, captions, cfg)?;
    same_dims(img.dims(), warm_momentum.g.dims())?;
    let targets = unit_targets(model, captions)?;
    let mut state = warm_momentum;
    let mut adv = img.clone();
    let mut losses = Vec::with_capacity(cfg.steps_t);
    for k in 0..cfg.steps_t {
        let pyramid = build_pyramid(&adv, &cfg.scale_factors)?;
        let levels: Vec<&ImageBuffer> = pyramid.levels.iter().collect();
        let (grad_sum, _) = normalized_grad_sum_targets(model, &levels, &targets, img.dims())?;
        state = momentum_update(&state, &grad_sum, cfg.momentum_lambda)?;
        adv = masked_sign_step(img, &adv, &state.g, cfg.step_alpha, mask, cfg.eps);
        observer(Phase::MultiScale, k, &adv);
        losses.push(iterate_loss(model, &adv, &targets));
    }
    Ok((adv, losses))
}

/// The replicated caption set for one caption.
pub fn replicate_caption(caption: &Caption, m: usize) -> Result<Vec<Caption>> {
    (0..m.max(1)).map(|_| Caption::new(caption.text())).collect()
}

/// Full two-loop attack on one image.
pub fn pmp_attack<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    caption: &Caption,
    mask: &MaskImage,
    cfg: &PmpConfig,
) -> Result<(ImageBuffer, AttackTrace)> {
    pmp_attack_observed(model, img, caption, mask, cfg, &mut |_, _, _| {})
}

pub fn pmp_attack_observed<E: DualEncoder + ?Sized>(
    model: &E,
    img: &ImageBuffer,
    caption: &Caption,
    mask: &MaskImage,
    cfg: &PmpConfig,
    observer: Observer<'_>,
) -> Result<(ImageBuffer, AttackTrace)> {
    cfg.validate()?;
    let captions = replicate_caption(caption, cfg.caption_replication)?;
    let base = caption_targets(model, std::slice::from_ref(caption))?;
    let clean_loss = iterate_loss(model, img, &base);

    let (_, warm, interactive_losses) =
        interactive_phase_observed(model, img, &captions, mask, cfg, &mut *observer)?;
    let (adv, multiscale_losses) =
        multiscale_phase_observed(model, img, &captions, mask, cfg, warm, &mut *observer)?;

    let trace = AttackTrace {
        interactive_losses,
        multiscale_losses,
        clean_loss,
        final_loss: iterate_loss(model, &adv, &base),
        final_linf: adv.linf_distance(img)?,
    };
    Ok((adv, trace))
}

fn unit_targets<E: DualEncoder + ?Sized>(model: &E, captions: &[Caption]) -> Result<Vec<WeightedTarget>> {
    captions
        .iter()
        .map(|c| {
            Ok(WeightedTarget {
                embedding: model.embed_text(c)?,
                weight: 1.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ToyDualEncoder};
    use crate::resize::resize_bilinear;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(h, w, |_, _, _| rng.random::<f64>())
    }

    fn center_mask(h: usize, w: usize) -> MaskImage {
        MaskImage::from_fn(h, w, |y, x| !(y >= h / 4 && y < 3 * h / 4 && x >= w / 4 && x < 3 * w / 4))
    }

    fn fixture() -> (ToyDualEncoder, ImageBuffer, Caption, MaskImage) {
        (
            init_model(11),
            random_image(24, 24, 2),
            Caption::new("a red car parked by the road").unwrap(),
            center_mask(24, 24),
        )
    }

    fn small_cfg() -> PmpConfig {
        PmpConfig {
            steps_t: 4,
            steps_n: 2,
            ..PmpConfig::default()
        }
    }

    #[test]
    fn defaults_follow_published_settings() {
        let c = PmpConfig::default();
        assert_eq!(c.step_alpha, 2.0 / 255.0);
        assert_eq!(c.steps_t, 60);
        assert_eq!(c.scale_factors, vec![1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(c.caption_replication, 3);
        c.validate().unwrap();
        assert!(PmpConfig { steps_t: 0, ..c.clone() }.validate().is_err());
        assert!(PmpConfig { eps: -1.0, ..c.clone() }.validate().is_err());
        assert!(PmpConfig { scale_factors: vec![1.5], ..c }.validate().is_err());
    }

    #[test]
    fn momentum_update_cases() {
        let g = GradientField::new(1, 1, vec![1.0, -2.0, 3.0]).unwrap();
        let s = GradientField::new(1, 1, vec![0.5, 0.5, -0.5]).unwrap();
        let state = MomentumState { g: g.clone() };
        assert_eq!(momentum_update(&state, &s, 0.0).unwrap().g, s);
        let zero = GradientField::zeros(1, 1);
        assert_eq!(momentum_update(&state, &zero, 0.7).unwrap().g, g.scaled(0.7));

        let mut acc = MomentumState::zeros((1, 1));
        for _ in 0..5 {
            acc = momentum_update(&acc, &s, 1.0).unwrap();
        }
        assert_eq!(acc.g, s.scaled(5.0));
        assert!(momentum_update(&state, &GradientField::zeros(2, 1), 1.0).is_err());
    }

    #[test]
    fn normalized_sum_single_and_doubled() {
        let (m, img, cap, _) = fixture();
        let one = normalized_grad_sum(&m, &[&img], std::slice::from_ref(&cap), img.dims()).unwrap();
        assert!((one.l1_norm() - 1.0).abs() < 1e-6);
        let two = normalized_grad_sum(&m, &[&img, &img], std::slice::from_ref(&cap), img.dims()).unwrap();
        assert_eq!(two, one.scaled(2.0));
        assert!(normalized_grad_sum(&m, &[], std::slice::from_ref(&cap), img.dims()).is_err());
        assert!(normalized_grad_sum(&m, &[&img], &[], img.dims()).is_err());
    }

    #[test]
    fn normalized_sum_over_scales_is_termwise() {
        let (m, img, cap, _) = fixture();
        let levels: Vec<ImageBuffer> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&f| resize_bilinear(&img, f).unwrap())
            .collect();
        let refs: Vec<&ImageBuffer> = levels.iter().collect();
        let sum = normalized_grad_sum(&m, &refs, std::slice::from_ref(&cap), img.dims()).unwrap();

        let mut expected = GradientField::zeros(24, 24);
        for level in &levels {
            let g = crate::model::grad_wrt_pixels(&m, level, std::slice::from_ref(&cap)).unwrap();
            let g = g.scaled(1.0 / g.l1_norm());
            let full = crate::resize::resize_adjoint(&g, img.dims()).unwrap();
            expected.add_assign(&full).unwrap();
        }
        for (a, b) in sum.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interactive_degenerate_cases() {
        let (m, img, cap, mask) = fixture();
        let caps = replicate_caption(&cap, 3).unwrap();
        let cfg = PmpConfig { steps_n: 0, ..small_cfg() };
        let (out, state, losses) = interactive_phase(&m, &img, &caps, &mask, &cfg).unwrap();
        assert_eq!(out, img);
        assert_eq!(state, MomentumState::zeros(img.dims()));
        assert!(losses.is_empty());

        let (out, _, _) =
            interactive_phase(&m, &img, &caps, &MaskImage::ones(24, 24), &small_cfg()).unwrap();
        assert_eq!(out, img);

        let cfg = PmpConfig { eps: 0.0, ..small_cfg() };
        let (out, state, _) = interactive_phase(&m, &img, &caps, &mask, &cfg).unwrap();
        assert_eq!(out, img);
        assert!(state.g.l1_norm() > 0.0);

        assert!(interactive_phase(&m, &img, &caps, &MaskImage::ones(3, 3), &cfg).is_err());
    }

    #[test]
    fn multiscale_single_step_hand_execution() {
        let (m, img, cap, mask) = fixture();
        let caps = replicate_caption(&cap, 3).unwrap();
        let cfg = PmpConfig { steps_t: 1, momentum_lambda: 0.8, ..PmpConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let warm_data = (0..24 * 24 * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let warm = MomentumState { g: GradientField::new(24, 24, warm_data).unwrap() };

        let (out, _) = multiscale_phase(&m, &img, &caps, &mask, &cfg, warm.clone()).unwrap();

        let pyramid = build_pyramid(&img, &cfg.scale_factors).unwrap();
        let refs: Vec<&ImageBuffer> = pyramid.levels.iter().collect();
        let grads = normalized_grad_sum(&m, &refs, &caps, img.dims()).unwrap();
        let stepped: Vec<f64> = img
            .data()
            .iter()
            .zip(warm.g.data().iter().zip(grads.data()))
            .map(|(x, (g, s))| x + cfg.step_alpha * sign(0.8 * g + s))
            .collect();
        let stepped = ImageBuffer::from_clamped(24, 24, stepped).unwrap();
        let composed = crate::image::masked_compose(&img, &stepped, &mask).unwrap();
        let expected = crate::image::clip_linf(&composed, &img, cfg.eps).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn multiscale_mask_all_ones_returns_clean() {
        let (m, img, cap, _) = fixture();
        let caps = replicate_caption(&cap, 3).unwrap();
        let (out, _) = multiscale_phase(
            &m,
            &img,
            &caps,
            &MaskImage::ones(24, 24),
            &small_cfg(),
            MomentumState::zeros(img.dims()),
        )
        .unwrap();
        assert_eq!(out, img);
        assert!(multiscale_phase(&m, &img, &caps, &MaskImage::ones(24, 24), &small_cfg(), MomentumState::zeros((2, 2))).is_err());
    }

    #[test]
    fn attack_respects_mask_and_budget() {
        let (m, img, cap, mask) = fixture();
        let cfg = small_cfg();
        let (adv, trace) = pmp_attack(&m, &img, &cap, &mask, &cfg).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                if mask.is_preserved(y, x) {
                    assert_eq!(adv.pixel(y, x), img.pixel(y, x));
                }
            }
        }
        assert!(adv.linf_distance(&img).unwrap() <= cfg.eps + 1e-9);
        assert_eq!(trace.interactive_losses.len(), cfg.steps_n);
        assert_eq!(trace.multiscale_losses.len(), cfg.steps_t);
        assert!(trace.final_loss > trace.clean_loss);
        let (again, _) = pmp_attack(&m, &img, &cap, &mask, &cfg).unwrap();
        assert_eq!(adv, again);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(3.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }
}
