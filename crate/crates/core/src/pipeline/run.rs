use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use crate::dtp::{dtp_attack, DtpConfig};
use crate::error::{Error, Result};
use crate::font::GlyphFont;
use crate::image::{same_dims, ImageBuffer};
use crate::metrics::{evaluate_asr, ssim, ScoreReport, SsimParams, SurrogateRetrievalOracle};
use crate::model::{fnv1a64, init_model, load_snapshot, Caption, DualEncoder, ToyDualEncoder};
use crate::pmp::{pmp_attack, AttackTrace, PmpConfig};
use crate::png_io::{decode_png, encode_png, load_mask, load_png};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Pmp,
    Dtp,
}

impl std::str::FromStr for PhaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pmp" => Ok(PhaseKind::Pmp),
            "dtp" => Ok(PhaseKind::Dtp),
            other => Err(Error::InvalidConfig(format!("unknown phase {other:?}"))),
        }
    }
}

fn one() -> usize {
    1
}

/// Everything that determines a run's output bytes. `output_dir` and
/// `workers` affect where and how fast, not what, so they are not echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub pmp: PmpConfig,
    pub dtp: DtpConfig,
    pub ssim: SsimParams,
    /// Weight of ASR against SSIM in the final score.
    pub alpha: f64,
    pub model_seed: u64,
    /// Weight snapshot overriding `model_seed`.
    pub weights: Option<PathBuf>,
    pub mask_threshold: f64,
    pub phases: Vec<PhaseKind>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip, default = "one")]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pmp: PmpConfig::default(),
            dtp: DtpConfig::default(),
            ssim: SsimParams::default(),
            alpha: 0.5,
            model_seed: 0,
            weights: None,
            mask_threshold: 0.5,
            phases: vec![PhaseKind::Pmp, PhaseKind::Dtp],
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidConfig("at least one phase must be enabled".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        self.pmp.validate()?;
        self.ssim.validate()?;
        // Texts come from the manifest, so only the rendering knobs are checked here.
        DtpConfig {
            texts: vec!["x".into()],
            ..self.dtp.clone()
        }
        .validate()
    }

    pub fn has(&self, phase: PhaseKind) -> bool {
        self.phases.contains(&phase)
    }

    pub fn load_model(&self) -> Result<ToyDualEncoder> {
        match &self.weights {
            Some(path) => load_snapshot(path),
            None => Ok(init_model(self.model_seed)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub id: String,
    pub status: EntryStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File name inside the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub elapsed_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<AttackTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asr: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_pre_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_post_text: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub substituted_chars: Vec<char>,
}

impl EntryRecord {
    fn failed(id: &str, error: &Error, elapsed_ms: f64) -> Self {
        Self {
            id: id.to_string(),
            status: EntryStatus::Failed,
            error: Some(error.to_string()),
            output: None,
            elapsed_ms,
            trace: None,
            asr: None,
            ssim_pre_text: None,
            ssim_post_text: None,
            substituted_chars: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config: RunConfig,
    pub entries: Vec<EntryRecord>,
    pub score: ScoreReport,
    pub elapsed_ms: f64,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.status == EntryStatus::Failed).count()
    }

    pub fn mean_asr(&self) -> Option<f64> {
        mean(self.entries.iter().filter_map(|e| e.asr.map(f64::from)))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.entries.iter().filter_map(|e| e.ssim_post_text))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Placement seed for one entry; depends only on the id so batch order and
/// worker count cannot change it.
pub fn entry_placement_seed(base: u64, id: &str) -> u64 {
    base ^ fnv1a64(id.as_bytes())
}

pub fn entry_dtp_config(cfg: &RunConfig, entry: &ManifestEntry) -> DtpConfig {
    let texts = if entry.deceptive_texts.is_empty() {
        cfg.dtp.texts.clone()
    } else {
        entry.deceptive_texts.clone()
    };
    DtpConfig {
        texts,
        placement_seed: entry_placement_seed(cfg.dtp.placement_seed, &entry.id),
        ..cfg.dtp.clone()
    }
}

fn retrieval_oracle<'a, E: DualEncoder + ?Sized>(
    model: &'a E,
    entry: &ManifestEntry,
    caption: &Caption,
) -> Result<SurrogateRetrievalOracle<'a, E>> {
    let decoys = entry
        .oracle_decoys()
        .iter()
        .map(Caption::new)
        .collect::<Result<Vec<_>>>()?;
    SurrogateRetrievalOracle::new(model, caption, &decoys)
}

/// Runs the enabled phases on one entry, writes `<output_dir>/<id>.png`, and
/// scores the written image.
pub fn run_entry<E: DualEncoder + ?Sized>(
    entry: &ManifestEntry,
    model: &E,
    cfg: &RunConfig,
    font: &GlyphFont,
) -> Result<(ImageBuffer, EntryRecord)> {
    let start = Instant::now();
    if cfg.phases.is_empty() {
        return Err(Error::InvalidConfig("at least one phase must be enabled".into()));
    }
    let img = load_png(&entry.image_path)?;
    let mask = load_mask(&entry.mask_path, cfg.mask_threshold)?;
    same_dims(img.dims(), mask.dims())?;
    let caption = Caption::new(entry.caption.clone())?;
    let oracle = retrieval_oracle(model, entry, &caption)?;

    let (after_pmp, trace) = if cfg.has(PhaseKind::Pmp) {
        let (adv, trace) = pmp_attack(model, &img, &caption, &mask, &cfg.pmp)?;
        (adv, Some(trace))
    } else {
        (img.clone(), None)
    };
    let ssim_pre_text = if trace.is_some() {
        ssim(&img, &after_pmp, &cfg.ssim)?
    } else {
        1.0
    };

    let (final_image, substituted_chars) = if cfg.has(PhaseKind::Dtp) {
        let out = dtp_attack(&after_pmp, &entry_dtp_config(cfg, entry), font)?;
        (out.image, out.substituted)
    } else {
        (after_pmp, Vec::new())
    };

    // Score what is actually written to disk.
    let png = encode_png(&final_image);
    let written = decode_png(&png)?;
    let file_name = format!("{}.png", entry.id);
    let out_path = cfg.output_dir.join(&file_name);
    fs::write(&out_path, &png).map_err(|e| Error::io(&out_path, e))?;

    let record = EntryRecord {
        id: entry.id.clone(),
        status: EntryStatus::Ok,
        error: None,
        output: Some(file_name),
        elapsed_ms: elapsed_ms(start),
        trace,
        asr: Some(evaluate_asr(&oracle, &written)),
        ssim_pre_text: Some(ssim_pre_text),
        ssim_post_text: Some(ssim(&img, &written, &cfg.ssim)?),
        substituted_chars,
    };
    Ok((written, record))
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(dir, e))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

pub fn score_from_records(records: &[EntryRecord], cfg: &RunConfig) -> Result<ScoreReport> {
    let rows = records
        .iter()
        .filter(|r| r.status == EntryStatus::Ok)
        .filter_map(|r| Some((r.id.clone(), r.asr?, r.ssim_pre_text, r.ssim_post_text?)))
        .collect();
    ScoreReport::build(rows, cfg.alpha, cfg.ssim.clone())
}

/// Attacks every entry with up to `workers` in flight and writes
/// `report.json`. Entry failures are recorded, not fatal.
pub fn run_batch(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.load_model()?;
    run_batch_with_model(entries, cfg, &model)
}

pub fn run_batch_with_model<E: DualEncoder + Sync + ?Sized>(
    entries: &[ManifestEntry],
    cfg: &RunConfig,
    model: &E,
) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    let font = cfg.dtp.load_font()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let records: Vec<EntryRecord> = pool.install(|| {
        entries
            .par_iter()
            .map(|entry| {
                let t0 = Instant::now();
                match run_entry(entry, model, cfg, &font) {
                    Ok((_, record)) => record,
                    Err(e) => {
                        log::warn!("entry {}: {e}", entry.id);
                        EntryRecord::failed(&entry.id, &e, elapsed_ms(t0))
                    }
                }
            })
            .collect()
    });

    let score = score_from_records(&records, cfg)?;
    let report = RunReport {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: cfg.clone(),
        entries: records,
        score,
        elapsed_ms: elapsed_ms(start),
    };
    let path = cfg.output_dir.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Re-scores previously written adversarial images `<adv_dir>/<id>.png`
/// against their originals. Only post-text SSIM is recoverable.
pub fn rescore<E: DualEncoder + ?Sized>(
    entries: &[ManifestEntry],
    adv_dir: &Path,
    model: &E,
    cfg: &RunConfig,
) -> Result<(ScoreReport, Vec<(String, String)>)> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for entry in entries {
        let scored = (|| -> Result<(u8, f64)> {
            let img = load_png(&entry.image_path)?;
            let adv = load_png(adv_dir.join(format!("{}.png", entry.id)))?;
            same_dims(img.dims(), adv.dims())?;
            let caption = Caption::new(entry.caption.clone())?;
            let oracle = retrieval_oracle(model, entry, &caption)?;
            Ok((evaluate_asr(&oracle, &adv), ssim(&img, &adv, &cfg.ssim)?))
        })();
        match scored {
            Ok((asr, s)) => rows.push((entry.id.clone(), asr, None, s)),
            Err(e) => failures.push((entry.id.clone(), e.to_string())),
        }
    }
    Ok((ScoreReport::build(rows, cfg.alpha, cfg.ssim.clone())?, failures))
}
