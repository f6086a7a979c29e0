use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use super::run::{run_batch_with_model, RunConfig, RunReport};
use crate::dtp::Rgb;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Eps,
    TextColor,
    TextQuantity,
    Font,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "eps" => Ok(SweepAxis::Eps),
            "text_color" => Ok(SweepAxis::TextColor),
            "text_quantity" => Ok(SweepAxis::TextQuantity),
            "font" => Ok(SweepAxis::Font),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis {other:?} (expected eps, text_color, text_quantity or font)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Eps => "eps",
            SweepAxis::TextColor => "text_color",
            SweepAxis::TextQuantity => "text_quantity",
            SweepAxis::Font => "font",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Real(f64),
    Color(Rgb),
    Count(usize),
    Path(PathBuf),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Real(v) => write!(f, "{v:.6}"),
            SweepValue::Color(c) => write!(
                f,
                "#{:02x}{:02x}{:02x}",
                (c[0] * 255.0).round() as u8,
                (c[1] * 255.0).round() as u8,
                (c[2] * 255.0).round() as u8
            ),
            SweepValue::Count(n) => write!(f, "{n}"),
            SweepValue::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Accepts plain reals and fractions such as `8/255`.
pub fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("not a number: {s:?}"));
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            n / d
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(v)
}

/// Named colors or `#rrggbb`.
pub fn parse_color(s: &str) -> Result<Rgb> {
    let s = s.trim().to_ascii_lowercase();
    let named = match s.as_str() {
        "black" => Some([0.0, 0.0, 0.0]),
        "white" => Some([1.0, 1.0, 1.0]),
        "red" => Some([1.0, 0.0, 0.0]),
        "green" => Some([0.0, 1.0, 0.0]),
        "blue" => Some([0.0, 0.0, 1.0]),
        "yellow" => Some([1.0, 1.0, 0.0]),
        _ => None,
    };
    if let Some(c) = named {
        return Ok(c);
    }
    let hex = s.strip_prefix('#').unwrap_or(&s);
    if hex.len() != 6 || !hex.is_ascii() {
        return Err(Error::InvalidArgument(format!("not a color: {s:?}")));
    }
    let mut rgb = [0.0; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::InvalidArgument(format!("not a color: {s:?}")))?;
        *c = f64::from(byte) / 255.0;
    }
    Ok(rgb)
}

pub fn parse_axis_values(axis: SweepAxis, raw: &[&str]) -> Result<Vec<SweepValue>> {
    raw.iter()
        .map(|s| match axis {
            SweepAxis::Eps => {
                let v = parse_real(s)?;
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!("eps must be >= 0, got {v}")));
                }
                Ok(SweepValue::Real(v))
            }
            SweepAxis::TextColor => parse_color(s).map(SweepValue::Color),
            SweepAxis::TextQuantity => s
                .trim()
                .parse()
                .map(SweepValue::Count)
                .map_err(|_| Error::InvalidArgument(format!("not a count: {s:?}"))),
            SweepAxis::Font => Ok(SweepValue::Path(PathBuf::from(s.trim()))),
        })
        .collect()
}

/// Applies one sweep value to a copy of `cfg`.
pub fn apply(cfg: &RunConfig, axis: SweepAxis, value: &SweepValue) -> Result<RunConfig> {
    let mut out = cfg.clone();
    match (axis, value) {
        (SweepAxis::Eps, SweepValue::Real(v)) => out.pmp.eps = *v,
        (SweepAxis::TextColor, SweepValue::Color(c)) => out.dtp.color = *c,
        (SweepAxis::TextQuantity, SweepValue::Count(n)) => out.dtp.quantity = *n,
        (SweepAxis::Font, SweepValue::Path(p)) => out.dtp.font = Some(p.clone()),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "value {value} does not fit axis {axis}"
            )))
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub mean_asr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub final_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunReport>,
}

impl SweepReport {
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("{:<16} {:>9} {:>9} {:>11}\n", self.axis, "mean_asr", "mean_ssim", "final_score");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9} {:>9} {:>11}\n",
                r.value,
                fmt(r.mean_asr),
                fmt(r.mean_ssim),
                fmt(r.final_score)
            ));
        }
        out
    }
}

/// One batch run per value, each in `<output_dir>/<axis>_<k>/`.
pub fn ablation_sweep(
    entries: &[ManifestEntry],
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no sweep values".into()));
    }
    cfg.validate()?;
    let model = cfg.load_model()?;
    let mut rows = Vec::with_capacity(values.len());
    let mut runs = Vec::with_capacity(values.len());
    for (k, value) in values.iter().enumerate() {
        let mut run_cfg = apply(cfg, axis, value)?;
        run_cfg.output_dir = cfg.output_dir.join(format!("{axis}_{k}"));
        let report = run_batch_with_model(entries, &run_cfg, &model)?;
        rows.push(SweepRow {
            value: value.to_string(),
            mean_asr: report.mean_asr(),
            mean_ssim: report.mean_ssim(),
            final_score: report.score.final_score,
        });
        runs.push(report);
    }
    let report = SweepReport { axis, rows, runs };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join("sweep.json");
    let json = serde_json::to_string_pretty(&report).expect("sweep serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
