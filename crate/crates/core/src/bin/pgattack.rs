use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pgattack::dtp::Rgb;
use pgattack::font::GlyphFont;
use pgattack::model::{init_model, save_snapshot};
use pgattack::pipeline::{
    ablation_sweep, load_manifest, parse_axis_values, parse_color, parse_real, rescore, run_batch,
    PhaseKind, RunConfig, SweepAxis,
};
use pgattack::synth::write_fixture;

#[derive(Parser)]
#[command(name = "pgattack", version, about = "Mask-constrained adversarial attack toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack every manifest entry and write PNGs plus report.json.
    Attack {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the attack once per value of one parameter.
    Sweep {
        /// eps, text_color, text_quantity or font.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. `4/255,8/255,16/255`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score previously written adversarial images.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<id>.png` files.
        #[arg(long)]
        adv_dir: PathBuf,
        /// Write the score JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        score_alpha: f64,
    },
    /// Write a synthetic driving-scene dataset and manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Save the seeded surrogate weights as a snapshot file.
    ExportWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Save the built-in bitmap font in the loadable font format.
    ExportFont {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// L∞ budget; accepts fractions such as `16/255`.
    #[arg(long, value_parser = real)]
    eps: Option<f64>,
    /// Per-step size of the multi-scale loop.
    #[arg(long, value_parser = real)]
    alpha: Option<f64>,
    #[arg(long)]
    steps_t: Option<usize>,
    #[arg(long)]
    steps_n: Option<usize>,
    /// Momentum decay.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated scale factors.
    #[arg(long, value_delimiter = ',', value_parser = real)]
    scales: Option<Vec<f64>>,
    #[arg(long)]
    replication: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_delimiter = ',', default_value = "pmp,dtp")]
    phases: Vec<String>,
    /// Surrogate weight seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Surrogate weight snapshot; overrides `--seed`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    font: Option<PathBuf>,
    /// ASR weight in the final score.
    #[arg(long, default_value_t = 0.5)]
    score_alpha: f64,
    #[arg(long)]
    quantity: Option<usize>,
    #[arg(long, value_parser = color)]
    text_color: Option<Rgb>,
    #[arg(long)]
    text_size: Option<usize>,
    #[arg(long, value_parser = color)]
    outline: Option<Rgb>,
    #[arg(long, default_value_t = 0)]
    placement_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    mask_threshold: f64,
}

fn real(s: &str) -> Result<f64, String> {
    parse_real(s).map_err(|e| e.to_string())
}

fn color(s: &str) -> Result<Rgb, String> {
    parse_color(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig {
            output_dir: self.out.clone(),
            workers: self.workers,
            model_seed: self.seed,
            weights: self.weights.clone(),
            alpha: self.score_alpha,
            mask_threshold: self.mask_threshold,
            phases: self
                .phases
                .iter()
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.parse::<PhaseKind>())
                .collect::<Result<_, _>>()?,
            ..RunConfig::default()
        };
        let pmp = &mut cfg.pmp;
        if let Some(v) = self.eps {
            pmp.eps = v;
        }
        if let Some(v) = self.alpha {
            pmp.step_alpha = v;
        }
        if let Some(v) = self.steps_t {
            pmp.steps_t = v;
        }
        if let Some(v) = self.steps_n {
            pmp.steps_n = v;
        }
        if let Some(v) = self.lambda {
            pmp.momentum_lambda = v;
        }
        if let Some(v) = &self.scales {
            pmp.scale_factors = v.clone();
        }
        if let Some(v) = self.replication {
            pmp.caption_replication = v;
        }
        let dtp = &mut cfg.dtp;
        if let Some(v) = self.quantity {
            dtp.quantity = v;
        }
        if let Some(v) = self.text_color {
            dtp.color = v;
        }
        if let Some(v) = self.text_size {
            dtp.size = v;
        }
        dtp.outline = self.outline;
        dtp.placement_seed = self.placement_seed;
        dtp.font = self.font.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 0 when every entry succeeded, 2 when some failed.
fn partial(failures: usize, total: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failures}/{total} entries failed");
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Attack { run } => {
            let cfg = run.config()?;
            let entries = load_manifest(&run.manifest)?;
            let report = run_batch(&entries, &cfg)?;
            match report.score.final_score {
                Some(s) => println!("final score {s:.4} over {} images", report.score.images.len()),
                None => println!("no entry produced a score"),
            }
            Ok(partial(report.failures(), entries.len()))
        }
        Command::Sweep { axis, values, run } => {
            let cfg = run.config()?;
            let entries = load_manifest(&run.manifest)?;
            let raw: Vec<&str> = values.iter().map(String::as_str).collect();
            let values = parse_axis_values(axis, &raw)?;
            let report = ablation_sweep(&entries, &cfg, axis, &values)?;
            print!("{}", report.table());
            let failures = report.runs.iter().map(|r| r.failures()).sum();
            Ok(partial(failures, entries.len() * report.runs.len()))
        }
        Command::Score {
            manifest,
            adv_dir,
            out,
            seed,
            weights,
            score_alpha,
        } => {
            let cfg = RunConfig {
                model_seed: seed,
                weights,
                alpha: score_alpha,
                ..RunConfig::default()
            };
            cfg.validate()?;
            let entries = load_manifest(&manifest)?;
            let model = cfg.load_model()?;
            let (report, failures) = rescore(&entries, &adv_dir, &model, &cfg)?;
            for (id, why) in &failures {
                log::warn!("entry {id}: {why}");
            }
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            if report.final_score.is_none() {
                bail!("no entry could be scored");
            }
            Ok(partial(failures.len(), entries.len()))
        }
        Command::Synth { out, count, size, seed } => {
            let manifest = write_fixture(&out, count, size, seed)?;
            println!("{}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportWeights { seed, out } => {
            save_snapshot(&init_model(seed), &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportFont { out } => {
            GlyphFont::builtin().save(&out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
