use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use promptcd::attention::{
    carve, AttentionStack, FusionSpec, RefineSpec, ThresholdMode, DEFAULT_EPSILON, DEFAULT_K, DEFAULT_TOP_P,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRange(usize, usize);

impl FromStr for LayerRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return Err(format!("layer range {lo}:{hi} is reversed"));
        }
        Ok(LayerRange(lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Keep the top p proportion of cells
    Proportion,
    /// Keep cells scoring at least p times the peak
    Normalized,
}

#[derive(Debug, Args)]
pub struct CarveCmd {
    /// Positive-prompt attention stack (JSON or raw ATTN)
    #[arg(long)]
    pos_attn: PathBuf,

    /// Negative-prompt attention stack
    #[arg(long)]
    neg_attn: PathBuf,

    #[arg(long)]
    image: PathBuf,

    /// Output PNG
    #[arg(long)]
    out: PathBuf,

    /// Diagnostics JSON; defaults to the output path with a .json extension
    #[arg(long)]
    diagnostics: Option<PathBuf>,

    /// Inclusive layer range to fuse
    #[arg(long, default_value = "20:25")]
    layers: LayerRange,

    #[arg(long, default_value_t = DEFAULT_TOP_P)]
    p: f64,

    /// Number of regions kept
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,

    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,

    /// Pixels added around the crop
    #[arg(long, default_value_t = 0)]
    pad: u32,

    /// Output width; defaults to the input width
    #[arg(long)]
    width: Option<u32>,

    /// Output height; defaults to the input height
    #[arg(long)]
    height: Option<u32>,

    /// Comma-separated p values; writes one output per value
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,

    #[arg(long, value_enum, default_value_t = ModeArg::Proportion)]
    threshold_mode: ModeArg,
}

/// `out.png` with p = 0.3 becomes `out_p0.3.png`.
fn with_suffix(path: &Path, p: f64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut name = format!("{stem}_p{p}");
    if let Some(ext) = path.extension() {
        name.push('.');
        name.push_str(&ext.to_string_lossy());
    }
    path.with_file_name(name)
}

pub fn run(cmd: CarveCmd) -> Result<()> {
    let pos = AttentionStack::load(&cmd.pos_attn)?;
    let neg = AttentionStack::load(&cmd.neg_attn)?;
    let img = image::open(&cmd.image)
        .with_context(|| format!("reading {}", cmd.image.display()))?
        .to_rgb8();
    let fusion = FusionSpec::ramp(cmd.layers.0, cmd.layers.1)?;
    let mut spec = RefineSpec::new(cmd.width.unwrap_or(img.width()), cmd.height.unwrap_or(img.height()));
    spec.k_regions = cmd.k;
    spec.epsilon = cmd.epsilon;
    spec.pad = cmd.pad;
    spec.threshold_mode = match cmd.threshold_mode {
        ModeArg::Proportion => ThresholdMode::Proportion,
        ModeArg::Normalized => ThresholdMode::Normalized,
    };
    let diagnostics = cmd
        .diagnostics
        .clone()
        .unwrap_or_else(|| cmd.out.with_extension("json"));

    let runs: Vec<(f64, PathBuf, PathBuf)> = if cmd.sweep.is_empty() {
        vec![(cmd.p, cmd.out.clone(), diagnostics)]
    } else {
        cmd.sweep
            .iter()
            .map(|&p| (p, with_suffix(&cmd.out, p), with_suffix(&diagnostics, p)))
            .collect()
    };
    for (p, out, diag) in runs {
        if !(p > 0.0 && p <= 1.0) {
            bail!("p must lie in (0, 1], got {p}");
        }
        spec.top_p = p;
        let result = carve(&pos, &neg, &img, &fusion, &spec)?;
        result
            .image
            .save(&out)
            .with_context(|| format!("writing {}", out.display()))?;
        let json = serde_json::to_string_pretty(&result.diagnostics)?;
        fs::write(&diag, json + "\n").with_context(|| format!("writing {}", diag.display()))?;
        let d = &result.diagnostics;
        log::info!(
            "p {p}: tau {:.4}, {} components, crop {:?} -> {}",
            d.tau,
            d.components,
            d.crop_box,
            out.display()
        );
    }
    Ok(())
}
