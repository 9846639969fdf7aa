use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use promptcd::decoder::{DecodeTrace, Decoder};
use promptcd::PolarityPromptPair;

use crate::config::{BackendSpec, DecodeArgs, RunConfig};

#[derive(Debug, Args)]
pub struct DecodeCmd {
    /// table:PATH or http:URL
    #[arg(long)]
    backend: Option<BackendSpec>,

    /// Prompt that elicits the wanted behaviour
    #[arg(long)]
    positive: Option<String>,

    /// Prompt that elicits the behaviour to contrast away
    #[arg(long)]
    negative: Option<String>,

    #[arg(long)]
    question: Option<String>,

    /// Text substituted for {context} in the template
    #[arg(long, default_value = "")]
    context: String,

    #[command(flatten)]
    decode: DecodeArgs,

    /// Positive-only greedy (or sampled) decoding, no contrast
    #[arg(long)]
    vanilla: bool,

    /// Write the per-step trace as JSONL
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Logits kept per trace line when the vocabulary is too large to dump
    #[arg(long, default_value_t = 20)]
    top_m: usize,

    /// RunConfig JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
}

fn required(flag: Option<String>, from_config: Option<String>, name: &str) -> Result<String> {
    flag.or(from_config)
        .ok_or_else(|| anyhow!("missing --{name} (give the flag or set prompts.{name} in --config)"))
}

fn write_trace(path: &Path, trace: &DecodeTrace, top_m: usize) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trace.write_jsonl(BufWriter::new(f), top_m)?;
    Ok(())
}

pub fn run(cmd: DecodeCmd) -> Result<()> {
    let cfg = match &cmd.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let backend = cmd
        .backend
        .or(cfg.backend)
        .ok_or_else(|| anyhow!("missing --backend (table:PATH or http:URL)"))?;
    let positive = required(cmd.positive, cfg.prompts.positive, "positive")?;
    let negative = required(cmd.negative, cfg.prompts.negative, "negative")?;
    let question = required(cmd.question, cfg.prompts.question, "question")?;
    let pair = PolarityPromptPair::new(positive, negative, question)?;
    let template = cmd.decode.template(cfg.prompts.template.as_deref())?;
    let trace_path = cmd.trace.or(cfg.io.trace);

    let provider = backend.open()?;
    let contrastive = cmd.decode.contrastive(cfg.contrastive.as_ref(), &*provider)?;
    log::info!(
        "decoding with {backend}, gamma {}, apc {:?}",
        contrastive.gamma,
        contrastive.apc_ratio
    );

    let mut dec = Decoder::new(&*provider, contrastive)?.with_template(template);
    let ctx = dec.open_with_context(&pair, &cmd.context)?;
    match dec.run(ctx, cmd.vanilla) {
        Ok(out) => {
            if let Some(p) = &trace_path {
                write_trace(p, &out.trace, cmd.top_m)?;
            }
            println!("{}", out.text);
            Ok(())
        }
        Err(fail) => {
            if let Some(p) = &trace_path {
                write_trace(p, &fail.trace, cmd.top_m)?;
                log::warn!("partial trace of {} steps written to {}", fail.trace.len(), p.display());
            }
            Err(fail.error.into())
        }
    }
}
