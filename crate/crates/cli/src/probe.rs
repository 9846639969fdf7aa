use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use promptcd::decoder::read_trace_jsonl;
use promptcd::probe::{
    capture_candidates, classify_stubborn, read_records, trace_candidates, CaptureResult, ProbeSource, RankHistogram,
    StubbornClass,
};
use serde::Serialize;

use crate::config::BackendSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    /// Adjusted distributions for contrastive traces, raw logits otherwise
    Auto,
    Positive,
    Adjusted,
}

#[derive(Debug, Args)]
pub struct ProbeCmd {
    /// Backend whose vocabulary the traces index into
    #[arg(long)]
    backend: BackendSpec,

    /// Conflict records (JSONL), one per trace, in the same order
    #[arg(long)]
    dataset: PathBuf,

    /// Trace JSONL file; repeat once per record
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,

    #[arg(long, value_enum, default_value_t = SourceArg::Auto)]
    source: SourceArg,
}

#[derive(Debug, Serialize)]
struct ProbeRecord {
    id: String,
    source: ProbeSource,
    capture: CaptureResult,
    class: StubbornClass,
}

#[derive(Debug, Default, Serialize)]
struct Counts {
    flipped: usize,
    stubborn: usize,
    absent: usize,
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    records: Vec<ProbeRecord>,
    rank_cont: RankHistogram,
    rank_para: RankHistogram,
    counts: Counts,
}

pub fn run(cmd: ProbeCmd) -> Result<()> {
    let f = File::open(&cmd.dataset).with_context(|| format!("opening {}", cmd.dataset.display()))?;
    let records = read_records(BufReader::new(f))?;
    if records.is_empty() {
        bail!("dataset {} has no records", cmd.dataset.display());
    }
    if records.len() != cmd.traces.len() {
        bail!(
            "{} records but {} traces; give one --trace per record",
            records.len(),
            cmd.traces.len()
        );
    }
    let provider = cmd.backend.open()?;
    let vocab = provider.vocabulary();

    let mut report = ProbeReport {
        records: Vec::new(),
        rank_cont: RankHistogram::default(),
        rank_para: RankHistogram::default(),
        counts: Counts::default(),
    };
    for (record, path) in records.iter().zip(&cmd.traces) {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let lines = read_trace_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        if let Some(l) = lines.iter().find(|l| l.selected >= vocab.len()) {
            bail!(
                "{}: token {} outside the backend vocabulary",
                path.display(),
                l.selected
            );
        }
        let source = match cmd.source {
            SourceArg::Positive => ProbeSource::Positive,
            SourceArg::Adjusted => ProbeSource::Adjusted,
            SourceArg::Auto if lines.iter().any(|l| l.neg_logits.is_some()) => ProbeSource::Adjusted,
            SourceArg::Auto => ProbeSource::Positive,
        };
        let steps = trace_candidates(&lines, source);
        let capture = capture_candidates(&steps, vocab, &record.answer_context, &record.answer_parametric);
        let class = classify_stubborn(&capture);
        report.rank_cont.add(capture.rank_cont);
        report.rank_para.add(capture.rank_para);
        match class {
            StubbornClass::Flipped => report.counts.flipped += 1,
            StubbornClass::Stubborn => report.counts.stubborn += 1,
            StubbornClass::Absent => report.counts.absent += 1,
        }
        report.records.push(ProbeRecord {
            id: record.id.clone(),
            source,
            capture,
            class,
        });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
