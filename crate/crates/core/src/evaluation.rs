//! Vanilla vs. contrastive runs over a knowledge-conflict dataset.

use serde::{Deserialize, Serialize};

use crate::backend::DistributionProvider;
use crate::decoder::{ContrastiveConfig, DecodeStrategy, DecodeTrace, Decoder, PromptTemplate};
use crate::distribution::{PolarityPromptPair, Vocabulary};
use crate::error::Result;
use crate::parallel::{self, Execution};
use crate::probe::{
    aggregate_metrics, capture_candidates, classify_stubborn, score_response, trace_candidates, BehaviorMetrics,
    CaptureResult, ConflictRecord, MetricsReport, ProbeSource, ResponseHits, StubbornClass,
};

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub positive: String,
    pub negative: String,
    pub template: PromptTemplate,
    pub config: ContrastiveConfig,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub text: String,
    pub hits: ResponseHits,
    pub capture: CaptureResult,
    pub class: StubbornClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vanilla: Option<ModeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub promptcd: Option<ModeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub vanilla: MetricsReport,
    pub promptcd: MetricsReport,
    pub total: usize,
    pub scored: usize,
    pub skipped: usize,
    pub records: Vec<RecordOutcome>,
}

/// Capture on a finished trace. Contrastive traces are read through their
/// adjusted distributions, vanilla traces through the raw positive logits.
pub fn capture_trace(trace: &DecodeTrace, vocab: &Vocabulary, record: &ConflictRecord) -> CaptureResult {
    let contrastive = trace.steps.iter().any(|s| s.negative.is_some());
    let source = if contrastive {
        ProbeSource::Adjusted
    } else {
        ProbeSource::Positive
    };
    let steps = trace_candidates(&trace.to_lines(usize::MAX), source);
    capture_candidates(&steps, vocab, &record.answer_context, &record.answer_parametric)
}

fn outcome(text: String, trace: &DecodeTrace, vocab: &Vocabulary, record: &ConflictRecord) -> ModeOutcome {
    let capture = capture_trace(trace, vocab, record);
    ModeOutcome {
        hits: score_response(&text, record),
        class: classify_stubborn(&capture),
        capture,
        text,
    }
}

fn run_record<P: DistributionProvider>(
    index: usize,
    record: &ConflictRecord,
    provider: &P,
    settings: &BenchSettings,
) -> Result<(ModeOutcome, ModeOutcome)> {
    let mut cfg = settings.config.clone();
    if let DecodeStrategy::Sample { seed } = cfg.strategy {
        cfg.strategy = DecodeStrategy::Sample {
            seed: seed.wrapping_add(index as u64),
        };
    }
    let pair = PolarityPromptPair::new(&*settings.positive, &*settings.negative, &*record.question)?;
    let vocab = provider.vocabulary();

    let mut dec = Decoder::new(provider, cfg.clone())?.with_template(settings.template.clone());
    let ctx = dec.open_with_context(&pair, &record.context)?;
    let van = dec.run(ctx, true).map_err(|f| f.error)?;

    let mut dec = Decoder::new(provider, cfg)?.with_template(settings.template.clone());
    let ctx = dec.open_with_context(&pair, &record.context)?;
    let cd = dec.run(ctx, false).map_err(|f| f.error)?;

    Ok((
        outcome(van.text, &van.trace, vocab, record),
        outcome(cd.text, &cd.trace, vocab, record),
    ))
}

fn report(outcomes: &[&ModeOutcome]) -> Result<MetricsReport> {
    let hits: Vec<ResponseHits> = outcomes.iter().map(|o| o.hits).collect();
    let metrics = if hits.is_empty() {
        BehaviorMetrics::from_rates(0.0, 0.0)
    } else {
        aggregate_metrics(&hits)?
    };
    let stubborn = outcomes.iter().filter(|o| o.class == StubbornClass::Stubborn).count();
    Ok(MetricsReport::new(metrics, hits.len(), stubborn))
}

/// Runs every record in both modes. Records whose backend calls fail are
/// logged, skipped and counted.
pub fn run_benchmark<P: DistributionProvider>(
    records: &[ConflictRecord],
    provider: &P,
    settings: &BenchSettings,
) -> Result<BenchReport> {
    settings.config.validate()?;
    let results = parallel::map_range(settings.exec, records.len(), |i| {
        run_record(i, &records[i], provider, settings)
    });

    let mut outcomes = Vec::with_capacity(records.len());
    for (record, result) in records.iter().zip(results) {
        outcomes.push(match result {
            Ok((v, c)) => RecordOutcome {
                id: record.id.clone(),
                vanilla: Some(v),
                promptcd: Some(c),
                error: None,
            },
            Err(e) => {
                log::warn!("record {}: skipped: {e}", record.id);
                RecordOutcome {
                    id: record.id.clone(),
                    vanilla: None,
                    promptcd: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let vanilla: Vec<&ModeOutcome> = outcomes.iter().filter_map(|o| o.vanilla.as_ref()).collect();
    let promptcd: Vec<&ModeOutcome> = outcomes.iter().filter_map(|o| o.promptcd.as_ref()).collect();
    let scored = vanilla.len();
    Ok(BenchReport {
        vanilla: report(&vanilla)?,
        promptcd: report(&promptcd)?,
        total: records.len(),
        scored,
        skipped: records.len() - scored,
        records: outcomes,
    })
}
