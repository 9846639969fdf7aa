//! Knowledge-token capture and context-faithfulness metrics.
//!
//! [`capture`] scans a generation's per-step logits for the first token that
//! separates the contextual answer from the parametric one and records the
//! logit and rank each answer's token held at that point. [`classify_stubborn`]
//! turns a capture into a diagnosis, and [`aggregate_metrics`] computes
//! ConR, ParR and the memorization ratio MR = ParR / (ParR + ConR).

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::decoder::TraceLine;
use crate::distribution::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Common,
    ContOnly,
    ParaOnly,
    Neither,
}

/// Classifies a token string by case-sensitive substring containment of its
/// trimmed form in each answer. Blank strings are `Neither`.
pub fn common_membership(s: &str, s_cont: &str, s_para: &str) -> Membership {
    let s = s.trim();
    if s.is_empty() {
        return Membership::Neither;
    }
    match (s_cont.contains(s), s_para.contains(s)) {
        (true, true) => Membership::Common,
        (true, false) => Membership::ContOnly,
        (false, true) => Membership::ParaOnly,
        (false, false) => Membership::Neither,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureResult {
    pub p_cont: Option<f64>,
    pub p_para: Option<f64>,
    pub rank_cont: Option<usize>,
    pub rank_para: Option<usize>,
    /// Step of the first capture.
    pub position: Option<usize>,
}

/// Capture over sparse steps: each step lists `(token, logit)` candidates in
/// any order. Ranks count only the listed candidates, so they are exact for
/// full vectors and for the leading entries of a top-M dump.
pub fn capture_candidates(
    steps: &[Vec<(TokenId, f64)>],
    vocab: &Vocabulary,
    s_cont: &str,
    s_para: &str,
) -> CaptureResult {
    let mut out = CaptureResult::default();
    let surface = |id: TokenId| vocab.surface(id).unwrap_or("").trim();

    for (i, step) in steps.iter().enumerate() {
        if step.is_empty() {
            continue;
        }
        let mut order = step.clone();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let greedy = surface(order[0].0);
        if greedy.is_empty() || (!s_cont.contains(greedy) && !s_para.contains(greedy)) {
            continue;
        }

        let rank = |z: f64| 1 + order.iter().take_while(|(_, o)| *o > z).count();
        for &(id, z) in &order {
            let s = surface(id);
            if s.is_empty() {
                continue;
            }
            match common_membership(s, s_cont, s_para) {
                Membership::Common if out.p_cont.is_none() && out.p_para.is_none() => break,
                Membership::ContOnly if out.p_cont.is_none() => {
                    out.p_cont = Some(z);
                    out.rank_cont = Some(rank(z));
                    out.position.get_or_insert(i);
                }
                Membership::ParaOnly if out.p_para.is_none() => {
                    out.p_para = Some(z);
                    out.rank_para = Some(rank(z));
                    out.position.get_or_insert(i);
                }
                _ => {}
            }
        }
        if out.p_cont.is_some() && out.p_para.is_some() {
            break;
        }
    }
    out
}

/// Knowledge-token capture over dense per-step distributions.
pub fn capture(trace: &[TokenDistribution], vocab: &Vocabulary, s_cont: &str, s_para: &str) -> CaptureResult {
    let steps: Vec<Vec<(TokenId, f64)>> = trace
        .iter()
        .map(|d| d.logits().iter().copied().enumerate().collect())
        .collect();
    capture_candidates(&steps, vocab, s_cont, s_para)
}

/// Which per-step scores of a trace file the probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    /// Raw positive-context logits.
    Positive,
    /// Log of the adjusted distribution that selected each token; tokens
    /// outside the head are absent.
    Adjusted,
}

pub fn trace_candidates(lines: &[TraceLine], source: ProbeSource) -> Vec<Vec<(TokenId, f64)>> {
    lines
        .iter()
        .map(|l| match source {
            ProbeSource::Positive => l.pos_logits.pairs(),
            ProbeSource::Adjusted => l
                .adjusted
                .iter()
                .filter(|(_, &p)| p > 0.0)
                .map(|(&id, &p)| (id, p.ln()))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubbornClass {
    Flipped,
    Stubborn,
    Absent,
}

pub fn classify_stubborn(r: &CaptureResult) -> StubbornClass {
    match r.rank_cont {
        Some(1) => StubbornClass::Flipped,
        Some(_) => StubbornClass::Stubborn,
        None => StubbornClass::Absent,
    }
}

/// Rank counts in the bins {1, 2-5, 6-20, >20}, plus captures that never happened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub rank_1: usize,
    pub rank_2_5: usize,
    pub rank_6_20: usize,
    pub rank_over_20: usize,
    pub missing: usize,
}

impl RankHistogram {
    pub fn add(&mut self, rank: Option<usize>) {
        match rank {
            None => self.missing += 1,
            Some(1) => self.rank_1 += 1,
            Some(2..=5) => self.rank_2_5 += 1,
            Some(6..=20) => self.rank_6_20 += 1,
            Some(_) => self.rank_over_20 += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub context: String,
    pub answer_context: String,
    pub answer_parametric: String,
}

impl ConflictRecord {
    pub fn validate(&self) -> Result<()> {
        if self.answer_context.trim().is_empty() || self.answer_parametric.trim().is_empty() {
            return Err(Error::invalid(format!("record {}: answers must be nonempty", self.id)));
        }
        if self.answer_context == self.answer_parametric {
            return Err(Error::invalid(format!("record {}: answers must differ", self.id)));
        }
        Ok(())
    }
}

/// Reads a JSONL dataset, one [`ConflictRecord`] per nonblank line.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<ConflictRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConflictRecord =
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("dataset line {}: {e}", n + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHits {
    pub hits_context: bool,
    pub hits_parametric: bool,
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case- and whitespace-insensitive containment of each answer in the output.
pub fn score_response(output: &str, record: &ConflictRecord) -> ResponseHits {
    let out = normalize(output);
    let hit = |answer: &str| {
        let a = normalize(answer);
        !a.is_empty() && out.contains(&a)
    };
    ResponseHits {
        hits_context: hit(&record.answer_context),
        hits_parametric: hit(&record.answer_parametric),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMetrics {
    pub con_r: f64,
    pub par_r: f64,
    pub mr: f64,
    /// ConR and ParR were both zero; `mr` is reported as 0.
    pub mr_undefined: bool,
}

/// ParR / (ParR + ConR), `None` when both are zero.
pub fn memorization_ratio(con_r: f64, par_r: f64) -> Option<f64> {
    let denom = par_r + con_r;
    (denom > 0.0).then(|| par_r / denom)
}

impl BehaviorMetrics {
    pub fn from_rates(con_r: f64, par_r: f64) -> Self {
        let mr = memorization_ratio(con_r, par_r);
        Self {
            con_r,
            par_r,
            mr: mr.unwrap_or(0.0),
            mr_undefined: mr.is_none(),
        }
    }
}

pub fn aggregate_metrics(scored: &[ResponseHits]) -> Result<BehaviorMetrics> {
    if scored.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty result list"));
    }
    let n = scored.len() as f64;
    let con = scored.iter().filter(|h| h.hits_context).count() as f64;
    let par = scored.iter().filter(|h| h.hits_parametric).count() as f64;
    Ok(BehaviorMetrics::from_rates(con / n, par / n))
}

/// Metrics report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub con_r: f64,
    pub par_r: f64,
    pub mr: f64,
    pub mr_undefined: bool,
    pub n: usize,
    pub stubborn_count: usize,
}

impl MetricsReport {
    pub fn new(metrics: BehaviorMetrics, n: usize, stubborn_count: usize) -> Self {
        Self {
            con_r: metrics.con_r,
            par_r: metrics.par_r,
            mr: metrics.mr,
            mr_undefined: metrics.mr_undefined,
            n,
            stubborn_count,
        }
    }
}
