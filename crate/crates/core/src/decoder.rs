//! Contrastive decoding over a positive and a negative prompt context.
//!
//! Each step queries the provider for both contexts, keeps the tokens that are
//! plausible under the positive context (the head), scores them by
//! `log P_pos(x) - gamma * log P_neg(x)`, renormalizes the scores with a
//! softmax and picks a token. The chosen token is appended to both contexts so
//! they always share the same generated suffix.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::DistributionProvider;
use crate::distribution::{PolarityPromptPair, TokenDistribution, TokenId};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_APC_RATIO: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: usize = 64;

/// Vocabularies up to this size are dumped in full in trace files.
pub const FULL_DUMP_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecodeStrategy {
    Greedy,
    Sample { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub gamma: f64,
    /// Plausibility ratio; `None` disables the head mask entirely.
    pub apc_ratio: Option<f64>,
    pub max_tokens: usize,
    pub strategy: DecodeStrategy,
    pub stop_tokens: BTreeSet<TokenId>,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            apc_ratio: Some(DEFAULT_APC_RATIO),
            max_tokens: DEFAULT_MAX_TOKENS,
            strategy: DecodeStrategy::Greedy,
            stop_tokens: BTreeSet::new(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(r) = self.apc_ratio {
            check_ratio(r)?;
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        Ok(())
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "plausibility ratio must lie in (0, 1], got {r}"
        )))
    }
}

/// Tokens whose positive-context probability is at least `apc_ratio` times
/// the largest one, in ascending id order.
///
/// `p(x) >= r * p_max` is evaluated as `exp(z(x) - z_max) >= r`, so the
/// softmax normalizer never enters.
pub fn plausibility_head(pos: &TokenDistribution, apc_ratio: f64) -> Result<Vec<TokenId>> {
    check_ratio(apc_ratio)?;
    let max = pos.max_logit();
    Ok(pos
        .logits()
        .iter()
        .enumerate()
        .filter(|(_, &z)| (z - max).exp() >= apc_ratio)
        .map(|(i, _)| i)
        .collect())
}

/// Per-token contrastive scores; `None` marks tokens outside the head.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveScores(Vec<Option<f64>>);

impl ContrastiveScores {
    pub fn new(scores: Vec<Option<f64>>) -> Self {
        Self(scores)
    }

    pub fn as_slice(&self) -> &[Option<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn head(&self) -> Vec<TokenId> {
        self.0.iter().enumerate().filter_map(|(i, s)| s.map(|_| i)).collect()
    }

    /// Highest unmasked score, lowest id on ties.
    pub fn argmax(&self) -> Option<TokenId> {
        let mut best: Option<(TokenId, f64)> = None;
        for (i, s) in self.0.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

pub fn contrastive_scores(
    pos: &TokenDistribution,
    neg: &TokenDistribution,
    gamma: f64,
    head: &[TokenId],
) -> Result<ContrastiveScores> {
    if pos.len() != neg.len() {
        return Err(Error::VocabMismatch {
            expected: pos.len(),
            actual: neg.len(),
        });
    }
    if head.is_empty() {
        return Err(Error::invalid("plausibility head is empty"));
    }
    let lp_pos = pos.log_probs();
    let lp_neg = neg.log_probs();
    let mut scores = vec![None; pos.len()];
    for &x in head {
        if x >= pos.len() {
            return Err(Error::TokenOutOfRange { id: x, size: pos.len() });
        }
        scores[x] = Some(lp_pos[x] - gamma * lp_neg[x]);
    }
    Ok(ContrastiveScores(scores))
}

/// Softmax over the unmasked scores; masked tokens get exactly zero.
pub fn adjusted_distribution(scores: &ContrastiveScores) -> Result<Vec<f64>> {
    let max = scores
        .0
        .iter()
        .flatten()
        .copied()
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
        .ok_or_else(|| Error::invalid("every score is masked"))?;
    let exps: Vec<f64> = scores.0.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Positive and negative token sequences sharing one generated suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualContext {
    positive_seq: Vec<TokenId>,
    negative_seq: Vec<TokenId>,
    generated: Vec<TokenId>,
    positive_prompt_len: usize,
    negative_prompt_len: usize,
}

impl DualContext {
    pub fn new(positive_prompt: Vec<TokenId>, negative_prompt: Vec<TokenId>) -> Self {
        Self {
            positive_prompt_len: positive_prompt.len(),
            negative_prompt_len: negative_prompt.len(),
            positive_seq: positive_prompt,
            negative_seq: negative_prompt,
            generated: Vec::new(),
        }
    }

    pub fn push(&mut self, token: TokenId) {
        self.positive_seq.push(token);
        self.negative_seq.push(token);
        self.generated.push(token);
    }

    pub fn positive_seq(&self) -> &[TokenId] {
        &self.positive_seq
    }

    pub fn negative_seq(&self) -> &[TokenId] {
        &self.negative_seq
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.generated
    }

    pub fn positive_prompt(&self) -> &[TokenId] {
        &self.positive_seq[..self.positive_prompt_len]
    }

    pub fn negative_prompt(&self) -> &[TokenId] {
        &self.negative_seq[..self.negative_prompt_len]
    }

    pub fn positive_prompt_len(&self) -> usize {
        self.positive_prompt_len
    }

    pub fn negative_prompt_len(&self) -> usize {
        self.negative_prompt_len
    }

    /// Both sequences end with `generated` right after their prompt.
    pub fn is_synchronized(&self) -> bool {
        self.positive_seq[self.positive_prompt_len..] == self.generated[..]
            && self.negative_seq[self.negative_prompt_len..] == self.generated[..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub positive: TokenDistribution,
    /// Absent for positive-only (vanilla) decoding.
    pub negative: Option<TokenDistribution>,
    pub head: Vec<TokenId>,
    pub adjusted: Vec<f64>,
    pub selected: TokenId,
    /// The selected token was a stop token and was not appended.
    pub stop: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
}

/// Logits as stored in a trace line: the full vector, or `[id, logit]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogitDump {
    Full(Vec<f64>),
    Top(Vec<(TokenId, f64)>),
}

impl LogitDump {
    fn of(d: &TokenDistribution, top_m: usize) -> Self {
        if d.len() <= FULL_DUMP_LIMIT {
            LogitDump::Full(d.logits().to_vec())
        } else {
            LogitDump::Top(d.top(top_m))
        }
    }

    /// `(id, logit)` pairs in id order for full dumps, as stored otherwise.
    pub fn pairs(&self) -> Vec<(TokenId, f64)> {
        match self {
            LogitDump::Full(v) => v.iter().copied().enumerate().collect(),
            LogitDump::Top(p) => p.clone(),
        }
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        match self {
            LogitDump::Full(v) => v.get(id).copied(),
            LogitDump::Top(p) => p.iter().find(|(i, _)| *i == id).map(|(_, z)| *z),
        }
    }
}

/// One JSONL line of a serialized trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub step: usize,
    pub selected: TokenId,
    pub head: Vec<TokenId>,
    pub pos_logits: LogitDump,
    pub neg_logits: Option<LogitDump>,
    pub adjusted: BTreeMap<TokenId, f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stop: bool,
}

impl DecodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_lines(&self, top_m: usize) -> Vec<TraceLine> {
        self.steps
            .iter()
            .enumerate()
            .map(|(step, s)| TraceLine {
                step,
                selected: s.selected,
                head: s.head.clone(),
                pos_logits: LogitDump::of(&s.positive, top_m),
                neg_logits: s.negative.as_ref().map(|d| LogitDump::of(d, top_m)),
                adjusted: s
                    .adjusted
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(i, &p)| (i, p))
                    .collect(),
                stop: s.stop,
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W, top_m: usize) -> Result<()> {
        for line in self.to_lines(top_m) {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceLine>> {
    let mut lines = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("trace line {}: {e}", n + 1)))?;
        lines.push(parsed);
    }
    Ok(lines)
}

/// How prompt and question are joined into one context string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub const DEFAULT: &'static str = "{prompt} {question}";

    pub fn new(template: impl Into<String>) -> Result<Self> {
        let t = template.into();
        if !t.contains("{question}") {
            return Err(Error::invalid("prompt template must contain {question}"));
        }
        Ok(Self(t))
    }

    pub fn render(&self, prompt: &str, question: &str) -> String {
        self.render_with_context(prompt, question, "")
    }

    pub fn render_with_context(&self, prompt: &str, question: &str, context: &str) -> String {
        self.0
            .replace("{prompt}", prompt)
            .replace("{context}", context)
            .replace("{question}", question)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(Self::DEFAULT.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub ids: Vec<TokenId>,
    pub text: String,
    pub trace: DecodeTrace,
}

/// A decode that stopped on an error, with the steps completed before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct DecodeFailure {
    #[source]
    pub error: Error,
    pub trace: DecodeTrace,
}

impl From<Error> for DecodeFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: DecodeTrace::default(),
        }
    }
}

/// Drives decode sessions against one provider.
///
/// A decoder owns its RNG, so a `Sample` strategy draws a reproducible
/// stream across the sessions it runs.
pub struct Decoder<P> {
    provider: P,
    cfg: ContrastiveConfig,
    template: PromptTemplate,
    rng: ChaCha8Rng,
}

impl<P: DistributionProvider> Decoder<P> {
    pub fn new(provider: P, cfg: ContrastiveConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = match cfg.strategy {
            DecodeStrategy::Sample { seed } => seed,
            DecodeStrategy::Greedy => 0,
        };
        Ok(Self {
            provider,
            cfg,
            template: PromptTemplate::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn config(&self) -> &ContrastiveConfig {
        &self.cfg
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    /// Encodes both prompt contexts and checks them against the context limit.
    pub fn open(&self, pair: &PolarityPromptPair) -> Result<DualContext> {
        self.open_with_context(pair, "")
    }

    pub fn open_with_context(&self, pair: &PolarityPromptPair, context: &str) -> Result<DualContext> {
        pair.validate()?;
        let pos = self.provider.encode(
            &self
                .template
                .render_with_context(&pair.positive, &pair.question, context),
        )?;
        let neg = self.provider.encode(
            &self
                .template
                .render_with_context(&pair.negative, &pair.question, context),
        )?;
        self.check_size(pos.len().max(neg.len()))?;
        Ok(DualContext::new(pos, neg))
    }

    fn check_size(&self, prompt_len: usize) -> Result<()> {
        if let Some(limit) = self.provider.context_limit() {
            let needed = prompt_len + self.cfg.max_tokens;
            if needed > limit {
                return Err(Error::ContextTooLong { needed, limit });
            }
        }
        Ok(())
    }

    fn select(&mut self, scores: &ContrastiveScores, adjusted: &[f64]) -> TokenId {
        match self.cfg.strategy {
            DecodeStrategy::Greedy => scores.argmax().expect("head is nonempty"),
            DecodeStrategy::Sample { .. } => sample_categorical(&mut self.rng, adjusted),
        }
    }

    /// One contrastive step. Appends the token to both contexts unless it is
    /// a stop token.
    pub fn step(&mut self, ctx: &mut DualContext) -> Result<(TokenId, TraceStep)> {
        let pos = self
            .provider
            .next_distribution(ctx.positive_seq(), ctx.positive_prompt_len())?;
        let neg = self
            .provider
            .next_distribution(ctx.negative_seq(), ctx.negative_prompt_len())?;
        let head = match self.cfg.apc_ratio {
            Some(r) => plausibility_head(&pos, r)?,
            None => (0..pos.len()).collect(),
        };
        let scores = contrastive_scores(&pos, &neg, self.cfg.gamma, &head)?;
        let adjusted = adjusted_distribution(&scores)?;
        let token = self.select(&scores, &adjusted);
        let stop = self.cfg.stop_tokens.contains(&token);
        if !stop {
            ctx.push(token);
        }
        Ok((
            token,
            TraceStep {
                positive: pos,
                negative: Some(neg),
                head,
                adjusted,
                selected: token,
                stop,
            },
        ))
    }

    /// Positive-context-only step: plain softmax over the positive logits.
    pub fn step_vanilla(&mut self, ctx: &mut DualContext) -> Result<(TokenId, TraceStep)> {
        let pos = self
            .provider
            .next_distribution(ctx.positive_seq(), ctx.positive_prompt_len())?;
        let adjusted = pos.softmax();
        let token = match self.cfg.strategy {
            DecodeStrategy::Greedy => pos.argmax(),
            DecodeStrategy::Sample { .. } => sample_categorical(&mut self.rng, &adjusted),
        };
        let stop = self.cfg.stop_tokens.contains(&token);
        if !stop {
            ctx.push(token);
        }
        Ok((
            token,
            TraceStep {
                head: (0..pos.len()).collect(),
                positive: pos,
                negative: None,
                adjusted,
                selected: token,
                stop,
            },
        ))
    }

    pub fn decode(&mut self, pair: &PolarityPromptPair) -> Result<DecodeOutput, DecodeFailure> {
        let ctx = self.open(pair)?;
        self.run(ctx, false)
    }

    pub fn decode_vanilla(&mut self, pair: &PolarityPromptPair) -> Result<DecodeOutput, DecodeFailure> {
        let ctx = self.open(pair)?;
        self.run(ctx, true)
    }

    /// Runs a session from an already opened context.
    pub fn run(&mut self, mut ctx: DualContext, vanilla: bool) -> Result<DecodeOutput, DecodeFailure> {
        let mut trace = DecodeTrace::default();
        for _ in 0..self.cfg.max_tokens {
            let result = if vanilla {
                self.step_vanilla(&mut ctx)
            } else {
                self.step(&mut ctx)
            };
            match result {
                Ok((_, step)) => {
                    let stop = step.stop;
                    trace.steps.push(step);
                    debug_assert!(ctx.is_synchronized());
                    if stop {
                        break;
                    }
                }
                Err(error) => return Err(DecodeFailure { error, trace }),
            }
        }
        let ids = ctx.generated().to_vec();
        let text = self.provider.vocabulary().decode(&ids);
        Ok(DecodeOutput { ids, text, trace })
    }
}

/// Convenience wrapper: one contrastive session with the default template.
pub fn decode<P: DistributionProvider>(
    pair: &PolarityPromptPair,
    provider: P,
    cfg: &ContrastiveConfig,
) -> Result<DecodeOutput, DecodeFailure> {
    Decoder::new(provider, cfg.clone())?.decode(pair)
}

/// Inverse-CDF draw from a probability vector. Zero-probability entries are
/// never returned.
pub fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
