//! Vocabulary and next-token distribution primitives.
//!
//! All probability math is done in `f64` with max-subtraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Ordered token surface strings. Ids are positions; surfaces may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::invalid(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// First id whose surface equals `surface`.
    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == surface)
    }

    /// Concatenated surfaces; out-of-range ids are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().filter_map(|&id| self.surface(id)).collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Unnormalized next-token scores over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    logits: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("empty logit vector"));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {} at index {i}", logits[i])));
        }
        Ok(Self { logits })
    }

    /// Checks that the distribution covers exactly `vocab`.
    pub fn for_vocabulary(logits: Vec<f64>, vocab: &Vocabulary) -> Result<Self> {
        if logits.len() != vocab.len() {
            return Err(Error::VocabMismatch {
                expected: vocab.len(),
                actual: logits.len(),
            });
        }
        Self::new(logits)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn max_logit(&self) -> f64 {
        self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_sum_exp(&self) -> f64 {
        let max = self.max_logit();
        max + self.logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
    }

    pub fn softmax(&self) -> Vec<f64> {
        let max = self.max_logit();
        let exps: Vec<f64> = self.logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let lse = self.log_sum_exp();
        self.logits.iter().map(|&z| z - lse).collect()
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &z) in self.logits.iter().enumerate().skip(1) {
            if z > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// 1-based rank: one plus the number of tokens with a strictly greater logit.
    pub fn rank_of(&self, token: TokenId) -> Result<usize> {
        let z = *self.logits.get(token).ok_or(Error::TokenOutOfRange {
            id: token,
            size: self.logits.len(),
        })?;
        Ok(1 + self.logits.iter().filter(|&&other| other > z).count())
    }

    /// Adds `c` to every logit.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.logits.iter().map(|z| z + c).collect())
    }

    /// `(id, logit)` pairs of the `m` largest logits, highest first.
    pub fn top(&self, m: usize) -> Vec<(TokenId, f64)> {
        let mut pairs: Vec<(TokenId, f64)> = self.logits.iter().copied().enumerate().collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.truncate(m);
        pairs
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(logits: Vec<f64>) -> Result<Self> {
        Self::new(logits)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.logits
    }
}

/// A query with its paired positive and negative instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityPromptPair {
    pub positive: String,
    pub negative: String,
    pub question: String,
}

impl PolarityPromptPair {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>, question: impl Into<String>) -> Result<Self> {
        let pair = Self {
            positive: positive.into(),
            negative: negative.into(),
            question: question.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive.is_empty() || self.negative.is_empty() || self.question.is_empty() {
            return Err(Error::invalid("positive, negative and question must all be nonempty"));
        }
        if self.positive == self.negative {
            return Err(Error::invalid("positive and negative prompts must differ"));
        }
        Ok(())
    }
}
