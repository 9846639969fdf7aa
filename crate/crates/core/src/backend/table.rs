use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DistributionProvider;
use crate::distribution::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub prompt_contains: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub steps: Vec<Vec<f64>>,
}

/// JSON description of a synthetic model.
///
/// A rule fires when its `prompt_contains` string is a substring of the
/// decoded prompt prefix; the first matching rule wins. Step `k` of the
/// generation reads `steps[k]`, and the last vector repeats once the list
/// runs out. Sequences no rule matches read `default_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableModelSpec {
    pub vocab: Vec<String>,
    #[serde(default)]
    pub rules: Vec<TableRule>,
    pub default_steps: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_limit: Option<usize>,
}

impl TableModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vocab.len();
        if n < 2 {
            return Err(Error::Spec(format!("vocabulary needs at least 2 tokens, got {n}")));
        }
        let check = |steps: &[Vec<f64>], what: &str| -> Result<()> {
            if steps.is_empty() {
                return Err(Error::Spec(format!("{what}: steps must be nonempty")));
            }
            for (k, v) in steps.iter().enumerate() {
                if v.len() != n {
                    return Err(Error::Spec(format!(
                        "{what}: step {k} has {} logits, vocabulary has {n}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Spec(format!("{what}: step {k} has a non-finite logit")));
                }
            }
            Ok(())
        };
        for (i, rule) in self.rules.iter().enumerate() {
            check(&rule.steps, &format!("rule {i}"))?;
        }
        check(&self.default_steps, "default_steps")
    }
}

/// Pure, immutable provider backed by a [`TableModelSpec`].
#[derive(Debug, Clone)]
pub struct TableProvider {
    spec: TableModelSpec,
    vocab: Vocabulary,
}

impl TableProvider {
    pub fn new(spec: TableModelSpec) -> Result<Self> {
        spec.validate()?;
        let vocab = Vocabulary::new(spec.vocab.clone())?;
        Ok(Self { spec, vocab })
    }

    pub fn spec(&self) -> &TableModelSpec {
        &self.spec
    }

    /// Index of the rule that serves a prompt, `None` for the defaults.
    pub fn matching_rule(&self, prompt_text: &str) -> Option<usize> {
        self.spec
            .rules
            .iter()
            .position(|r| prompt_text.contains(&r.matcher.prompt_contains))
    }
}

impl DistributionProvider for TableProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Greedy longest match over surface strings. A character no surface
    /// starts with becomes the reserved id 0.
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let best = self
                .vocab
                .tokens()
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.is_empty() && rest.starts_with(t.as_str()))
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)));
            match best {
                Some((id, t)) => {
                    ids.push(id);
                    rest = &rest[t.len()..];
                }
                None => {
                    ids.push(0);
                    let skip = rest.chars().next().map_or(1, char::len_utf8);
                    rest = &rest[skip..];
                }
            }
        }
        Ok(ids)
    }

    fn next_distribution(&self, ids: &[TokenId], prompt_len: usize) -> Result<TokenDistribution> {
        if prompt_len > ids.len() {
            return Err(Error::invalid(format!(
                "prompt length {prompt_len} exceeds sequence length {}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab.len()) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: self.vocab.len(),
            });
        }
        let prompt_text = self.vocab.decode(&ids[..prompt_len]);
        let steps = match self.matching_rule(&prompt_text) {
            Some(i) => &self.spec.rules[i].steps,
            None => &self.spec.default_steps,
        };
        let k = (ids.len() - prompt_len).min(steps.len() - 1);
        TokenDistribution::new(steps[k].clone())
    }

    fn context_limit(&self) -> Option<usize> {
        self.spec.context_limit
    }
}
