//! Synthetic knowledge-conflict models.
//!
//! A conflict scenario is a [`TableModelSpec`] in which the parametric answer
//! token leads the contextual one under both prompts, by `pos_margin` logits
//! in the positive context and by `neg_margin` in the negative one. Every
//! other token sits at least 3 logits below both. After the first step both
//! contexts put their mass on the end-of-sequence token.

use super::table::{RuleMatch, TableModelSpec, TableRule};
use crate::distribution::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const POSITIVE_MARKER: &str = "<pos>";
pub const NEGATIVE_MARKER: &str = "<neg>";
pub const EOS_TOKEN: &str = "</s>";
pub const CONTEXT_TOKEN: &str = "United";
pub const PARAMETRIC_TOKEN: &str = "France";

const OTHER_GAP: f64 = 3.0;
const EOS_GAP: f64 = 8.0;

/// Vocabulary with the markers, end-of-sequence, the two default answer
/// tokens and any `extra` surfaces appended in order.
pub fn conflict_vocabulary(extra: &[&str]) -> Vocabulary {
    let mut tokens: Vec<String> = [
        "<unk>",
        " ",
        POSITIVE_MARKER,
        NEGATIVE_MARKER,
        EOS_TOKEN,
        CONTEXT_TOKEN,
        PARAMETRIC_TOKEN,
        "States",
        "the",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    tokens.extend(extra.iter().map(|s| s.to_string()));
    Vocabulary::new(tokens).expect("vocabulary has more than two tokens")
}

/// Ids the scenario rules refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioTokens {
    pub cont: TokenId,
    pub para: TokenId,
    pub eos: TokenId,
}

fn answer_step(n: usize, t: ScenarioTokens, margin: f64) -> Vec<f64> {
    let para: f64 = 0.0;
    let cont = -margin;
    let floor = para.min(cont) - OTHER_GAP;
    let mut v = vec![floor; n];
    v[t.para] = para;
    v[t.cont] = cont;
    v
}

fn eos_step(n: usize, t: ScenarioTokens) -> Vec<f64> {
    let mut v = vec![-EOS_GAP; n];
    v[t.eos] = 0.0;
    v
}

/// The positive and negative rule pair for one conflict, keyed on arbitrary
/// prompt substrings. Used to pack many scenarios into one table.
pub fn conflict_rules(
    vocab_len: usize,
    tokens: ScenarioTokens,
    pos_margin: f64,
    neg_margin: f64,
    positive_contains: &str,
    negative_contains: &str,
) -> Result<[TableRule; 2]> {
    let ScenarioTokens { cont, para, eos } = tokens;
    if cont == para {
        return Err(Error::invalid("contextual and parametric tokens must differ"));
    }
    if eos == cont || eos == para {
        return Err(Error::invalid(
            "end-of-sequence token must differ from the answer tokens",
        ));
    }
    for id in [cont, para, eos] {
        if id >= vocab_len {
            return Err(Error::TokenOutOfRange { id, size: vocab_len });
        }
    }
    if !pos_margin.is_finite() || !neg_margin.is_finite() {
        return Err(Error::invalid("margins must be finite"));
    }
    let rule = |contains: &str, margin: f64| TableRule {
        matcher: RuleMatch {
            prompt_contains: contains.to_string(),
        },
        steps: vec![answer_step(vocab_len, tokens, margin), eos_step(vocab_len, tokens)],
    };
    Ok([rule(positive_contains, pos_margin), rule(negative_contains, neg_margin)])
}

/// Single-conflict model over `vocab`, which must contain the positive and
/// negative markers and the end-of-sequence token (see
/// [`conflict_vocabulary`]). Prompts are routed by marker.
pub fn conflict_scenario(
    cont_token: TokenId,
    para_token: TokenId,
    pos_margin: f64,
    neg_margin: f64,
    vocab: &Vocabulary,
) -> Result<TableModelSpec> {
    let need = |s: &str| {
        vocab
            .id_of(s)
            .ok_or_else(|| Error::invalid(format!("scenario vocabulary lacks {s:?}")))
    };
    need(POSITIVE_MARKER)?;
    need(NEGATIVE_MARKER)?;
    let eos = need(EOS_TOKEN)?;
    let tokens = ScenarioTokens {
        cont: cont_token,
        para: para_token,
        eos,
    };
    let rules = conflict_rules(
        vocab.len(),
        tokens,
        pos_margin,
        neg_margin,
        POSITIVE_MARKER,
        NEGATIVE_MARKER,
    )?;
    Ok(TableModelSpec {
        vocab: vocab.tokens().to_vec(),
        rules: rules.to_vec(),
        default_steps: vec![eos_step(vocab.len(), tokens)],
        context_limit: None,
    })
}
