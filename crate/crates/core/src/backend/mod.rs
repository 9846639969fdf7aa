//! Next-token distribution providers.
//!
//! The decoder only sees [`DistributionProvider`]. Two implementations ship
//! with the crate: [`TableProvider`], a deterministic rule table used for
//! tests and desk experiments, and [`HttpProvider`], a client for an external
//! logit server speaking the `/v1/vocab`, `/v1/encode`, `/v1/logits` protocol.

mod http;
mod scenario;
mod table;

pub use http::{HttpProvider, LogitServerEndpoint, TIMEOUT_ENV};
pub use scenario::{
    conflict_rules, conflict_scenario, conflict_vocabulary, ScenarioTokens, CONTEXT_TOKEN, EOS_TOKEN, NEGATIVE_MARKER,
    PARAMETRIC_TOKEN, POSITIVE_MARKER,
};
pub use table::{RuleMatch, TableModelSpec, TableProvider, TableRule};

use crate::distribution::{TokenDistribution, TokenId, Vocabulary};
use crate::error::Result;

/// Source of next-token distributions for a language model.
///
/// `next_distribution` receives the full sequence plus the length of its
/// prompt prefix. Real models ignore `prompt_len`; the table provider uses it
/// to tell prompt text apart from generated steps.
pub trait DistributionProvider: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;

    fn next_distribution(&self, ids: &[TokenId], prompt_len: usize) -> Result<TokenDistribution>;

    /// Maximum sequence length the backend accepts, if bounded.
    fn context_limit(&self) -> Option<usize> {
        None
    }
}

impl<P: DistributionProvider + ?Sized> DistributionProvider for &P {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).encode(text)
    }

    fn next_distribution(&self, ids: &[TokenId], prompt_len: usize) -> Result<TokenDistribution> {
        (**self).next_distribution(ids, prompt_len)
    }

    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
}

impl<P: DistributionProvider + ?Sized> DistributionProvider for Box<P> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).encode(text)
    }

    fn next_distribution(&self, ids: &[TokenId], prompt_len: usize) -> Result<TokenDistribution> {
        (**self).next_distribution(ids, prompt_len)
    }

    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
}
