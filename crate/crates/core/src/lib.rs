//! Polarity-prompt contrastive decoding.
//!
//! The crate is split along the pipeline:
//!
//! * [`distribution`]: vocabulary and token-distribution primitives.
//! * [`decoder`]: plausibility head, contrastive scoring and the synchronized
//!   dual-context decode loop.
//! * [`backend`]: the [`DistributionProvider`] abstraction with a table-driven
//!   provider and an HTTP logit-server client.
//! * [`probe`]: knowledge-token capture, stubborn-knowledge diagnosis and the
//!   ConR/ParR/MR metrics.
//! * [`attention`]: contrastive visual attention, layer fusion, percentile
//!   thresholding, connected components and image refinement.
//! * [`evaluation`]: batch vanilla-vs-contrastive runs over a conflict dataset.
//!
//! Batch work goes through [`parallel`], which uses rayon when the `parallel`
//! feature is enabled and a plain iterator otherwise.

pub mod attention;
pub mod backend;
pub mod decoder;
pub mod distribution;
pub mod error;
pub mod evaluation;
pub mod parallel;
pub mod probe;

pub use backend::{DistributionProvider, HttpProvider, LogitServerEndpoint, TableModelSpec, TableProvider};
pub use decoder::{ContrastiveConfig, DecodeOutput, DecodeStrategy, DecodeTrace, DualContext};
pub use distribution::{PolarityPromptPair, TokenDistribution, TokenId, Vocabulary};
pub use error::{Error, Result};
