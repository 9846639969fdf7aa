use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use promptcd::backend::{DistributionProvider, HttpProvider, LogitServerEndpoint, EOS_TOKEN};
use promptcd::decoder::{ContrastiveConfig, DecodeStrategy, PromptTemplate};
use promptcd::{TableModelSpec, TableProvider};
use serde::{Deserialize, Serialize};

/// Where next-token distributions come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Table(PathBuf),
    Http(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("table", path)) if !path.is_empty() => Ok(BackendSpec::Table(path.into())),
            Some(("http", _)) | Some(("https", _)) => {
                // accept both `http:URL` and a bare `http://...` URL
                let url = s.strip_prefix("http:").filter(|u| u.contains("://")).unwrap_or(s);
                Ok(BackendSpec::Http(url.to_string()))
            }
            _ => Err(format!("expected table:PATH or http:URL, got {s:?}")),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Table(p) => write!(f, "table:{}", p.display()),
            BackendSpec::Http(u) => write!(f, "http:{u}"),
        }
    }
}

impl BackendSpec {
    pub fn open(&self) -> Result<Box<dyn DistributionProvider>> {
        Ok(match self {
            BackendSpec::Table(path) => {
                let spec = TableModelSpec::load(path)?;
                Box::new(TableProvider::new(spec)?)
            }
            BackendSpec::Http(url) => {
                let ep = LogitServerEndpoint::new(url.as_str()).with_env_overrides()?;
                Box::new(HttpProvider::connect(ep)?)
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub positive: Option<String>,
    pub negative: Option<String>,
    pub question: Option<String>,
    pub template: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub trace: Option<PathBuf>,
}

/// Run settings read from `--config`. Command-line flags win over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Option<BackendSpec>,
    pub prompts: PromptConfig,
    pub contrastive: Option<ContrastiveConfig>,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(t) = &cfg.prompts.template {
            PromptTemplate::new(t.as_str())?;
        }
        Ok(cfg)
    }
}

/// Decoding flags shared by `decode` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Contrast strength
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Plausibility ratio: keep tokens with P(x) >= apc * max P
    #[arg(long, conflicts_with = "no_apc")]
    pub apc: Option<f64>,

    /// Disable the plausibility head entirely
    #[arg(long)]
    pub no_apc: bool,

    #[arg(long)]
    pub max_tokens: Option<usize>,

    /// Sample with this seed instead of greedy decoding
    #[arg(long)]
    pub seed: Option<u64>,

    /// Stop token surface form; repeatable. Defaults to "</s>" when the
    /// vocabulary has it.
    #[arg(long = "stop-token")]
    pub stop_tokens: Vec<String>,

    /// Prompt template; must contain {question}. {prompt} and {context} are
    /// also substituted.
    #[arg(long)]
    pub template: Option<String>,
}

impl DecodeArgs {
    /// Layers the flags over `base` and resolves stop tokens against the
    /// backend vocabulary.
    pub fn contrastive(
        &self,
        base: Option<&ContrastiveConfig>,
        provider: &dyn DistributionProvider,
    ) -> Result<ContrastiveConfig> {
        let mut cfg = base.cloned().unwrap_or_default();
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(a) = self.apc {
            cfg.apc_ratio = Some(a);
        }
        if self.no_apc {
            cfg.apc_ratio = None;
        }
        if let Some(n) = self.max_tokens {
            cfg.max_tokens = n;
        }
        if let Some(seed) = self.seed {
            cfg.strategy = DecodeStrategy::Sample { seed };
        }
        let vocab = provider.vocabulary();
        if !self.stop_tokens.is_empty() {
            cfg.stop_tokens.clear();
            for s in &self.stop_tokens {
                match vocab.id_of(s) {
                    Some(id) => {
                        cfg.stop_tokens.insert(id);
                    }
                    None => bail!("stop token {s:?} is not in the vocabulary"),
                }
            }
        } else if base.is_none() {
            if let Some(id) = vocab.id_of(EOS_TOKEN) {
                cfg.stop_tokens.insert(id);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn template(&self, base: Option<&str>) -> Result<PromptTemplate> {
        Ok(match self.template.as_deref().or(base) {
            Some(t) => PromptTemplate::new(t)?,
            None => PromptTemplate::default(),
        })
    }
}
