//! DOM sanitization: raw HTML in, token-budgeted semantic skeleton out.

mod classify;
mod sanitize;
mod scan;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify_class, ClassLabel, ClassPolicy, ClassRule};
pub(crate) use sanitize::rebuild_element;
pub use sanitize::{
    cleanse_attributes, filter_hidden, parse, prune_noise, sanitize, sanitize_in_passes, serialize_dom, Dom,
};
pub use scan::{scan, ScanViolation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitizerConfig {
    pub pruned_tags: BTreeSet<String>,
    /// Exact attribute names; entries ending in `-` match as prefixes.
    pub attribute_allowlist: BTreeSet<String>,
    pub class_policy: ClassPolicy,
    pub max_data_uri_chars: usize,
    pub token_chars_ratio: usize,
    /// Treat `<input type="hidden">` as invisible.
    #[serde(default = "yes")]
    pub drop_hidden_inputs: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing sanitizer config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pruned_tags must include `{0}`")]
    MissingPrunedTag(&'static str),
    #[error("attribute_allowlist must include `{0}`")]
    MissingAllowed(&'static str),
    #[error("token_chars_ratio must be at least 1")]
    Ratio,
    #[error("class rule `{pattern}`: {message}")]
    Pattern { pattern: String, message: String },
}

const REQUIRED_PRUNED: [&str; 4] = ["script", "style", "svg", "noscript"];
const REQUIRED_ALLOWED: [&str; 11] = [
    "data-",
    "aria-",
    "id",
    "name",
    "role",
    "href",
    "type",
    "placeholder",
    "value",
    "alt",
    "title",
];

impl Default for SanitizerConfig {
    fn default() -> Self {
        let pruned = [
            "script", "style", "svg", "noscript", "iframe", "link", "template", "object", "embed",
        ];
        let extra_allowed = ["content", "for", "action", "method", "contenteditable"];
        SanitizerConfig {
            pruned_tags: pruned.iter().map(|s| s.to_string()).collect(),
            attribute_allowlist: REQUIRED_ALLOWED
                .iter()
                .chain(extra_allowed.iter())
                .map(|s| s.to_string())
                .collect(),
            class_policy: ClassPolicy::default(),
            max_data_uri_chars: 256,
            token_chars_ratio: 4,
            drop_hidden_inputs: true,
        }
    }
}

impl SanitizerConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SanitizerConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        for tag in REQUIRED_PRUNED {
            if !self.pruned_tags.contains(tag) {
                return Err(ConfigError::MissingPrunedTag(tag));
            }
        }
        for name in REQUIRED_ALLOWED {
            if !self.attribute_allowlist.contains(name) {
                return Err(ConfigError::MissingAllowed(name));
            }
        }
        if self.token_chars_ratio < 1 {
            return Err(ConfigError::Ratio);
        }
        self.class_policy.compile().map(|_| ())
    }

    pub fn allows_attribute(&self, name: &str) -> bool {
        if !name.ends_with('-') && self.attribute_allowlist.contains(name) {
            return true;
        }
        self.attribute_allowlist
            .iter()
            .any(|entry| entry.ends_with('-') && name.starts_with(entry.as_str()) && name.len() > entry.len())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SanitizeStats {
    pub nodes_in: usize,
    pub nodes_out: usize,
    pub chars_in: usize,
    pub chars_out: usize,
    pub est_tokens_in: usize,
    pub est_tokens_out: usize,
    pub reduction_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedSkeleton {
    pub html: String,
    pub stats: SanitizeStats,
}

/// `ceil(chars / ratio)`, counting Unicode scalar values.
pub fn estimate_tokens(text: &str, ratio: usize) -> usize {
    estimate_tokens_for(text.chars().count(), ratio)
}

pub(crate) fn estimate_tokens_for(chars: usize, ratio: usize) -> usize {
    chars.div_ceil(ratio.max(1))
}

/// Halt snapshots are stored as skeletons.
impl agentc_core::engine::SnapshotSanitizer for SanitizerConfig {
    fn sanitize_snapshot(&self, html: &str) -> String {
        sanitize(html, self).html
    }
}
