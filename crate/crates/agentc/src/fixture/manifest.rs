use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::edit::{apply_edit, Edit};

/// A page body, inline or stored next to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PageSource {
    Inline(String),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Navigate {
        to: String,
    },
    Mutation {
        script: String,
    },
    /// Validate the enclosing form against the page's form model.
    Submit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub url: String,
    pub selector: String,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEdit {
    /// Offset from the moment the script starts.
    pub at_ms: u64,
    #[serde(flatten)]
    pub edit: Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationScript {
    pub edits: Vec<TimedEdit>,
    /// Re-run every edit this often after it first fires.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat_every_ms: Option<u64>,
    /// Pages that start this script as soon as they load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_load: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormField {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default = "yes")]
    pub required: bool,
    /// When present, the only values the server accepts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormModel {
    pub fields: Vec<FormField>,
    pub success_url: String,
    pub error_url: String,
}

/// A miniature web site for deterministic sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteManifest {
    pub pages: BTreeMap<String, PageSource>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub mutation_scripts: BTreeMap<String, MutationScript>,
    #[serde(default)]
    pub forms: BTreeMap<String, FormModel>,
    #[serde(default)]
    pub latency_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema violation at line {line}, column {column}: {message}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{at}: {message}")]
    Invalid { at: String, message: String },
    #[error("{at}: transition from `{url}`, which is not a page")]
    DanglingTransition { at: String, url: String },
}

fn invalid(at: impl Into<String>, message: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        at: at.into(),
        message: message.into(),
    }
}

pub(crate) fn read(path: &Path) -> Result<String, ManifestError> {
    std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, ManifestError> {
    serde_json::from_str(text).map_err(|e| ManifestError::Schema {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

impl SiteManifest {
    /// Reads a manifest, inlines page files relative to its directory, and
    /// checks every invariant.
    pub fn load(path: &Path) -> Result<SiteManifest, ManifestError> {
        let text = read(path)?;
        let mut manifest: SiteManifest = parse_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for page in manifest.pages.values_mut() {
            if let PageSource::File { file } = page {
                *page = PageSource::Inline(read(&base.join(&*file))?);
            }
        }
        manifest.check()?;
        Ok(manifest)
    }

    pub fn from_json(text: &str) -> Result<SiteManifest, ManifestError> {
        let manifest: SiteManifest = parse_json(text, "<inline>")?;
        if manifest.pages.values().any(|p| matches!(p, PageSource::File { .. })) {
            return Err(invalid("$.pages", "file pages need a manifest path; use load"));
        }
        manifest.check()?;
        Ok(manifest)
    }

    pub fn page(&self, url: &str) -> Option<&str> {
        match self.pages.get(url) {
            Some(PageSource::Inline(html)) => Some(html),
            _ => None,
        }
    }

    pub fn latency(&self, url: &str) -> u64 {
        self.latency_ms.get(url).copied().unwrap_or(0)
    }

    pub fn check(&self) -> Result<(), ManifestError> {
        if self.pages.is_empty() {
            return Err(invalid("$.pages", "at least one page is required"));
        }
        for url in self.pages.keys() {
            url::Url::parse(url)
                .map_err(|e| invalid(format!("$.pages[{url:?}]"), format!("not an absolute URL: {e}")))?;
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let at = format!("$.transitions[{i}]");
            if !self.pages.contains_key(&t.url) {
                return Err(ManifestError::DanglingTransition { at, url: t.url.clone() });
            }
            Selector::parse(&t.selector).map_err(|e| invalid(format!("{at}.selector"), e.to_string()))?;
            match &t.effect {
                Effect::Navigate { to } if !self.pages.contains_key(to) => {
                    return Err(invalid(format!("{at}.effect.to"), format!("`{to}` is not a page")));
                }
                Effect::Mutation { script } => {
                    let s = self
                        .mutation_scripts
                        .get(script)
                        .ok_or_else(|| invalid(format!("{at}.effect.script"), format!("no script `{script}`")))?;
                    self.check_script_targets(script, s, &t.url)?;
                }
                Effect::Submit if !self.forms.contains_key(&t.url) => {
                    return Err(invalid(format!("{at}.effect"), "submit on a page without a form model"));
                }
                _ => {}
            }
        }
        for (name, script) in &self.mutation_scripts {
            let at = format!("$.mutation_scripts.{name}");
            if script.edits.is_empty() {
                return Err(invalid(format!("{at}.edits"), "script has no edits"));
            }
            if script.repeat_every_ms == Some(0) {
                return Err(invalid(format!("{at}.repeat_every_ms"), "must be positive"));
            }
            for (i, e) in script.edits.iter().enumerate() {
                e.edit.check().map_err(|m| invalid(format!("{at}.edits[{i}]"), m))?;
            }
            for url in &script.on_load {
                if !self.pages.contains_key(url) {
                    return Err(invalid(format!("{at}.on_load"), format!("`{url}` is not a page")));
                }
                self.check_script_targets(name, script, url)?;
            }
        }
        for (url, form) in &self.forms {
            let at = format!("$.forms[{url:?}]");
            if !self.pages.contains_key(url) {
                return Err(invalid(at, "form on an unknown page"));
            }
            for target in [&form.success_url, &form.error_url] {
                if !self.pages.contains_key(target) {
                    return Err(invalid(at.clone(), format!("`{target}` is not a page")));
                }
            }
        }
        for url in self.latency_ms.keys() {
            if !self.pages.contains_key(url) {
                return Err(invalid(format!("$.latency_ms[{url:?}]"), "latency for an unknown page"));
            }
        }
        Ok(())
    }

    /// Replays a script's edits in time order on `url` and requires each to
    /// find at least one node.
    fn check_script_targets(&self, name: &str, script: &MutationScript, url: &str) -> Result<(), ManifestError> {
        let mut doc = Html::parse_document(self.page(url).unwrap_or_default());
        let mut edits: Vec<_> = script.edits.iter().enumerate().collect();
        edits.sort_by_key(|(i, e)| (e.at_ms, *i));
        for (i, e) in edits {
            let touched = apply_edit(&mut doc, &e.edit)
                .map_err(|m| invalid(format!("$.mutation_scripts.{name}.edits[{i}]"), m))?;
            if touched.matched == 0 {
                return Err(invalid(
                    format!("$.mutation_scripts.{name}.edits[{i}]"),
                    format!("selector matches nothing on `{url}` at {} ms", e.at_ms),
                ));
            }
        }
        Ok(())
    }
}
