use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::edit::Edit;
use super::manifest::{parse_json, read, ManifestError, SiteManifest};

/// A scripted disturbance layered over a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Perturbation {
    /// DOM edits. With `on_url`, they fire `at_ms` after each load of that
    /// page (immediately, before the load is reported, when `at_ms` is
    /// absent). Without it, they fire once at absolute session time `at_ms`.
    Edit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        on_url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
        edits: Vec<Edit>,
    },
    /// The next `occurrences` loads of `url` take `extra_ms` longer.
    LatencySpike {
        url: String,
        extra_ms: u64,
        #[serde(default = "one")]
        occurrences: u32,
    },
}

fn one() -> u32 {
    1
}

fn default_horizon() -> u64 {
    3_600_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    /// Manifest path, relative to the scenario file.
    pub manifest: PathBuf,
    pub perturbations: Vec<Perturbation>,
    /// Session time by which every timed perturbation must have fired.
    #[serde(default = "default_horizon")]
    pub horizon_ms: u64,
}

impl ScenarioScript {
    /// Loads a scenario and the manifest it names.
    pub fn load(path: &Path) -> Result<(ScenarioScript, SiteManifest), ManifestError> {
        let text = read(path)?;
        let scenario: ScenarioScript = parse_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = SiteManifest::load(&base.join(&scenario.manifest))?;
        scenario.check(&manifest)?;
        Ok((scenario, manifest))
    }

    pub fn check(&self, manifest: &SiteManifest) -> Result<(), ManifestError> {
        let invalid = |i: usize, message: String| ManifestError::Invalid {
            at: format!("$.perturbations[{i}]"),
            message,
        };
        for (i, p) in self.perturbations.iter().enumerate() {
            match p {
                Perturbation::Edit { on_url, at_ms, edits } => {
                    if let Some(url) = on_url {
                        if !manifest.pages.contains_key(url) {
                            return Err(invalid(i, format!("`{url}` is not a page")));
                        }
                    } else if at_ms.is_none() {
                        return Err(invalid(i, "needs on_url or at_ms".into()));
                    }
                    if at_ms.is_some_and(|t| t > self.horizon_ms) {
                        return Err(invalid(i, format!("fires after the {} ms horizon", self.horizon_ms)));
                    }
                    if edits.is_empty() {
                        return Err(invalid(i, "no edits".into()));
                    }
                    for e in edits {
                        e.check().map_err(|m| invalid(i, m))?;
                    }
                }
                Perturbation::LatencySpike { url, .. } => {
                    if !manifest.pages.contains_key(url) {
                        return Err(invalid(i, format!("`{url}` is not a page")));
                    }
                }
            }
        }
        Ok(())
    }
}
