use serde::Serialize;

use super::classify::ClassLabel;
use super::sanitize::{compile_lenient, parse};
use super::SanitizerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanViolation {
    PrunedTag { tag: String },
    Attribute { tag: String, attribute: String },
    UtilityClass { tag: String, class: String },
}

/// Checks that `html` could be sanitizer output: no pruned tags, no
/// attributes outside the allowlist, no utility classes.
pub fn scan(html: &str, cfg: &SanitizerConfig) -> Vec<ScanViolation> {
    let policy = compile_lenient(cfg);
    let dom = parse(html);
    let mut found = Vec::new();
    for el in dom.elements() {
        let tag = el.name().to_string();
        if cfg.pruned_tags.contains(&tag) {
            found.push(ScanViolation::PrunedTag { tag: tag.clone() });
        }
        for (name, value) in el.attrs() {
            if name == "class" {
                for class in value.split_ascii_whitespace() {
                    if policy.label(class) == ClassLabel::Utility {
                        found.push(ScanViolation::UtilityClass {
                            tag: tag.clone(),
                            class: class.to_string(),
                        });
                    }
                }
            } else if !cfg.allows_attribute(name) {
                found.push(ScanViolation::Attribute {
                    tag: tag.clone(),
                    attribute: name.to_string(),
                });
            }
        }
    }
    found
}
