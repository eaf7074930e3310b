use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Semantic,
    Utility,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRule {
    /// Regular expression matched against the whole class token.
    pub pattern: String,
    pub label: ClassLabel,
}

/// Ordered rules; the first match decides. Unmatched names are semantic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassPolicy(pub Vec<ClassRule>);

const BLOCK: &str = "[a-zA-Z][a-zA-Z0-9]*(?:-[a-zA-Z0-9]+)*";
const SEGMENT: &str = "[a-zA-Z0-9]+(?:-[a-zA-Z0-9]+)*";

impl Default for ClassPolicy {
    fn default() -> Self {
        let rule = |pattern: String, label| ClassRule { pattern, label };
        ClassPolicy(vec![
            // block__element(--modifier) and block--modifier
            rule(
                format!("^{BLOCK}(?:__{SEGMENT})+(?:--{SEGMENT})?$"),
                ClassLabel::Semantic,
            ),
            rule(format!("^{BLOCK}--{SEGMENT}$"), ClassLabel::Semantic),
            // responsive/state prefixes and arbitrary values: md:flex, w-[32px]
            rule(r"[:\[\]/!]".into(), ClassLabel::Utility),
            // generated names from CSS-in-JS and CSS modules
            rule(r"^(?:css|sc|jsx|emotion|styled)-[A-Za-z0-9_-]+$".into(), ClassLabel::Utility),
            rule(r"^_[A-Za-z0-9_-]+$".into(), ClassLabel::Utility),
            rule(r"^[A-Za-z]+_[A-Za-z0-9]{5,}$".into(), ClassLabel::Utility),
            // dimension and scale suffixes: mt-4, p-px, gap-x-2, text-sm
            rule(
                r"^[a-z][a-z-]*-(?:-?\d+(?:\.\d+)?(?:px|rem|em|%)?|px|auto|full|screen|none|xs|sm|md|lg|xl|\dxl)$".into(),
                ClassLabel::Utility,
            ),
            // single-word layout and typography keywords
            rule(
                "^(?:flex|grid|block|inline|inline-block|inline-flex|hidden|container|row|col|relative|absolute|fixed|sticky|static|clearfix|truncate|underline|italic|uppercase|lowercase|capitalize|shadow|rounded|border|visible|invisible|grow|shrink|wrap|nowrap|pull-left|pull-right|float-left|float-right|text-center|text-left|text-right|sr-only|transition|antialiased)$".into(),
                ClassLabel::Utility,
            ),
            // utility families with a keyword value: bg-white, items-center
            rule(
                "^(?:bg|text|font|items|justify|content|self|place|leading|tracking|border|rounded|shadow|opacity|overflow|cursor|transition|duration|ease|ring|divide|decoration|align|whitespace|break|object|z|order|d|m[trblxy]?|p[trblxy]?|w|h|min-w|max-w|min-h|max-h|gap|space|top|left|right|bottom|inset|col|row|flex|grid|float|clear|display|visible|shadow|outline)-[a-z0-9-]+$".into(),
                ClassLabel::Utility,
            ),
        ])
    }
}

/// A policy with its patterns compiled.
#[derive(Debug, Clone)]
pub(crate) struct CompiledPolicy(Vec<(Regex, ClassLabel)>);

impl ClassPolicy {
    pub(crate) fn compile(&self) -> Result<CompiledPolicy, ConfigError> {
        self.0
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.label))
                    .map_err(|e| ConfigError::Pattern {
                        pattern: r.pattern.clone(),
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_, _>>()
            .map(CompiledPolicy)
    }
}

impl CompiledPolicy {
    pub(crate) fn label(&self, name: &str) -> ClassLabel {
        self.0
            .iter()
            .find(|(re, _)| re.is_match(name))
            .map(|(_, label)| *label)
            .unwrap_or(ClassLabel::Semantic)
    }
}

/// Labels one class token. Compiles the policy on every call; batch callers
/// go through [`super::sanitize`], which compiles once.
pub fn classify_class(name: &str, policy: &ClassPolicy) -> Result<ClassLabel, ConfigError> {
    Ok(policy.compile()?.label(name))
}
