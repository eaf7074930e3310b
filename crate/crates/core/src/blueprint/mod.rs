//! The workflow blueprint: a closed, declarative step language that the
//! compiler emits once and the interpreter replays without inference.

mod canonical;
mod fingerprint;
mod patch;
mod selector;
mod validate;

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use canonical::{canonical_json, serialize};
pub use fingerprint::{structural_fingerprint, Fingerprint};
pub use patch::{apply_patch, PatchError, SelectorPatch, SelectorTarget};
pub use selector::{check_tier_order, Cardinality, SelectorSpec, Strategy, Tier, TierOrderError};
pub use validate::{validate, validate_draft, validate_value, Rule, ValidationError};

/// Version string every blueprint must carry.
pub const BLUEPRINT_VERSION: &str = "1.0";

/// Maximum loop nesting depth.
pub const MAX_LOOP_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub version: String,
    pub meta: BlueprintMeta,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlueprintMeta {
    /// The operator's natural-language goal.
    pub intent: String,
    pub source_url: String,
    /// RFC 3339 timestamp of compilation.
    pub compiled_at: String,
    pub model_id: String,
    pub token_usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub const fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }
}

impl core::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Navigate {
        url: String,
    },
    Click {
        selector: SelectorSpec,
    },
    Input {
        selector: SelectorSpec,
        value_source: ValueSource,
    },
    Select {
        selector: SelectorSpec,
        option_label: String,
    },
    Extract {
        scope_selector: SelectorSpec,
        fields: Vec<FieldMapping>,
        dataset: String,
    },
    Wait {
        condition: WaitCondition,
        timeout_ms: u64,
    },
    Delay {
        base_ms: u64,
        jitter_ms: u64,
    },
    Loop(LoopStep),
}

impl Action {
    pub fn kind(&self) -> StepKind {
        match self {
            Action::Navigate { .. } => StepKind::Navigate,
            Action::Click { .. } => StepKind::Click,
            Action::Input { .. } => StepKind::Input,
            Action::Select { .. } => StepKind::Select,
            Action::Extract { .. } => StepKind::Extract,
            Action::Wait { .. } => StepKind::Wait,
            Action::Delay { .. } => StepKind::Delay,
            Action::Loop(_) => StepKind::Loop,
        }
    }

    /// The selector a patch with [`SelectorTarget::Primary`] replaces.
    pub fn primary_selector(&self) -> Option<&SelectorSpec> {
        match self {
            Action::Click { selector } | Action::Input { selector, .. } | Action::Select { selector, .. } => {
                Some(selector)
            }
            Action::Extract { scope_selector, .. } => Some(scope_selector),
            Action::Wait {
                condition: WaitCondition::SelectorVisible { selector },
                ..
            } => Some(selector),
            Action::Loop(LoopStep {
                mode: LoopMode::Paginate { next_selector },
                ..
            }) => Some(next_selector),
            _ => None,
        }
    }

    pub(crate) fn primary_selector_mut(&mut self) -> Option<&mut SelectorSpec> {
        match self {
            Action::Click { selector } | Action::Input { selector, .. } | Action::Select { selector, .. } => {
                Some(selector)
            }
            Action::Extract { scope_selector, .. } => Some(scope_selector),
            Action::Wait {
                condition: WaitCondition::SelectorVisible { selector },
                ..
            } => Some(selector),
            Action::Loop(LoopStep {
                mode: LoopMode::Paginate { next_selector },
                ..
            }) => Some(next_selector),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Navigate,
    Click,
    Input,
    Select,
    Extract,
    Wait,
    Delay,
    Loop,
}

impl StepKind {
    pub const ALL: [StepKind; 8] = [
        StepKind::Navigate,
        StepKind::Click,
        StepKind::Input,
        StepKind::Select,
        StepKind::Extract,
        StepKind::Wait,
        StepKind::Delay,
        StepKind::Loop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Navigate => "navigate",
            StepKind::Click => "click",
            StepKind::Input => "input",
            StepKind::Select => "select",
            StepKind::Extract => "extract",
            StepKind::Wait => "wait",
            StepKind::Delay => "delay",
            StepKind::Loop => "loop",
        }
    }

    pub fn parse(s: &str) -> Option<StepKind> {
        StepKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Where an `input` step gets its text: a literal, or a named field of the
/// run payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Literal(String),
    Field(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WaitCondition {
    MutationQuiet,
    NetworkIdle,
    SelectorVisible { selector: SelectorSpec },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopStep {
    #[serde(flatten)]
    pub mode: LoopMode,
    pub max_iterations: u32,
    pub inter_iteration_delay_ms: u64,
    pub body: Vec<Step>,
}

/// `paginate` iterations each begin by following `next_selector`; the loop
/// ends when it matches nothing. `repeat_count` runs the body `count` times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LoopMode {
    Paginate { next_selector: SelectorSpec },
    RepeatCount { count: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub name: String,
    /// Resolved relative to the extract step's scope element.
    pub selector: SelectorSpec,
    pub capture: Capture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Text,
    Attribute(String),
}

impl Blueprint {
    /// Depth-first search for a step by id, including loop bodies.
    pub fn find_step(&self, id: &str) -> Option<&Step> {
        find_in(&self.steps, id)
    }

    pub(crate) fn find_step_mut(&mut self, id: &str) -> Option<&mut Step> {
        find_in_mut(&mut self.steps, id)
    }

    /// Every step in pre-order.
    pub fn walk(&self) -> Vec<&Step> {
        let mut out = Vec::new();
        walk_into(&self.steps, &mut out);
        out
    }
}

fn find_in<'a>(steps: &'a [Step], id: &str) -> Option<&'a Step> {
    for step in steps {
        if step.id == id {
            return Some(step);
        }
        if let Action::Loop(l) = &step.action {
            if let Some(found) = find_in(&l.body, id) {
                return Some(found);
            }
        }
    }
    None
}

fn find_in_mut<'a>(steps: &'a mut [Step], id: &str) -> Option<&'a mut Step> {
    for step in steps {
        if step.id == id {
            return Some(step);
        }
        if let Action::Loop(l) = &mut step.action {
            if let Some(found) = find_in_mut(&mut l.body, id) {
                return Some(found);
            }
        }
    }
    None
}

fn walk_into<'a>(steps: &'a [Step], out: &mut Vec<&'a Step>) {
    for step in steps {
        out.push(step);
        if let Action::Loop(l) = &step.action {
            walk_into(&l.body, out);
        }
    }
}
