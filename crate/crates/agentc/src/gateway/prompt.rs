use agentc_core::blueprint::{canonical_json, SelectorSpec, SelectorTarget, Step};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::SanitizedSkeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Compile,
    Heal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub mode: PromptMode,
}

/// Largest skeleton, in estimated tokens, a prompt may embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub max_skeleton_tokens: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget {
            max_skeleton_tokens: 32_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("skeleton needs {tokens} tokens, over the {budget}-token context budget")]
    OverBudget { tokens: usize, budget: usize },
    #[error("the skeleton is empty")]
    EmptySkeleton,
    #[error("`{0}` is not an absolute URL")]
    RelativeUrl(String),
}

const SELECTOR_RULES: &str = "\
Selectors. Every selector is an object {\"strategies\": [...], \"expected_cardinality\": \"one\" | \"many\"}.
Each strategy is {\"tier\": T, \"expression\": CSS}. List strategies from most to least robust, using these tiers in this order:
  1. aria        - [aria-label=\"...\"], [role=\"...\"]
  2. data_attr   - [data-testid=\"...\"] and other data-* attributes
  3. id          - #id, only when the id is human-written, never generated
  4. stable_class - BEM-style semantic classes such as .card__title
  5. text        - CSS followed by `>> text=Exact label`
  6. positional  - :nth-child and similar, only as a last resort and never first
A tier may not appear after a lower-priority tier. Use `one` when exactly one element must match and `many` for repeated rows.";

const STEP_VOCABULARY: &str = "\
Steps. Each step is an object with a unique \"id\" and a \"kind\" from this closed set:
  navigate {url}
  click    {selector}
  input    {selector, value_source: {\"literal\": \"...\"} | {\"field\": \"payload field name\"}}
  select   {selector, option_label}
  extract  {scope_selector (many), fields: [{name, selector (relative to scope), capture: \"text\" | {\"attribute\": name}}], dataset}
  wait     {condition: {\"type\": \"mutation_quiet\"} | {\"type\": \"network_idle\"} | {\"type\": \"selector_visible\", \"selector\": ...}, timeout_ms}
  delay    {base_ms, jitter_ms}
  loop     {mode: \"paginate\", next_selector, max_iterations, inter_iteration_delay_ms, body: [steps]}
         | {mode: \"repeat_count\", count, max_iterations, inter_iteration_delay_ms, body: [steps]}
A paginate loop clicks next_selector at the start of every iteration and runs its body on the page that loads; it stops when next_selector matches nothing. Extract the first page before the loop. Loops nest at most 3 deep.";

/// Fixed instructions for one-shot compilation.
pub fn compile_system_text() -> String {
    format!(
        "You compile a web task into a complete, deterministic JSON workflow blueprint.\n\
Output exactly one JSON object and nothing else: {{\"version\": \"1.0\", \"meta\": {{...}}, \"steps\": [...]}}.\n\
The blueprint runs later with no model available, so every decision must be made now: no placeholders, no steps that ask for later reasoning, no conditional logic beyond loop stop conditions.\n\
Identify pagination and build loops for it. Emit extraction mappings for every requested field.\n\n\
{STEP_VOCABULARY}\n\n{SELECTOR_RULES}\n"
    )
}

/// Fixed instructions for selector healing.
pub fn heal_system_text() -> String {
    format!(
        "A compiled workflow step no longer finds its element because the page changed.\n\
Return only a replacement selector as one JSON object: {{\"strategies\": [...], \"expected_cardinality\": ...}}.\n\
Keep the step's purpose and cardinality; do not add, remove or reorder steps.\n\n{SELECTOR_RULES}\n"
    )
}

fn check_skeleton(skeleton: &SanitizedSkeleton, budget: ContextBudget) -> Result<(), PromptError> {
    if skeleton.html.trim().is_empty() {
        return Err(PromptError::EmptySkeleton);
    }
    if skeleton.stats.est_tokens_out > budget.max_skeleton_tokens {
        return Err(PromptError::OverBudget {
            tokens: skeleton.stats.est_tokens_out,
            budget: budget.max_skeleton_tokens,
        });
    }
    Ok(())
}

/// The one-shot compile request. Identical inputs give identical bundles.
pub fn build_compile_prompt(
    skeleton: &SanitizedSkeleton,
    url: &str,
    intent: &str,
    budget: ContextBudget,
) -> Result<PromptBundle, PromptError> {
    check_skeleton(skeleton, budget)?;
    if url::Url::parse(url).is_err() {
        return Err(PromptError::RelativeUrl(url.to_string()));
    }
    Ok(PromptBundle {
        system_text: compile_system_text(),
        user_text: format!(
            "Page URL: {url}\nIntent: {intent}\n\nSanitized page skeleton:\n{}\n",
            skeleton.html
        ),
        mode: PromptMode::Compile,
    })
}

/// A request for one replacement selector. Only the failing step, its
/// original selector and the fresh skeleton go to the model.
pub fn build_heal_prompt(
    step: &Step,
    target: &SelectorTarget,
    original: &SelectorSpec,
    skeleton: &SanitizedSkeleton,
    budget: ContextBudget,
) -> Result<PromptBundle, PromptError> {
    check_skeleton(skeleton, budget)?;
    let which = match target {
        SelectorTarget::Primary => "its main selector".to_string(),
        SelectorTarget::Field(name) => format!("the selector of extracted field `{name}`"),
    };
    let step_json = canonical_json(step);
    let selector_json = canonical_json(original);
    Ok(PromptBundle {
        system_text: heal_system_text(),
        user_text: format!(
            "Failing step: {step_json}\nBroken: {which}\nOriginal selector: {selector_json}\n\nCurrent page skeleton:\n{}\n",
            skeleton.html
        ),
        mode: PromptMode::Heal,
    })
}
