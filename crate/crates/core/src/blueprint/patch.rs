use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::selector::{check_tier_order, Strategy, TierOrderError};
use super::{Action, Blueprint, SelectorSpec};

/// Which selector of a step a patch replaces.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorTarget {
    /// The step's own selector: the click/input/select target, the extract
    /// scope, the waited-for element, or the paginate next link.
    #[default]
    Primary,
    /// A field mapping of an extract step, by name.
    Field(String),
}

/// A selector-only edit. It can never change step kinds, order or count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorPatch {
    pub step_id: String,
    #[serde(default)]
    pub target: SelectorTarget,
    #[serde(alias = "strategy_list")]
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("unknown step id `{0}`")]
    UnknownStep(String),
    #[error("step `{0}` has no selector to patch")]
    NoSelector(String),
    #[error("step `{step}` has no field named `{field}`")]
    UnknownField { step: String, field: String },
    #[error("strategy {0} has an empty expression")]
    EmptyExpression(usize),
    #[error("patched selector violates tier order: {0}")]
    TierOrder(TierOrderError),
}

/// Returns `bp` with one selector's strategy list replaced. The expected
/// cardinality is kept, so the structural fingerprint is unchanged.
pub fn apply_patch(bp: &Blueprint, patch: &SelectorPatch) -> Result<Blueprint, PatchError> {
    check_tier_order(&patch.strategies).map_err(PatchError::TierOrder)?;
    if let Some(index) = patch.strategies.iter().position(|s| s.expression.trim().is_empty()) {
        return Err(PatchError::EmptyExpression(index));
    }
    let mut out = bp.clone();
    let step = out
        .find_step_mut(&patch.step_id)
        .ok_or_else(|| PatchError::UnknownStep(patch.step_id.clone()))?;
    let spec: &mut SelectorSpec = match &patch.target {
        SelectorTarget::Primary => step
            .action
            .primary_selector_mut()
            .ok_or_else(|| PatchError::NoSelector(patch.step_id.clone()))?,
        SelectorTarget::Field(name) => match &mut step.action {
            Action::Extract { fields, .. } => fields
                .iter_mut()
                .find(|f| &f.name == name)
                .map(|f| &mut f.selector)
                .ok_or_else(|| PatchError::UnknownField {
                    step: patch.step_id.clone(),
                    field: name.clone(),
                })?,
            _ => return Err(PatchError::NoSelector(patch.step_id.clone())),
        },
    };
    spec.strategies = patch.strategies.clone();
    Ok(out)
}
