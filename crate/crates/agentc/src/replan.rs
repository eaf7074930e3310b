//! Lazy replanning: inference only as an exception handler.
//!
//! A halt is dispatched on its failure mode. A broken selector is healed by
//! one targeted model call that may replace selectors and nothing else; a
//! transient stall gets a free retry with longer waits; a plan that produced
//! bad data goes to a human.

use std::collections::{BTreeMap, BTreeSet};

use agentc_core::blueprint::{
    apply_patch, structural_fingerprint, Blueprint, SelectorPatch, SelectorSpec, SelectorTarget, Step, TokenUsage,
};
use agentc_core::engine::{BrowserBackend, Engine, FailureMode, HaltReport, ResumeError, RunOutcome, RunPolicy};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{sanitize, SanitizedSkeleton, SanitizerConfig};
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealPolicy {
    /// Model calls allowed per broken selector.
    pub max_attempts: u32,
    /// Wait-window multiplier for the free retry after a stall.
    pub retry_wait_extension: u64,
}

impl Default for HealPolicy {
    fn default() -> Self {
        HealPolicy {
            max_attempts: 2,
            retry_wait_extension: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Healed,
    /// A stall cleared on the inference-free retry.
    Retried,
    EscalatedToHitl,
}

/// Everything a heal call sends to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct HealRequest {
    pub halt: HaltReport,
    pub failing_step: Step,
    pub target: SelectorTarget,
    pub original_selector: SelectorSpec,
    pub skeleton: SanitizedSkeleton,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealResult {
    pub patched: Blueprint,
    pub heal_cost_usd: Decimal,
    pub token_usage: TokenUsage,
    /// Model calls made.
    pub attempts: u32,
    pub resolution: Resolution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<SelectorPatch>,
    /// Why each rejected proposal was rejected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ReplanError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("halted step `{0}` is not in the blueprint")]
    UnknownStep(String),
    #[error(transparent)]
    Resume(#[from] ResumeError),
    #[error("the run did not halt")]
    NotHalted,
}

/// Builds the heal request for a ui_changed halt, or `None` when the halt
/// carries no selector to replace.
pub fn heal_request(
    bp: &Blueprint,
    halt: &HaltReport,
    sanitizer: &SanitizerConfig,
) -> Result<Option<HealRequest>, ReplanError> {
    let step = bp
        .find_step(&halt.step_id)
        .ok_or_else(|| ReplanError::UnknownStep(halt.step_id.clone()))?;
    let Some(original) = halt.selector.clone() else {
        return Ok(None);
    };
    Ok(Some(HealRequest {
        halt: halt.clone(),
        failing_step: step.clone(),
        target: halt.selector_target.clone().unwrap_or_default(),
        original_selector: original,
        skeleton: sanitize(&halt.dom_snapshot, sanitizer),
    }))
}

fn escalate(bp: &Blueprint) -> HealResult {
    HealResult {
        patched: bp.clone(),
        heal_cost_usd: Decimal::ZERO,
        token_usage: TokenUsage::default(),
        attempts: 0,
        resolution: Resolution::EscalatedToHitl,
        patch: None,
        rejected: Vec::new(),
    }
}

/// Heals one halt with at most `policy.max_attempts` model calls.
///
/// plan_failed never reaches the model. execution_broke is treated like
/// ui_changed here; its free retry needs a live session and lives in
/// [`Replanner::recover`].
pub fn heal(
    bp: &Blueprint,
    halt: &HaltReport,
    gateway: &Gateway,
    policy: &HealPolicy,
    sanitizer: &SanitizerConfig,
) -> Result<HealResult, ReplanError> {
    if halt.failure_mode == FailureMode::PlanFailed {
        return Ok(escalate(bp));
    }
    let Some(request) = heal_request(bp, halt, sanitizer)? else {
        return Ok(escalate(bp));
    };
    let mut result = escalate(bp);
    let before = structural_fingerprint(bp);
    while result.attempts < policy.max_attempts {
        let reply = gateway.heal(
            &request.failing_step,
            &request.target,
            &request.original_selector,
            &request.skeleton,
        )?;
        result.attempts += 1;
        result.heal_cost_usd += reply.cost_usd;
        result.token_usage = result.token_usage + reply.token_usage;
        let spec = match reply.selector {
            Ok(spec) => spec,
            Err(why) => {
                result.rejected.push(why);
                continue;
            }
        };
        let patch = SelectorPatch {
            step_id: halt.step_id.clone(),
            target: request.target.clone(),
            strategies: spec.strategies,
        };
        match apply_patch(bp, &patch) {
            Ok(patched) => {
                debug_assert_eq!(structural_fingerprint(&patched), before);
                result.patched = patched;
                result.patch = Some(patch);
                result.resolution = Resolution::Healed;
                return Ok(result);
            }
            Err(e) => result.rejected.push(e.to_string()),
        }
    }
    Ok(result)
}

/// The end state of a recovery loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recovery {
    pub outcome: RunOutcome,
    pub resolution: Resolution,
    /// The blueprint the final outcome ran, with every accepted patch.
    pub blueprint: Blueprint,
    pub inference_calls: u32,
    pub retries: u32,
    pub heal_cost_usd: Decimal,
    pub patches: Vec<SelectorPatch>,
}

/// Heal-and-resume loop over a live session.
#[derive(Debug, Clone)]
pub struct Replanner<'g> {
    pub gateway: &'g Gateway,
    pub policy: HealPolicy,
    pub sanitizer: SanitizerConfig,
    pub payload: BTreeMap<String, String>,
}

impl<'g> Replanner<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Replanner {
            gateway,
            policy: HealPolicy::default(),
            sanitizer: SanitizerConfig::default(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with_policy(mut self, policy: HealPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_payload(mut self, payload: BTreeMap<String, String>) -> Self {
        self.payload = payload;
        self
    }

    fn resume<B: BrowserBackend + ?Sized>(
        &self,
        bp: &Blueprint,
        halted: &RunOutcome,
        run_policy: RunPolicy,
        backend: &mut B,
    ) -> Result<RunOutcome, ResumeError> {
        let mut engine = Engine::new(run_policy)
            .with_sanitizer(&self.sanitizer)
            .with_payload(self.payload.clone());
        engine.resume(bp, halted, backend)
    }

    /// Drives a halted run to completion or escalation. Each broken
    /// selector gets at most `max_attempts` model calls across the whole
    /// loop, and each stalled step one free retry.
    pub fn recover<B: BrowserBackend + ?Sized>(
        &self,
        bp: &Blueprint,
        halted: RunOutcome,
        run_policy: &RunPolicy,
        backend: &mut B,
    ) -> Result<Recovery, ReplanError> {
        if halted.halt.is_none() {
            return Err(ReplanError::NotHalted);
        }
        let mut state = Recovery {
            outcome: halted,
            resolution: Resolution::EscalatedToHitl,
            blueprint: bp.clone(),
            inference_calls: 0,
            retries: 0,
            heal_cost_usd: Decimal::ZERO,
            patches: Vec::new(),
        };
        let mut retried: BTreeSet<String> = BTreeSet::new();
        let mut spent: BTreeMap<(String, SelectorTarget), u32> = BTreeMap::new();
        loop {
            let Some(halt) = state.outcome.halt.clone() else {
                state.resolution = if state.patches.is_empty() {
                    Resolution::Retried
                } else {
                    Resolution::Healed
                };
                return Ok(state);
            };
            if halt.failure_mode == FailureMode::PlanFailed {
                state.resolution = Resolution::EscalatedToHitl;
                return Ok(state);
            }
            if halt.failure_mode == FailureMode::ExecutionBroke && retried.insert(halt.step_id.clone()) {
                state.retries += 1;
                let extended = run_policy.extended(self.policy.retry_wait_extension);
                state.outcome = self.resume(&state.blueprint, &state.outcome, extended, backend)?;
                continue;
            }
            let site = (halt.step_id.clone(), halt.selector_target.clone().unwrap_or_default());
            let used = spent.entry(site).or_insert(0);
            let remaining = self.policy.max_attempts.saturating_sub(*used);
            if remaining == 0 || halt.selector.is_none() {
                state.resolution = Resolution::EscalatedToHitl;
                return Ok(state);
            }
            let policy = HealPolicy {
                max_attempts: remaining,
                ..self.policy
            };
            let result = heal(&state.blueprint, &halt, self.gateway, &policy, &self.sanitizer)?;
            *used += result.attempts;
            state.inference_calls += result.attempts;
            state.heal_cost_usd += result.heal_cost_usd;
            match (result.resolution, result.patch) {
                (Resolution::Healed, Some(patch)) => {
                    state.patches.push(patch);
                    state.blueprint = result.patched;
                    state.outcome = self.resume(&state.blueprint, &state.outcome, run_policy.clone(), backend)?;
                }
                _ => {
                    state.resolution = Resolution::EscalatedToHitl;
                    return Ok(state);
                }
            }
        }
    }
}
