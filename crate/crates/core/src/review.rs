//! Review and run lifecycles as pure transition functions.
//!
//! The gate service owns persistence and locking; the rules for what may
//! follow what live here so they can be tested without any IO.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    PendingReview,
    Approved,
    Rejected,
    /// A reviewer replaced the content; it needs a fresh decision.
    Amended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
    Amend,
}

impl ReviewState {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewState::PendingReview => "pending_review",
            ReviewState::Approved => "approved",
            ReviewState::Rejected => "rejected",
            ReviewState::Amended => "amended",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ReviewState::Approved | ReviewState::Rejected)
    }

    /// Only approved content may execute.
    pub fn is_executable(self) -> bool {
        self == ReviewState::Approved
    }

    /// Applies a decision. Only pending content can be decided; an
    /// amendment moves back to review through `amended`.
    pub fn decide(self, decision: Decision) -> Result<ReviewState, TransitionError> {
        if self != ReviewState::PendingReview {
            return Err(TransitionError::Review { from: self, decision });
        }
        Ok(match decision {
            Decision::Approve => ReviewState::Approved,
            Decision::Reject => ReviewState::Rejected,
            Decision::Amend => ReviewState::Amended,
        })
    }

    /// State after the amended content is stored for review.
    pub fn resubmit(self) -> Result<ReviewState, TransitionError> {
        match self {
            ReviewState::Amended => Ok(ReviewState::PendingReview),
            from => Err(TransitionError::Resubmit { from }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Halted,
    PatchedResuming,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTransition {
    Halt,
    Patch,
    Complete,
    Fail,
}

impl RunState {
    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Running => "running",
            RunState::Halted => "halted",
            RunState::PatchedResuming => "patched_resuming",
            RunState::Completed => "completed",
            RunState::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Completed | RunState::Failed)
    }

    pub fn apply(self, t: RunTransition) -> Result<RunState, TransitionError> {
        use RunState::*;
        use RunTransition::*;
        match (self, t) {
            (Running | PatchedResuming, Halt) => Ok(Halted),
            (Running | PatchedResuming, Complete) => Ok(Completed),
            (Halted, Patch) => Ok(PatchedResuming),
            (Running | Halted | PatchedResuming, Fail) => Ok(Failed),
            (from, transition) => Err(TransitionError::Run { from, transition }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("cannot {decision:?} a blueprint that is {}", from.as_str())]
    Review { from: ReviewState, decision: Decision },
    #[error("cannot resubmit a blueprint that is {}", from.as_str())]
    Resubmit { from: ReviewState },
    #[error("cannot {transition:?} a run that is {}", from.as_str())]
    Run { from: RunState, transition: RunTransition },
}
