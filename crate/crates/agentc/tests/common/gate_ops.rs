//! Random operation sequences against the review gate.

use std::sync::Arc;

use agentc::gateway::FixedClock;
use agentc::hitl::{GateCore, GateError, RunPatch};
use agentc_core::blueprint::{SelectorPatch, SelectorTarget, Strategy as Strat, Tier};
use agentc_core::engine::RunOutcome;
use agentc_core::review::{Decision, ReviewState};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Op {
    Submit {
        valid: bool,
    },
    Decide {
        review: usize,
        action: Decision,
        good_patch: bool,
    },
    Start {
        review: usize,
    },
    Finish {
        run: usize,
        halted: bool,
    },
    Patch {
        run: usize,
        good: bool,
    },
    Fail {
        run: usize,
    },
}

pub fn ops() -> impl Strategy<Value = Vec<Op>> {
    let decision = prop_oneof![Just(Decision::Approve), Just(Decision::Reject), Just(Decision::Amend)];
    let op = prop_oneof![
        2 => any::<bool>().prop_map(|valid| Op::Submit { valid }),
        3 => (0usize..6, decision, any::<bool>()).prop_map(|(review, action, good_patch)| Op::Decide { review, action, good_patch }),
        4 => (0usize..6).prop_map(|review| Op::Start { review }),
        2 => (0usize..6, any::<bool>()).prop_map(|(run, halted)| Op::Finish { run, halted }),
        2 => (0usize..6, any::<bool>()).prop_map(|(run, good)| Op::Patch { run, good }),
        1 => (0usize..6).prop_map(|run| Op::Fail { run }),
    ];
    proptest::collection::vec(op, 1..40)
}

/// Everything an op sequence needs besides the ops.
pub struct Fixtures {
    pub blueprint: Vec<u8>,
    pub completed: RunOutcome,
    pub halted: RunOutcome,
}

impl Fixtures {
    pub fn load() -> Fixtures {
        let bp = super::blueprint("task1/blueprint.json");
        let manifest = super::site("task1/site.json");
        let completed = super::run_sim(&bp, &mut super::sim(&manifest, None), 1, &[]);
        let (script, manifest) = super::scenario("ui-changed");
        let halted = super::run_sim(&bp, &mut super::sim(&manifest, Some(&script)), 1, &[]);
        Fixtures {
            blueprint: std::fs::read(super::fixtures().join("task1/blueprint.json")).unwrap(),
            completed,
            halted,
        }
    }
}

fn patch(good: bool) -> SelectorPatch {
    SelectorPatch {
        step_id: if good {
            "extract-page".into()
        } else {
            "no-such-step".into()
        },
        target: SelectorTarget::Field("phone".into()),
        strategies: vec![Strat::new(Tier::DataAttr, "[data-field=\"telephone\"]")],
    }
}

pub fn clock() -> Arc<FixedClock> {
    Arc::new(FixedClock("2026-03-02T09:00:00Z".into()))
}

/// Applies `ops` to `core`, checking after each one that a run only ever
/// started from an approved blueprint.
pub fn drive(core: &mut GateCore, ops: &[Op], fx: &Fixtures) -> Result<(), String> {
    let review_id = |core: &GateCore, i: usize| {
        core.reviews()
            .nth(i % core.reviews().count().max(1))
            .map(|r| r.blueprint_id.clone())
    };
    let run_id = |core: &GateCore, i: usize| {
        core.runs()
            .nth(i % core.runs().count().max(1))
            .map(|r| r.run_id.clone())
    };
    for op in ops {
        match op {
            Op::Submit { valid } => {
                let raw: &[u8] = if *valid {
                    &fx.blueprint
                } else {
                    b"{\"version\": \"1.0\", \"steps\": []}"
                };
                let result = core.submit("reviewer", raw);
                if result.is_ok() != *valid {
                    return Err(format!("submit valid={valid} gave {result:?}"));
                }
            }
            Op::Decide {
                review,
                action,
                good_patch,
            } => {
                let Some(id) = review_id(core, *review) else { continue };
                let p = (*action == Decision::Amend).then(|| patch(*good_patch));
                let before = core.review(&id).unwrap().state;
                let result = core.decide("reviewer", &id, *action, p, None).map(|r| r.state);
                let should = before == ReviewState::PendingReview && (*action != Decision::Amend || *good_patch);
                if result.is_ok() != should {
                    return Err(format!("decide {action:?} on {before:?} gave {result:?}"));
                }
            }
            Op::Start { review } => {
                let Some(id) = review_id(core, *review) else { continue };
                let state = core.review(&id).unwrap().state;
                match core.start_run("operator", &id) {
                    Ok(_) if state != ReviewState::Approved => return Err(format!("run started from {state:?}")),
                    Err(GateError::Forbidden(_)) if state != ReviewState::Approved => {}
                    Err(e) => return Err(format!("start on approved failed: {e}")),
                    Ok(_) => {}
                }
            }
            Op::Finish { run, halted } => {
                let Some(id) = run_id(core, *run) else { continue };
                let outcome = if *halted { &fx.halted } else { &fx.completed };
                let _ = core.finish_segment("operator", &id, outcome.clone());
            }
            Op::Patch { run, good } => {
                let Some(id) = run_id(core, *run) else { continue };
                let _ = core.patch_run("operator", &id, RunPatch::Selector(patch(*good)));
            }
            Op::Fail { run } => {
                let Some(id) = run_id(core, *run) else { continue };
                let _ = core.fail_run("operator", &id, "stopped".into());
            }
        }
        for run in core.runs() {
            let state = core.review(&run.blueprint_id).map(|r| r.state);
            if state != Some(ReviewState::Approved) {
                return Err(format!("{} runs a {state:?} blueprint", run.run_id));
            }
        }
    }
    let replayed = GateCore::replay(core.audit(), clock()).map_err(|e| e.to_string())?;
    if replayed.snapshot() != core.snapshot() {
        return Err("replayed state differs".into());
    }
    Ok(())
}
