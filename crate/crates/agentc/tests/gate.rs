mod common;

use std::io::Write;

use agentc::hitl::{read_audit, GateCore, GateError, ReplayError, RunPatch};
use agentc_core::blueprint::{SelectorPatch, SelectorTarget, Strategy, Tier};
use agentc_core::review::{Decision, ReviewState, RunState};
use common::gate_ops::{clock, drive, ops, Fixtures};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn runs_only_start_from_approved_blueprints(ops in ops()) {
        let fx = Fixtures::load();
        let mut core = GateCore::new(clock());
        drive(&mut core, &ops, &fx).map_err(TestCaseError::fail)?;
    }
}

fn phone_patch() -> SelectorPatch {
    SelectorPatch {
        step_id: "extract-page".into(),
        target: SelectorTarget::Field("phone".into()),
        strategies: vec![Strategy::new(Tier::DataAttr, "[data-field=\"telephone\"]")],
    }
}

/// Submit, amend, approve, run to a halt, patch, resume to completion.
fn full_lifecycle(core: &mut GateCore, fx: &Fixtures) -> (String, String) {
    let id = core.submit("ana", &fx.blueprint).unwrap();
    assert!(matches!(core.start_run("ana", &id), Err(GateError::Forbidden(_))));
    let amended = core
        .decide("ana", &id, Decision::Amend, Some(phone_patch()), None)
        .unwrap();
    assert_eq!(amended.state, ReviewState::PendingReview);
    core.decide("ana", &id, Decision::Approve, None, None).unwrap();
    let (run, _) = core.start_run("op", &id).unwrap();
    assert_eq!(
        core.finish_segment("op", &run, fx.halted.clone()).unwrap().state,
        RunState::Halted
    );
    let patched = core.patch_run("op", &run, RunPatch::Selector(phone_patch())).unwrap();
    assert_eq!(patched.state, RunState::PatchedResuming);
    assert_eq!(
        core.finish_segment("op", &run, fx.completed.clone()).unwrap().state,
        RunState::Completed
    );
    (id, run)
}

#[test]
fn data_dir_survives_a_restart() {
    let fx = Fixtures::load();
    let dir = tempfile::tempdir().unwrap();
    let (before, id) = {
        let mut core = GateCore::open(dir.path(), clock()).unwrap();
        let (id, _) = full_lifecycle(&mut core, &fx);
        (core.snapshot(), id)
    };
    let reopened = GateCore::open(dir.path(), clock()).unwrap();
    assert_eq!(reopened.snapshot(), before);
    assert_eq!(reopened.audit().len(), 7);
    let stored: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(format!("blueprints/{id}.json"))).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&before.reviews[&id].blueprint).unwrap(), stored);

    // Appends continue the sequence.
    let mut reopened = reopened;
    reopened.submit("ana", &fx.blueprint).unwrap();
    let entries = read_audit(&dir.path().join("audit.jsonl")).unwrap();
    assert_eq!(
        entries.iter().map(|e| e.seq).collect::<Vec<_>>(),
        (1..=8).collect::<Vec<_>>()
    );
}

#[test]
fn tampered_log_is_refused() {
    let fx = Fixtures::load();
    let dir = tempfile::tempdir().unwrap();
    {
        let mut core = GateCore::open(dir.path(), clock()).unwrap();
        let id = core.submit("ana", &fx.blueprint).unwrap();
        core.decide("ana", &id, Decision::Reject, None, None).unwrap();
    }
    let path = dir.path().join("audit.jsonl");
    let original = std::fs::read_to_string(&path).unwrap();

    std::fs::write(&path, original.replace("\"reject\"", "\"approve\"")).unwrap();
    assert!(matches!(
        GateCore::open(dir.path(), clock()),
        Err(ReplayError::Digest(2))
    ));

    let first_line_only: String = original.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, first_line_only).unwrap();
    assert!(matches!(
        GateCore::open(dir.path(), clock()),
        Err(ReplayError::Gap { seq: 2, expected: 1 })
    ));

    std::fs::write(&path, &original).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"not json\n")
        .unwrap();
    assert!(matches!(
        GateCore::open(dir.path(), clock()),
        Err(ReplayError::Parse { line: 3, .. })
    ));
}

#[test]
fn forged_but_consistent_entries_are_rejected_on_replay() {
    let fx = Fixtures::load();
    let mut core = GateCore::new(clock());
    let id = core.submit("ana", &fx.blueprint).unwrap();
    let mut entries = core.audit().to_vec();
    // A run start with a correct digest, for a blueprint nobody approved.
    let event = agentc::hitl::GateEvent::RunStarted {
        run_id: "run-000001".into(),
        blueprint_id: id,
    };
    entries.push(agentc::hitl::AuditEntry {
        seq: 2,
        timestamp: "t".into(),
        actor: "mallory".into(),
        digest: agentc::hitl::event_digest(&event),
        event,
    });
    assert!(matches!(
        GateCore::replay(&entries, clock()),
        Err(ReplayError::Rejected {
            seq: 2,
            source: GateError::Forbidden(_)
        })
    ));
}

#[test]
fn structural_run_patches_are_unprocessable() {
    let fx = Fixtures::load();
    let mut core = GateCore::new(clock());
    let id = core.submit("ana", &fx.blueprint).unwrap();
    core.decide("ana", &id, Decision::Approve, None, None).unwrap();
    let (run, mut bp) = core.start_run("op", &id).unwrap();
    assert!(matches!(
        core.patch_run("op", &run, RunPatch::Selector(phone_patch())),
        Err(GateError::Conflict(_))
    ));
    core.finish_segment("op", &run, fx.halted.clone()).unwrap();
    bp.steps.pop();
    assert!(matches!(
        core.patch_run("op", &run, RunPatch::Blueprint { blueprint: bp }),
        Err(GateError::Unprocessable(_))
    ));
    assert!(matches!(
        core.patch_run("op", "run-404", RunPatch::Selector(phone_patch())),
        Err(GateError::NotFound { .. })
    ));
    assert_eq!(core.run(&run).unwrap().state, RunState::Halted);
    assert_eq!(core.audit().len(), 4);
}
