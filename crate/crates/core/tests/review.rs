use agentc_core::review::{Decision, ReviewState, RunState, RunTransition};
use proptest::prelude::*;

fn decision() -> impl Strategy<Value = Decision> {
    prop_oneof![Just(Decision::Approve), Just(Decision::Reject), Just(Decision::Amend)]
}

proptest! {
    /// Whatever sequence of decisions and resubmissions arrives, content is
    /// executable only right after an approve on pending content.
    #[test]
    fn only_an_approval_makes_content_executable(ops in proptest::collection::vec(proptest::option::of(decision()), 0..20)) {
        let mut state = ReviewState::PendingReview;
        for op in ops {
            let before = state;
            let next = match op {
                Some(d) => state.decide(d),
                None => state.resubmit(),
            };
            if let Ok(s) = next {
                if s.is_executable() {
                    prop_assert_eq!(before, ReviewState::PendingReview);
                    prop_assert_eq!(op, Some(Decision::Approve));
                }
                state = s;
            } else {
                prop_assert_eq!(state, before);
            }
        }
    }
}

#[test]
fn terminal_run_states_accept_nothing() {
    let all = [
        RunTransition::Halt,
        RunTransition::Patch,
        RunTransition::Complete,
        RunTransition::Fail,
    ];
    for s in [RunState::Completed, RunState::Failed] {
        for t in all {
            assert!(s.apply(t).is_err(), "{s:?} {t:?}");
        }
    }
    assert_eq!(RunState::Running.apply(RunTransition::Halt), Ok(RunState::Halted));
    assert_eq!(
        RunState::Halted.apply(RunTransition::Patch),
        Ok(RunState::PatchedResuming)
    );
    assert!(RunState::Running.apply(RunTransition::Patch).is_err());
    assert_eq!(
        RunState::PatchedResuming.apply(RunTransition::Complete),
        Ok(RunState::Completed)
    );
}
