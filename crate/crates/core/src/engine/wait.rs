use super::backend::{BackendEvent, BrowserBackend};
use super::resolve::resolve_selector;
use super::RunPolicy;
use crate::blueprint::WaitCondition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitOutcome {
    Satisfied,
    TimedOut,
    /// A dialog appeared while waiting.
    Interrupted,
}

/// Event-driven wait with a hard deadline; never sleeps a fixed duration.
///
/// `mutation_quiet` holds once no mutation has arrived for the quiescence
/// window, `network_idle` once nothing has been in flight for the idle
/// window, `selector_visible` once the selector resolves.
pub fn await_quiescence<B: BrowserBackend + ?Sized>(
    backend: &mut B,
    condition: &WaitCondition,
    timeout_ms: u64,
    policy: &RunPolicy,
) -> WaitOutcome {
    let deadline = backend.now_ms().saturating_add(timeout_ms);
    match condition {
        WaitCondition::MutationQuiet => {
            let window = policy.quiescence_window_ms;
            let mut quiet_since = backend.now_ms();
            loop {
                let now = backend.now_ms();
                if now >= quiet_since.saturating_add(window) {
                    return WaitOutcome::Satisfied;
                }
                if now >= deadline {
                    return WaitOutcome::TimedOut;
                }
                let wake = quiet_since.saturating_add(window).min(deadline);
                match backend.next_event(wake) {
                    Some(BackendEvent::Mutation { dialog_added: true }) => return WaitOutcome::Interrupted,
                    Some(BackendEvent::Mutation { .. }) => quiet_since = backend.now_ms(),
                    _ => {}
                }
            }
        }
        WaitCondition::NetworkIdle => {
            let window = policy.network_idle_window_ms;
            let mut idle_since = (backend.inflight_requests() == 0).then(|| backend.now_ms());
            loop {
                let now = backend.now_ms();
                if let Some(since) = idle_since {
                    if now >= since.saturating_add(window) {
                        return WaitOutcome::Satisfied;
                    }
                }
                if now >= deadline {
                    return WaitOutcome::TimedOut;
                }
                let wake = idle_since
                    .map(|s| s.saturating_add(window).min(deadline))
                    .unwrap_or(deadline);
                match backend.next_event(wake) {
                    Some(BackendEvent::Mutation { dialog_added: true }) => return WaitOutcome::Interrupted,
                    Some(BackendEvent::NetworkStarted) => idle_since = None,
                    Some(BackendEvent::NetworkFinished) if backend.inflight_requests() == 0 => {
                        idle_since = Some(backend.now_ms())
                    }
                    _ => {}
                }
            }
        }
        WaitCondition::SelectorVisible { selector } => loop {
            if resolve_selector(selector, backend, None).is_ok() {
                return WaitOutcome::Satisfied;
            }
            if backend.now_ms() >= deadline {
                return WaitOutcome::TimedOut;
            }
            backend.next_event(deadline);
        },
    }
}
