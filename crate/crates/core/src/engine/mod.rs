//! Zero-inference interpreter.
//!
//! The engine walks an approved blueprint and turns each step into backend
//! calls. It holds no reference to any model client: the only way a run can
//! trigger inference is by halting and letting a caller decide what to do
//! with the [`HaltReport`].

mod backend;
mod delay;
mod failure;
mod resolve;
mod wait;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendError, BackendEvent, BrowserBackend, NodeHandle};
pub use delay::next_delay;
pub use failure::{classify_runtime_failure, FailureMode, HaltCause, HaltReport};
pub use resolve::{normalize_text, resolve_selector, split_text_filter, ResolutionFailure, Resolved, TriedStrategy};
pub use wait::{await_quiescence, WaitOutcome};

use crate::blueprint::{
    structural_fingerprint, Action, Blueprint, Capture, Cardinality, Fingerprint, LoopMode, LoopStep, SelectorSpec,
    SelectorTarget, Step, Tier, ValueSource, WaitCondition,
};

/// One extracted record: field name to captured string.
pub type Record = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPolicy {
    /// Deadline for the implicit settle after navigations and clicks.
    pub default_timeout_ms: u64,
    /// No mutations for this long counts as quiet.
    pub quiescence_window_ms: u64,
    /// Nothing in flight for this long counts as network idle.
    pub network_idle_window_ms: u64,
    pub rng_seed: u64,
    pub max_runtime_ms: u64,
}

impl Default for RunPolicy {
    fn default() -> Self {
        RunPolicy {
            default_timeout_ms: 10_000,
            quiescence_window_ms: 100,
            network_idle_window_ms: 250,
            rng_seed: 0,
            max_runtime_ms: 3_600_000,
        }
    }
}

impl RunPolicy {
    /// Same policy with every wait window and deadline multiplied.
    pub fn extended(&self, factor: u64) -> RunPolicy {
        RunPolicy {
            default_timeout_ms: self.default_timeout_ms.saturating_mul(factor),
            quiescence_window_ms: self.quiescence_window_ms.saturating_mul(factor),
            network_idle_window_ms: self.network_idle_window_ms.saturating_mul(factor),
            ..self.clone()
        }
    }

    pub fn check(&self) -> Result<(), &'static str> {
        if self.default_timeout_ms == 0
            || self.quiescence_window_ms == 0
            || self.network_idle_window_ms == 0
            || self.max_runtime_ms == 0
        {
            return Err("all run policy windows must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Before the step's action (for paginate loops: before following next).
    Action,
    /// The action happened; only the settle wait remains.
    Settle,
    /// Inside a loop body; the next frame locates the body step.
    Body,
}

/// One level of an execution cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub iteration: u32,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step_id: String,
    pub action: String,
    pub started_ms: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Halted,
}

/// How a resumed run re-entered the blueprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    /// Continued from the halted step with prior records kept.
    Resumed,
    /// The session no longer matched the halt; ran again from step one.
    FullRerun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub fingerprint: Fingerprint,
    pub datasets: BTreeMap<String, Vec<Record>>,
    pub trace: Vec<StepEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt: Option<HaltReport>,
    /// Always zero; the interpreter cannot reach a model.
    pub inference_calls_during_run: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<Restart>,
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Progress notifications for live monitoring.
#[derive(Debug, Clone, Copy)]
pub enum RunEvent<'a> {
    Step(&'a StepEvent),
    Halted(&'a HaltReport),
    Completed,
}

/// Turns a raw page snapshot into the form stored in a halt report.
pub trait SnapshotSanitizer {
    fn sanitize_snapshot(&self, html: &str) -> String;
}

/// Keeps snapshots verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawSnapshot;

impl SnapshotSanitizer for RawSnapshot {
    fn sanitize_snapshot(&self, html: &str) -> String {
        html.to_string()
    }
}

impl<F: Fn(&str) -> String> SnapshotSanitizer for F {
    fn sanitize_snapshot(&self, html: &str) -> String {
        self(html)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResumeError {
    #[error("the prior outcome did not halt")]
    NotHalted,
    #[error("blueprint structure changed: halted run had {expected}, patched blueprint has {found}")]
    FingerprintMismatch { expected: Fingerprint, found: Fingerprint },
}

type Observer<'a> = Box<dyn FnMut(RunEvent<'_>) + 'a>;

pub struct Engine<'a> {
    policy: RunPolicy,
    payload: BTreeMap<String, String>,
    sanitizer: &'a dyn SnapshotSanitizer,
    observer: Option<Observer<'a>>,
}

impl<'a> Engine<'a> {
    pub fn new(policy: RunPolicy) -> Self {
        Engine {
            policy,
            payload: BTreeMap::new(),
            sanitizer: &RawSnapshot,
            observer: None,
        }
    }

    pub fn with_sanitizer(mut self, sanitizer: &'a dyn SnapshotSanitizer) -> Self {
        self.sanitizer = sanitizer;
        self
    }

    /// Values for `input` steps whose source is a payload field.
    pub fn with_payload(mut self, payload: BTreeMap<String, String>) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_observer(mut self, observer: impl FnMut(RunEvent<'_>) + 'a) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    pub fn policy(&self) -> &RunPolicy {
        &self.policy
    }

    /// Executes `bp` from its first step. Failures never escape as errors:
    /// they come back as a halted outcome.
    pub fn run<B: BrowserBackend + ?Sized>(&mut self, bp: &Blueprint, backend: &mut B) -> RunOutcome {
        let session = Session::new(self, backend, BTreeMap::new(), Vec::new());
        session.execute(bp, None, None)
    }

    /// Continues a halted run of a fingerprint-equal blueprint from the halt
    /// cursor, keeping prior records. Falls back to a full re-run when the
    /// session has left the page the halt happened on.
    pub fn resume<B: BrowserBackend + ?Sized>(
        &mut self,
        bp: &Blueprint,
        halted: &RunOutcome,
        backend: &mut B,
    ) -> Result<RunOutcome, ResumeError> {
        let halt = halted.halt.as_ref().ok_or(ResumeError::NotHalted)?;
        let found = structural_fingerprint(bp);
        if found != halted.fingerprint {
            return Err(ResumeError::FingerprintMismatch {
                expected: halted.fingerprint,
                found,
            });
        }
        if backend.current_url() == halt.url {
            let session = Session::new(self, backend, halted.datasets.clone(), halted.trace.clone());
            Ok(session.execute(bp, Some(&halt.cursor), Some(Restart::Resumed)))
        } else {
            let session = Session::new(self, backend, BTreeMap::new(), Vec::new());
            Ok(session.execute(bp, None, Some(Restart::FullRerun)))
        }
    }
}

/// A step that could not complete, before the snapshot is taken.
struct Halt {
    step_id: String,
    cause: HaltCause,
    selector: Option<(SelectorSpec, SelectorTarget)>,
    cursor: Vec<Frame>,
}

struct Session<'s, 'a, B: ?Sized> {
    engine: &'s mut Engine<'a>,
    backend: &'s mut B,
    rng: ChaCha8Rng,
    datasets: BTreeMap<String, Vec<Record>>,
    trace: Vec<StepEvent>,
    started_ms: u64,
}

impl<'s, 'a, B: BrowserBackend + ?Sized> Session<'s, 'a, B> {
    fn new(
        engine: &'s mut Engine<'a>,
        backend: &'s mut B,
        datasets: BTreeMap<String, Vec<Record>>,
        trace: Vec<StepEvent>,
    ) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(engine.policy.rng_seed);
        let started_ms = backend.now_ms();
        Session {
            engine,
            backend,
            rng,
            datasets,
            trace,
            started_ms,
        }
    }

    fn execute(mut self, bp: &Blueprint, resume: Option<&[Frame]>, restart: Option<Restart>) -> RunOutcome {
        let fingerprint = structural_fingerprint(bp);
        let mut path = Vec::new();
        let result = self.exec_list(&bp.steps, &mut path, resume);
        let halt = match result {
            Ok(()) => {
                self.notify(RunEvent::Completed);
                None
            }
            Err(h) => {
                let report = self.report(*h);
                self.notify(RunEvent::Halted(&report));
                Some(report)
            }
        };
        RunOutcome {
            status: if halt.is_some() {
                RunStatus::Halted
            } else {
                RunStatus::Completed
            },
            fingerprint,
            datasets: self.datasets,
            trace: self.trace,
            halt,
            inference_calls_during_run: 0,
            restart,
        }
    }

    fn notify(&mut self, event: RunEvent<'_>) {
        if let Some(observer) = self.engine.observer.as_mut() {
            observer(event);
        }
    }

    fn report(&mut self, halt: Halt) -> HaltReport {
        let raw = self.backend.snapshot_html().unwrap_or_default();
        let (selector, selector_target) = match halt.selector {
            Some((s, t)) => (Some(s), Some(t)),
            None => (None, None),
        };
        HaltReport {
            step_id: halt.step_id,
            failure_mode: classify_runtime_failure(&halt.cause),
            selector,
            selector_target,
            dom_snapshot: self.engine.sanitizer.sanitize_snapshot(&raw),
            message: halt.cause.describe(),
            timestamp_ms: self.backend.now_ms(),
            url: self.backend.current_url(),
            cursor: halt.cursor,
            cause: halt.cause,
        }
    }

    fn record(&mut self, step: &Step, action: &str, started_ms: u64, tier: Option<Tier>) {
        let event = StepEvent {
            step_id: step.id.clone(),
            action: action.into(),
            started_ms,
            duration_ms: self.backend.now_ms().saturating_sub(started_ms),
            tier,
        };
        self.notify(RunEvent::Step(&event));
        self.trace.push(event);
    }

    fn exec_list(&mut self, steps: &[Step], path: &mut Vec<Frame>, resume: Option<&[Frame]>) -> Result<(), Box<Halt>> {
        let (start, mut pending) = match resume {
            Some(frames) if !frames.is_empty() => (frames[0].index, Some(frames)),
            _ => (0, None),
        };
        for (index, step) in steps.iter().enumerate().skip(start) {
            let here = if index == start { pending.take() } else { None };
            self.exec_step(step, index, path, here)?;
        }
        Ok(())
    }

    fn halt_at(
        &self,
        step: &Step,
        path: &[Frame],
        frame: Frame,
        cause: HaltCause,
        selector: Option<(SelectorSpec, SelectorTarget)>,
    ) -> Box<Halt> {
        let mut cursor = path.to_vec();
        cursor.push(frame);
        Box::new(Halt {
            step_id: step.id.clone(),
            cause,
            selector,
            cursor,
        })
    }

    fn exec_step(
        &mut self,
        step: &Step,
        index: usize,
        path: &mut Vec<Frame>,
        resume: Option<&[Frame]>,
    ) -> Result<(), Box<Halt>> {
        let phase = resume.map(|r| r[0].phase).unwrap_or(Phase::Action);
        let at = |phase| Frame {
            index,
            iteration: 0,
            phase,
        };
        let elapsed = self.backend.now_ms().saturating_sub(self.started_ms);
        if elapsed > self.engine.policy.max_runtime_ms {
            return Err(self.halt_at(
                step,
                path,
                at(phase),
                HaltCause::RuntimeBudget { elapsed_ms: elapsed },
                None,
            ));
        }
        let started = self.backend.now_ms();
        match &step.action {
            Action::Navigate { url } => {
                if phase == Phase::Action {
                    if let Err(e) = self.backend.navigate(url) {
                        let cause = HaltCause::Navigation { message: e.to_string() };
                        return Err(self.halt_at(step, path, at(Phase::Action), cause, None));
                    }
                }
                self.settle(step, path, at(Phase::Settle))?;
                self.record(step, "navigate", started, None);
            }
            Action::Click { selector } => {
                let mut tier = None;
                if phase == Phase::Action {
                    let (node, t) =
                        self.resolve_one(step, selector, None, SelectorTarget::Primary, path, at(Phase::Action))?;
                    self.backend_call(step, path, at(Phase::Action), |b| b.click(node))?;
                    tier = Some(t);
                }
                self.settle(step, path, at(Phase::Settle))?;
                self.record(step, "click", started, tier);
            }
            Action::Input { selector, value_source } => {
                let mut tier = None;
                if phase == Phase::Action {
                    let text = match value_source {
                        ValueSource::Literal(s) => s.clone(),
                        ValueSource::Field(name) => match self.engine.payload.get(name) {
                            Some(v) => v.clone(),
                            None => {
                                let cause = HaltCause::MissingPayload { field: name.clone() };
                                return Err(self.halt_at(step, path, at(Phase::Action), cause, None));
                            }
                        },
                    };
                    let (node, t) =
                        self.resolve_one(step, selector, None, SelectorTarget::Primary, path, at(Phase::Action))?;
                    self.backend_call(step, path, at(Phase::Action), |b| b.set_value(node, &text))?;
                    tier = Some(t);
                }
                self.settle_dom(step, path, at(Phase::Settle))?;
                self.record(step, "input", started, tier);
            }
            Action::Select { selector, option_label } => {
                let mut tier = None;
                if phase == Phase::Action {
                    let (node, t) =
                        self.resolve_one(step, selector, None, SelectorTarget::Primary, path, at(Phase::Action))?;
                    if let Err(e) = self.backend.select_option(node, option_label) {
                        let cause = match e {
                            BackendError::OptionNotFound(label) => HaltCause::OptionMissing { label },
                            other => HaltCause::Backend {
                                message: other.to_string(),
                            },
                        };
                        let sel = Some((selector.clone(), SelectorTarget::Primary));
                        return Err(self.halt_at(step, path, at(Phase::Action), cause, sel));
                    }
                    tier = Some(t);
                }
                self.settle_dom(step, path, at(Phase::Settle))?;
                self.record(step, "select", started, tier);
            }
            Action::Extract {
                scope_selector,
                fields,
                dataset,
            } => {
                let frame = at(Phase::Action);
                let scopes = match resolve_selector(scope_selector, self.backend, None) {
                    Ok(r) => r,
                    Err(failure) => {
                        let sel = Some((scope_selector.clone(), SelectorTarget::Primary));
                        return Err(self.halt_at(step, path, frame, HaltCause::Resolution { failure }, sel));
                    }
                };
                let mut records = Vec::with_capacity(scopes.handles.len());
                for &scope in &scopes.handles {
                    let mut record = Record::new();
                    for field in fields {
                        let target = SelectorTarget::Field(field.name.clone());
                        let (node, _) = self.resolve_one(step, &field.selector, Some(scope), target, path, frame)?;
                        let value = match &field.capture {
                            Capture::Text => self
                                .backend_call(step, path, frame, |b| b.read_text(node))
                                .map(|t| normalize_text(&t))?,
                            Capture::Attribute(name) => self
                                .backend_call(step, path, frame, |b| b.read_attribute(node, name))?
                                .map(|v| v.trim().to_string())
                                .unwrap_or_default(),
                        };
                        record.insert(field.name.clone(), value);
                    }
                    records.push(record);
                }
                // Every declared field is required to be non-empty.
                for (i, record) in records.iter().enumerate() {
                    let empty: Vec<String> = fields
                        .iter()
                        .filter(|f| record.get(&f.name).is_none_or(|v| v.is_empty()))
                        .map(|f| f.name.clone())
                        .collect();
                    if !empty.is_empty() {
                        let cause = HaltCause::EmptyFields {
                            dataset: dataset.clone(),
                            record: i,
                            fields: empty,
                        };
                        return Err(self.halt_at(step, path, frame, cause, None));
                    }
                }
                self.datasets.entry(dataset.clone()).or_default().extend(records);
                self.record(step, "extract", started, Some(scopes.tier));
            }
            Action::Wait { condition, timeout_ms } => {
                let outcome = await_quiescence(self.backend, condition, *timeout_ms, &self.engine.policy);
                let selector = match condition {
                    WaitCondition::SelectorVisible { selector } => Some((selector.clone(), SelectorTarget::Primary)),
                    _ => None,
                };
                match outcome {
                    WaitOutcome::Satisfied => {}
                    WaitOutcome::TimedOut => {
                        let cause = HaltCause::WaitTimeout {
                            condition: condition_name(condition).into(),
                            timeout_ms: *timeout_ms,
                        };
                        return Err(self.halt_at(step, path, at(Phase::Action), cause, selector));
                    }
                    WaitOutcome::Interrupted => {
                        return Err(self.halt_at(step, path, at(Phase::Action), HaltCause::UnexpectedModal, selector));
                    }
                }
                self.record(step, "wait", started, None);
            }
            Action::Delay { base_ms, jitter_ms } => {
                let ms = next_delay(*base_ms, *jitter_ms, &mut self.rng);
                self.backend.pause(ms);
                self.record(step, "delay", started, None);
            }
            Action::Loop(l) => self.exec_loop(step, l, index, path, resume)?,
        }
        Ok(())
    }

    fn exec_loop(
        &mut self,
        step: &Step,
        l: &LoopStep,
        index: usize,
        path: &mut Vec<Frame>,
        resume: Option<&[Frame]>,
    ) -> Result<(), Box<Halt>> {
        let (mut iteration, mut phase, mut inner) = match resume {
            Some(frames) => (frames[0].iteration, frames[0].phase, Some(&frames[1..])),
            None => (0, Phase::Action, None),
        };
        let started = self.backend.now_ms();
        match &l.mode {
            LoopMode::Paginate { next_selector } => {
                while iteration < l.max_iterations {
                    let frame = |phase| Frame {
                        index,
                        iteration,
                        phase,
                    };
                    if phase == Phase::Action {
                        let t0 = self.backend.now_ms();
                        let next = match resolve_selector(next_selector, self.backend, None) {
                            Ok(r) => r,
                            Err(failure) if failure.nothing_matched() => break,
                            Err(failure) => {
                                let sel = Some((next_selector.clone(), SelectorTarget::Primary));
                                return Err(self.halt_at(
                                    step,
                                    path,
                                    frame(Phase::Action),
                                    HaltCause::Resolution { failure },
                                    sel,
                                ));
                            }
                        };
                        let node = next.handles[0];
                        self.backend_call(step, path, frame(Phase::Action), |b| b.click(node))?;
                        self.settle(step, path, frame(Phase::Settle))?;
                        if l.inter_iteration_delay_ms > 0 {
                            self.backend.pause(l.inter_iteration_delay_ms);
                        }
                        self.record(step, "next", t0, Some(next.tier));
                    } else if phase == Phase::Settle {
                        let t0 = self.backend.now_ms();
                        self.settle(step, path, frame(Phase::Settle))?;
                        if l.inter_iteration_delay_ms > 0 {
                            self.backend.pause(l.inter_iteration_delay_ms);
                        }
                        self.record(step, "next", t0, None);
                    }
                    path.push(frame(Phase::Body));
                    let result = self.exec_list(&l.body, path, inner.take());
                    path.pop();
                    result?;
                    iteration += 1;
                    phase = Phase::Action;
                }
            }
            LoopMode::RepeatCount { count } => {
                let total = (*count).min(l.max_iterations);
                while iteration < total {
                    path.push(Frame {
                        index,
                        iteration,
                        phase: Phase::Body,
                    });
                    let result = self.exec_list(&l.body, path, inner.take());
                    path.pop();
                    result?;
                    iteration += 1;
                    if iteration < total && l.inter_iteration_delay_ms > 0 {
                        self.backend.pause(l.inter_iteration_delay_ms);
                    }
                }
            }
        }
        self.record(step, "loop", started, None);
        Ok(())
    }

    fn resolve_one(
        &mut self,
        step: &Step,
        spec: &SelectorSpec,
        scope: Option<NodeHandle>,
        target: SelectorTarget,
        path: &[Frame],
        frame: Frame,
    ) -> Result<(NodeHandle, Tier), Box<Halt>> {
        match resolve_selector(spec, self.backend, scope) {
            Ok(r) if spec.expected_cardinality == Cardinality::One || !r.handles.is_empty() => {
                Ok((r.handles[0], r.tier))
            }
            Ok(_) => unreachable!("many-cardinality resolution never returns zero handles"),
            Err(failure) => Err(self.halt_at(
                step,
                path,
                frame,
                HaltCause::Resolution { failure },
                Some((spec.clone(), target)),
            )),
        }
    }

    fn backend_call<T>(
        &mut self,
        step: &Step,
        path: &[Frame],
        frame: Frame,
        call: impl FnOnce(&mut B) -> Result<T, BackendError>,
    ) -> Result<T, Box<Halt>> {
        call(self.backend).map_err(|e| {
            let cause = match e {
                BackendError::Navigation(message) => HaltCause::Navigation { message },
                other => HaltCause::Backend {
                    message: other.to_string(),
                },
            };
            self.halt_at(step, path, frame, cause, None)
        })
    }

    /// Network idle, then DOM quiet, under the default deadline.
    fn settle(&mut self, step: &Step, path: &[Frame], frame: Frame) -> Result<(), Box<Halt>> {
        self.wait_implicit(step, path, frame, &WaitCondition::NetworkIdle)?;
        self.wait_implicit(step, path, frame, &WaitCondition::MutationQuiet)
    }

    /// DOM quiet only; for edits that do not load anything.
    fn settle_dom(&mut self, step: &Step, path: &[Frame], frame: Frame) -> Result<(), Box<Halt>> {
        self.wait_implicit(step, path, frame, &WaitCondition::MutationQuiet)
    }

    fn wait_implicit(
        &mut self,
        step: &Step,
        path: &[Frame],
        frame: Frame,
        condition: &WaitCondition,
    ) -> Result<(), Box<Halt>> {
        let timeout_ms = self.engine.policy.default_timeout_ms;
        match await_quiescence(self.backend, condition, timeout_ms, &self.engine.policy) {
            WaitOutcome::Satisfied => Ok(()),
            WaitOutcome::TimedOut => {
                let cause = HaltCause::WaitTimeout {
                    condition: condition_name(condition).into(),
                    timeout_ms,
                };
                Err(self.halt_at(step, path, frame, cause, None))
            }
            WaitOutcome::Interrupted => Err(self.halt_at(step, path, frame, HaltCause::UnexpectedModal, None)),
        }
    }
}

fn condition_name(condition: &WaitCondition) -> &'static str {
    match condition {
        WaitCondition::MutationQuiet => "mutation_quiet",
        WaitCondition::NetworkIdle => "network_idle",
        WaitCondition::SelectorVisible { .. } => "selector_visible",
    }
}
