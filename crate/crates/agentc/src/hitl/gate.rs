use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentc_core::blueprint::{
    apply_patch, canonical_json, structural_fingerprint, validate, Blueprint, SelectorPatch, ValidationError,
};
use agentc_core::engine::{HaltReport, Record, RunOutcome, StepEvent};
use agentc_core::review::{Decision, ReviewState, RunState, RunTransition};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Clock, SystemClock};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub actor: String,
    pub action: Decision,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<SelectorPatch>,
    /// Where a patch came from, e.g. `manual`. Reserved for other sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub blueprint_id: String,
    pub blueprint: Blueprint,
    pub state: ReviewState,
    pub decisions: Vec<DecisionEntry>,
}

/// A mid-run correction: a selector patch, or a whole blueprint that must
/// keep the running one's structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunPatch {
    Selector(SelectorPatch),
    Blueprint { blueprint: Blueprint },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub blueprint_id: String,
    pub state: RunState,
    /// The blueprint as currently executing, patches included.
    pub blueprint: Blueprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt: Option<HaltReport>,
    pub trace: Vec<StepEvent>,
    pub datasets: BTreeMap<String, Vec<Record>>,
    pub patches: Vec<RunPatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Every state change, as recorded in the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateEvent {
    BlueprintSubmitted {
        blueprint_id: String,
        blueprint: Blueprint,
    },
    Decided {
        blueprint_id: String,
        action: Decision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patch: Option<SelectorPatch>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<String>,
    },
    RunStarted {
        run_id: String,
        blueprint_id: String,
    },
    RunHalted {
        run_id: String,
        outcome: RunOutcome,
    },
    RunPatched {
        run_id: String,
        patch: RunPatch,
        blueprint: Blueprint,
    },
    RunCompleted {
        run_id: String,
        outcome: RunOutcome,
    },
    RunFailed {
        run_id: String,
        message: String,
    },
}

impl GateEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            GateEvent::BlueprintSubmitted { .. } => "blueprint_submitted",
            GateEvent::Decided { .. } => "decided",
            GateEvent::RunStarted { .. } => "run_started",
            GateEvent::RunHalted { .. } => "run_halted",
            GateEvent::RunPatched { .. } => "run_patched",
            GateEvent::RunCompleted { .. } => "run_completed",
            GateEvent::RunFailed { .. } => "run_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: String,
    pub actor: String,
    /// SHA-256 of the event's canonical JSON.
    pub digest: String,
    #[serde(flatten)]
    pub event: GateEvent,
}

pub fn event_digest(event: &GateEvent) -> String {
    let digest = Sha256::digest(canonical_json(event).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("blueprint failed validation")]
    Invalid(Vec<ValidationError>),
    #[error("no such {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("audit log: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("entry {seq}: expected sequence number {expected}")]
    Gap { seq: u64, expected: u64 },
    #[error("entry {0}: digest does not match its event")]
    Digest(u64),
    #[error("entry {seq}: {source}")]
    Rejected { seq: u64, source: GateError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GateSnapshot {
    pub reviews: BTreeMap<String, ReviewRecord>,
    pub runs: BTreeMap<String, RunRecord>,
}

/// Review and run state plus the audit log that produced it.
pub struct GateCore {
    reviews: BTreeMap<String, ReviewRecord>,
    runs: BTreeMap<String, RunRecord>,
    audit: Vec<AuditEntry>,
    clock: Arc<dyn Clock>,
    sink: Option<File>,
    blueprint_dir: Option<PathBuf>,
}

impl std::fmt::Debug for GateCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GateCore")
            .field("reviews", &self.reviews.len())
            .field("runs", &self.runs.len())
            .field("audit", &self.audit.len())
            .finish_non_exhaustive()
    }
}

impl Default for GateCore {
    fn default() -> Self {
        GateCore::new(Arc::new(SystemClock))
    }
}

const AUDIT_FILE: &str = "audit.jsonl";

impl GateCore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        GateCore {
            reviews: BTreeMap::new(),
            runs: BTreeMap::new(),
            audit: Vec::new(),
            clock,
            sink: None,
            blueprint_dir: None,
        }
    }

    /// Opens (or creates) a data directory: replays its audit log, then
    /// appends to it.
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Result<Self, ReplayError> {
        std::fs::create_dir_all(dir.join("blueprints"))?;
        let path = dir.join(AUDIT_FILE);
        let entries = if path.exists() { read_audit(&path)? } else { Vec::new() };
        let mut core = GateCore::replay(&entries, clock)?;
        core.sink = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        core.blueprint_dir = Some(dir.join("blueprints"));
        Ok(core)
    }

    /// Rebuilds state from a log, checking order and digests.
    pub fn replay(entries: &[AuditEntry], clock: Arc<dyn Clock>) -> Result<Self, ReplayError> {
        let mut core = GateCore::new(clock);
        for (i, entry) in entries.iter().enumerate() {
            let expected = i as u64 + 1;
            if entry.seq != expected {
                return Err(ReplayError::Gap {
                    seq: entry.seq,
                    expected,
                });
            }
            if event_digest(&entry.event) != entry.digest {
                return Err(ReplayError::Digest(entry.seq));
            }
            core.apply(&entry.event, &entry.actor, &entry.timestamp)
                .map_err(|source| ReplayError::Rejected { seq: entry.seq, source })?;
            core.audit.push(entry.clone());
        }
        Ok(core)
    }

    pub fn review(&self, id: &str) -> Option<&ReviewRecord> {
        self.reviews.get(id)
    }

    pub fn run(&self, id: &str) -> Option<&RunRecord> {
        self.runs.get(id)
    }

    pub fn reviews(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.reviews.values()
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values()
    }

    /// Entries with `seq > since`.
    pub fn audit_since(&self, since: u64) -> &[AuditEntry] {
        let start = (since as usize).min(self.audit.len());
        &self.audit[start..]
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Every review and run record, for comparing two gates.
    pub fn snapshot(&self) -> GateSnapshot {
        GateSnapshot {
            reviews: self.reviews.clone(),
            runs: self.runs.clone(),
        }
    }

    fn review_mut(&mut self, id: &str) -> Result<&mut ReviewRecord, GateError> {
        self.reviews.get_mut(id).ok_or_else(|| GateError::NotFound {
            kind: "blueprint",
            id: id.into(),
        })
    }

    fn run_mut(&mut self, id: &str) -> Result<&mut RunRecord, GateError> {
        self.runs.get_mut(id).ok_or_else(|| GateError::NotFound {
            kind: "run",
            id: id.into(),
        })
    }

    /// Applies one event. Every precondition is checked here, so a live
    /// operation and its replay agree.
    fn apply(&mut self, event: &GateEvent, actor: &str, timestamp: &str) -> Result<(), GateError> {
        match event {
            GateEvent::BlueprintSubmitted {
                blueprint_id,
                blueprint,
            } => {
                if self.reviews.contains_key(blueprint_id) {
                    return Err(GateError::Conflict(format!("`{blueprint_id}` already exists")));
                }
                self.reviews.insert(
                    blueprint_id.clone(),
                    ReviewRecord {
                        blueprint_id: blueprint_id.clone(),
                        blueprint: blueprint.clone(),
                        state: ReviewState::PendingReview,
                        decisions: Vec::new(),
                    },
                );
            }
            GateEvent::Decided {
                blueprint_id,
                action,
                patch,
                origin,
            } => {
                let record = self.review_mut(blueprint_id)?;
                if record.state != ReviewState::PendingReview {
                    return Err(GateError::Conflict(format!(
                        "`{blueprint_id}` is {}, not pending_review",
                        record.state.as_str()
                    )));
                }
                let mut next = record
                    .state
                    .decide(*action)
                    .map_err(|e| GateError::Conflict(e.to_string()))?;
                if *action == Decision::Amend {
                    let patch = patch
                        .as_ref()
                        .ok_or_else(|| GateError::Unprocessable("amend needs a patch".into()))?;
                    record.blueprint =
                        apply_patch(&record.blueprint, patch).map_err(|e| GateError::Unprocessable(e.to_string()))?;
                    next = next.resubmit().map_err(|e| GateError::Conflict(e.to_string()))?;
                } else if patch.is_some() {
                    return Err(GateError::Unprocessable("only amend takes a patch".into()));
                }
                record.state = next;
                record.decisions.push(DecisionEntry {
                    actor: actor.into(),
                    action: *action,
                    timestamp: timestamp.into(),
                    patch: patch.clone(),
                    origin: origin.clone(),
                });
            }
            GateEvent::RunStarted { run_id, blueprint_id } => {
                let record = self.reviews.get(blueprint_id).ok_or_else(|| GateError::NotFound {
                    kind: "blueprint",
                    id: blueprint_id.clone(),
                })?;
                if !record.state.is_executable() {
                    return Err(GateError::Forbidden(format!(
                        "`{blueprint_id}` is {}; only approved blueprints run",
                        record.state.as_str()
                    )));
                }
                if self.runs.contains_key(run_id) {
                    return Err(GateError::Conflict(format!("`{run_id}` already exists")));
                }
                let blueprint = record.blueprint.clone();
                self.runs.insert(
                    run_id.clone(),
                    RunRecord {
                        run_id: run_id.clone(),
                        blueprint_id: blueprint_id.clone(),
                        state: RunState::Running,
                        blueprint,
                        halt: None,
                        trace: Vec::new(),
                        datasets: BTreeMap::new(),
                        patches: Vec::new(),
                        error: None,
                    },
                );
            }
            GateEvent::RunHalted { run_id, outcome } | GateEvent::RunCompleted { run_id, outcome } => {
                let halted = matches!(event, GateEvent::RunHalted { .. });
                if halted != outcome.halt.is_some() {
                    return Err(GateError::Unprocessable(
                        "outcome status does not match the event".into(),
                    ));
                }
                let run = self.run_mut(run_id)?;
                let transition = if halted {
                    RunTransition::Halt
                } else {
                    RunTransition::Complete
                };
                run.state = run
                    .state
                    .apply(transition)
                    .map_err(|e| GateError::Conflict(e.to_string()))?;
                run.halt = outcome.halt.clone();
                run.trace = outcome.trace.clone();
                run.datasets = outcome.datasets.clone();
            }
            GateEvent::RunPatched {
                run_id,
                patch,
                blueprint,
            } => {
                let run = self.run_mut(run_id)?;
                if run.state != RunState::Halted {
                    return Err(GateError::Conflict(format!(
                        "`{run_id}` is {}, not halted",
                        run.state.as_str()
                    )));
                }
                let expected = patch_run_blueprint(&run.blueprint, patch)?;
                if &expected != blueprint {
                    return Err(GateError::Unprocessable(
                        "recorded blueprint does not match the patch".into(),
                    ));
                }
                run.state = run
                    .state
                    .apply(RunTransition::Patch)
                    .map_err(|e| GateError::Conflict(e.to_string()))?;
                run.blueprint = blueprint.clone();
                run.patches.push(patch.clone());
            }
            GateEvent::RunFailed { run_id, message } => {
                let run = self.run_mut(run_id)?;
                run.state = run
                    .state
                    .apply(RunTransition::Fail)
                    .map_err(|e| GateError::Conflict(e.to_string()))?;
                run.error = Some(message.clone());
            }
        }
        Ok(())
    }

    /// Applies an event and appends it to the log. Nothing changes when
    /// the event is rejected.
    fn commit(&mut self, actor: &str, event: GateEvent) -> Result<&AuditEntry, GateError> {
        let timestamp = self.clock.now();
        let backup = (self.reviews.clone(), self.runs.clone());
        if let Err(e) = self.apply(&event, actor, &timestamp) {
            (self.reviews, self.runs) = backup;
            return Err(e);
        }
        let entry = AuditEntry {
            seq: self.audit.len() as u64 + 1,
            timestamp,
            actor: actor.into(),
            digest: event_digest(&event),
            event,
        };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            let written = writeln!(sink, "{line}").and_then(|_| sink.flush());
            if let Err(e) = written {
                (self.reviews, self.runs) = backup;
                return Err(e.into());
            }
        }
        self.audit.push(entry);
        Ok(self.audit.last().expect("just pushed"))
    }

    fn persist_blueprint(&self, id: &str) -> Result<(), GateError> {
        if let (Some(dir), Some(record)) = (&self.blueprint_dir, self.reviews.get(id)) {
            let text = serde_json::to_string_pretty(&record.blueprint).map_err(std::io::Error::other)?;
            std::fs::write(dir.join(format!("{id}.json")), text)?;
        }
        Ok(())
    }

    /// Validates and stores a blueprint for review. Identical content gets a
    /// fresh id every time.
    pub fn submit(&mut self, actor: &str, raw: &[u8]) -> Result<String, GateError> {
        let blueprint = validate(raw).map_err(GateError::Invalid)?;
        let blueprint_id = format!("bp-{:06}", self.reviews.len() + 1);
        self.commit(
            actor,
            GateEvent::BlueprintSubmitted {
                blueprint_id: blueprint_id.clone(),
                blueprint,
            },
        )?;
        self.persist_blueprint(&blueprint_id)?;
        Ok(blueprint_id)
    }

    pub fn decide(
        &mut self,
        actor: &str,
        blueprint_id: &str,
        action: Decision,
        patch: Option<SelectorPatch>,
        origin: Option<String>,
    ) -> Result<&ReviewRecord, GateError> {
        self.commit(
            actor,
            GateEvent::Decided {
                blueprint_id: blueprint_id.into(),
                action,
                patch,
                origin,
            },
        )?;
        self.persist_blueprint(blueprint_id)?;
        Ok(&self.reviews[blueprint_id])
    }

    /// Opens a run record for an approved blueprint and returns its id and
    /// the blueprint to execute.
    pub fn start_run(&mut self, actor: &str, blueprint_id: &str) -> Result<(String, Blueprint), GateError> {
        let run_id = format!("run-{:06}", self.runs.len() + 1);
        self.commit(
            actor,
            GateEvent::RunStarted {
                run_id: run_id.clone(),
                blueprint_id: blueprint_id.into(),
            },
        )?;
        let bp = self.runs[&run_id].blueprint.clone();
        Ok((run_id, bp))
    }

    /// Records how an execution segment of a run ended.
    pub fn finish_segment(&mut self, actor: &str, run_id: &str, outcome: RunOutcome) -> Result<&RunRecord, GateError> {
        let event = if outcome.halt.is_some() {
            GateEvent::RunHalted {
                run_id: run_id.into(),
                outcome,
            }
        } else {
            GateEvent::RunCompleted {
                run_id: run_id.into(),
                outcome,
            }
        };
        self.commit(actor, event)?;
        Ok(&self.runs[run_id])
    }

    pub fn fail_run(&mut self, actor: &str, run_id: &str, message: String) -> Result<&RunRecord, GateError> {
        self.commit(
            actor,
            GateEvent::RunFailed {
                run_id: run_id.into(),
                message,
            },
        )?;
        Ok(&self.runs[run_id])
    }

    /// Applies a structure-preserving patch to a halted run.
    pub fn patch_run(&mut self, actor: &str, run_id: &str, patch: RunPatch) -> Result<&RunRecord, GateError> {
        let run = self.runs.get(run_id).ok_or_else(|| GateError::NotFound {
            kind: "run",
            id: run_id.into(),
        })?;
        if run.state != RunState::Halted {
            return Err(GateError::Conflict(format!(
                "`{run_id}` is {}, not halted",
                run.state.as_str()
            )));
        }
        let blueprint = patch_run_blueprint(&run.blueprint, &patch)?;
        self.commit(
            actor,
            GateEvent::RunPatched {
                run_id: run_id.into(),
                patch,
                blueprint,
            },
        )?;
        Ok(&self.runs[run_id])
    }
}

fn patch_run_blueprint(current: &Blueprint, patch: &RunPatch) -> Result<Blueprint, GateError> {
    match patch {
        RunPatch::Selector(p) => apply_patch(current, p).map_err(|e| GateError::Unprocessable(e.to_string())),
        RunPatch::Blueprint { blueprint } => {
            let raw = serde_json::to_vec(blueprint).map_err(std::io::Error::other)?;
            let checked = validate(&raw).map_err(GateError::Invalid)?;
            let (was, now) = (structural_fingerprint(current), structural_fingerprint(&checked));
            if was != now {
                return Err(GateError::Unprocessable(format!(
                    "patch changes the blueprint structure ({was} to {now})"
                )));
            }
            Ok(checked)
        }
    }
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditEntry>, ReplayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| ReplayError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}
