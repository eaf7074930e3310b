//! The human verification gate: blueprint review, gated execution,
//! mid-run patching and an append-only audit log, served over HTTP.

mod gate;
mod server;

pub use gate::{
    event_digest, read_audit, AuditEntry, DecisionEntry, GateCore, GateError, GateEvent, GateSnapshot, ReplayError,
    ReviewRecord, RunPatch, RunRecord,
};
pub use server::{router, BackendFactory, GateConfig, GateState, StreamEvent, ACTOR_HEADER};

/// Serves the gate API until the task is dropped.
pub async fn serve(state: std::sync::Arc<GateState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
