//! Deterministic test universe: site manifests, scripted scenarios, an
//! in-process browser on a virtual clock, and an HTTP server for the same pages.

mod edit;
mod manifest;
mod scenario;
mod serve;
mod sim;

pub use edit::{apply_edit, Edit, EditEffect};
pub use manifest::{
    Effect, FormField, FormModel, ManifestError, MutationScript, PageSource, SiteManifest, TimedEdit, Transition,
};
pub use scenario::{Perturbation, ScenarioScript};
pub use serve::{router, serve};
pub use sim::SimBackend;
