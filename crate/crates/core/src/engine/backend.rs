use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque reference to an element inside the backend's current document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeHandle(pub u64);

/// Something the page did while the interpreter was waiting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendEvent {
    /// The DOM changed. `dialog_added` is set when the change inserted an
    /// element with `role="dialog"`.
    Mutation {
        dialog_added: bool,
    },
    NetworkStarted,
    NetworkFinished,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("invalid selector `{0}`")]
    InvalidSelector(String),
    #[error("node {0:?} is no longer attached")]
    StaleHandle(NodeHandle),
    #[error("no option labelled `{0}`")]
    OptionNotFound(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// The browser surface the interpreter drives. Time is the backend's own
/// clock, which lets simulated sessions run on virtual time.
pub trait BrowserBackend {
    fn navigate(&mut self, url: &str) -> Result<(), BackendError>;
    fn current_url(&self) -> String;
    /// Elements matching `css` in document order, within `scope` when given.
    fn query(&mut self, css: &str, scope: Option<NodeHandle>) -> Result<Vec<NodeHandle>, BackendError>;
    fn click(&mut self, node: NodeHandle) -> Result<(), BackendError>;
    fn set_value(&mut self, node: NodeHandle, text: &str) -> Result<(), BackendError>;
    fn select_option(&mut self, node: NodeHandle, label: &str) -> Result<(), BackendError>;
    fn read_text(&mut self, node: NodeHandle) -> Result<String, BackendError>;
    fn read_attribute(&mut self, node: NodeHandle, name: &str) -> Result<Option<String>, BackendError>;
    fn snapshot_html(&mut self) -> Result<String, BackendError>;
    /// Milliseconds on the session clock.
    fn now_ms(&self) -> u64;
    /// Requests started but not yet finished.
    fn inflight_requests(&self) -> usize;
    /// Blocks until the next event or until the clock reaches `deadline_ms`,
    /// whichever is first. Returns `None` at the deadline.
    fn next_event(&mut self, deadline_ms: u64) -> Option<BackendEvent>;
    /// Lets `ms` elapse, processing page activity meanwhile.
    fn pause(&mut self, ms: u64);
}

macro_rules! forward_backend {
    ($ty:ty) => {
        impl<B: BrowserBackend + ?Sized> BrowserBackend for $ty {
            fn navigate(&mut self, url: &str) -> Result<(), BackendError> {
                (**self).navigate(url)
            }
            fn current_url(&self) -> String {
                (**self).current_url()
            }
            fn query(&mut self, css: &str, scope: Option<NodeHandle>) -> Result<Vec<NodeHandle>, BackendError> {
                (**self).query(css, scope)
            }
            fn click(&mut self, node: NodeHandle) -> Result<(), BackendError> {
                (**self).click(node)
            }
            fn set_value(&mut self, node: NodeHandle, text: &str) -> Result<(), BackendError> {
                (**self).set_value(node, text)
            }
            fn select_option(&mut self, node: NodeHandle, label: &str) -> Result<(), BackendError> {
                (**self).select_option(node, label)
            }
            fn read_text(&mut self, node: NodeHandle) -> Result<String, BackendError> {
                (**self).read_text(node)
            }
            fn read_attribute(&mut self, node: NodeHandle, name: &str) -> Result<Option<String>, BackendError> {
                (**self).read_attribute(node, name)
            }
            fn snapshot_html(&mut self) -> Result<String, BackendError> {
                (**self).snapshot_html()
            }
            fn now_ms(&self) -> u64 {
                (**self).now_ms()
            }
            fn inflight_requests(&self) -> usize {
                (**self).inflight_requests()
            }
            fn next_event(&mut self, deadline_ms: u64) -> Option<BackendEvent> {
                (**self).next_event(deadline_ms)
            }
            fn pause(&mut self, ms: u64) {
                (**self).pause(ms)
            }
        }
    };
}

forward_backend!(Box<B>);
forward_backend!(&mut B);
