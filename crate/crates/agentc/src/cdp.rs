//! A real-browser backend speaking the Chrome DevTools Protocol.
//!
//! Element handles are indices into a registry kept by a small helper
//! script in the page; the upper 32 bits carry a document generation so a
//! handle from a previous page reads as stale. DOM mutations reach the
//! client through a `MutationObserver` wired to a runtime binding.

use std::collections::{BTreeSet, VecDeque};
use std::io;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use agentc_core::engine::{BackendError, BackendEvent, BrowserBackend, NodeHandle};
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

const BINDING: &str = "__agentcMutation";

const HELPER: &str = r#"(() => {
  if (window.__agentc) return true;
  const reg = [], index = new Map();
  const norm = s => s.split(/\s+/).filter(Boolean).join(' ');
  window.__agentc = {
    q(css, scope) {
      const root = scope === null ? document : this.el(scope);
      return Array.from(root.querySelectorAll(css)).map(e => {
        let i = index.get(e);
        if (i === undefined) { i = reg.length; reg.push(e); index.set(e, i); }
        return i;
      });
    },
    el(i) {
      const e = reg[i];
      if (!e || !e.isConnected) throw new Error('stale handle ' + i);
      return e;
    },
    norm,
  };
  const isDialog = n => n.nodeType === 1 &&
    (n.getAttribute('role') === 'dialog' || !!n.querySelector('[role="dialog"]'));
  new MutationObserver(ms => {
    const dialog = ms.some(m => Array.from(m.addedNodes).some(isDialog) ||
      (m.type === 'attributes' && m.attributeName === 'role' && isDialog(m.target)));
    try { __agentcMutation(dialog ? '1' : '0'); } catch (_) {}
  }).observe(document, { subtree: true, childList: true, attributes: true, characterData: true });
  return true;
})()"#;

#[derive(Debug, Error)]
pub enum CdpError {
    #[error("bad DevTools URL `{0}`")]
    Url(String),
    #[error("connection failed: {0}")]
    Io(#[from] io::Error),
    #[error("WebSocket handshake failed: {0}")]
    Handshake(String),
    #[error("target discovery failed: {0}")]
    Discovery(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Finds the WebSocket URL of the first page target behind a DevTools HTTP
/// endpoint such as `http://127.0.0.1:9222`.
pub fn discover_page(http_endpoint: &str) -> Result<String, CdpError> {
    let list_url = format!("{}/json/list", http_endpoint.trim_end_matches('/'));
    let targets: Value = ureq::get(&list_url)
        .call()
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| CdpError::Discovery(e.to_string()))?;
    targets
        .as_array()
        .into_iter()
        .flatten()
        .find(|t| t["type"] == "page")
        .and_then(|t| t["webSocketDebuggerUrl"].as_str())
        .map(str::to_string)
        .ok_or_else(|| CdpError::Discovery("no page target".into()))
}

pub struct CdpBackend {
    ws: WebSocket<TcpStream>,
    next_id: u64,
    events: VecDeque<BackendEvent>,
    inflight: BTreeSet<String>,
    started: Instant,
    url: String,
    generation: u32,
    command_timeout: Duration,
}

impl std::fmt::Debug for CdpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CdpBackend")
            .field("url", &self.url)
            .field("generation", &self.generation)
            .field("inflight", &self.inflight.len())
            .finish_non_exhaustive()
    }
}

fn proto(e: impl std::fmt::Display) -> BackendError {
    BackendError::Protocol(e.to_string())
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

impl CdpBackend {
    /// Attaches to a page target by its `ws://` debugger URL.
    pub fn connect(ws_url: &str) -> Result<Self, CdpError> {
        let parsed = url::Url::parse(ws_url).map_err(|_| CdpError::Url(ws_url.into()))?;
        if parsed.scheme() != "ws" {
            return Err(CdpError::Url(ws_url.into()));
        }
        let host = parsed.host_str().ok_or_else(|| CdpError::Url(ws_url.into()))?;
        let port = parsed.port_or_known_default().unwrap_or(80);
        let stream = TcpStream::connect((host, port))?;
        stream.set_nodelay(true)?;
        let (ws, _) = tungstenite::client(ws_url, stream).map_err(|e| CdpError::Handshake(e.to_string()))?;
        let mut backend = CdpBackend {
            ws,
            next_id: 0,
            events: VecDeque::new(),
            inflight: BTreeSet::new(),
            started: Instant::now(),
            url: String::new(),
            generation: 0,
            command_timeout: Duration::from_secs(30),
        };
        backend.call("Page.enable", json!({}))?;
        backend.call("Network.enable", json!({}))?;
        backend.call("Runtime.enable", json!({}))?;
        backend.call("Runtime.addBinding", json!({ "name": BINDING }))?;
        backend.call("Page.addScriptToEvaluateOnNewDocument", json!({ "source": HELPER }))?;
        backend.evaluate(HELPER)?;
        backend.events.clear();
        Ok(backend)
    }

    pub fn with_command_timeout(mut self, timeout: Duration) -> Self {
        self.command_timeout = timeout;
        self
    }

    fn send(&mut self, method: &str, params: Value) -> Result<u64, BackendError> {
        self.next_id += 1;
        let msg = json!({ "id": self.next_id, "method": method, "params": params });
        self.ws.send(Message::text(msg.to_string())).map_err(proto)?;
        Ok(self.next_id)
    }

    /// Reads one frame, waiting at most `wait`. `Ok(None)` on timeout.
    fn read(&mut self, wait: Duration) -> Result<Option<Value>, BackendError> {
        let wait = wait.max(Duration::from_millis(1));
        self.ws.get_ref().set_read_timeout(Some(wait)).map_err(proto)?;
        match self.ws.read() {
            Ok(Message::Text(t)) => serde_json::from_str(t.as_str()).map(Some).map_err(proto),
            Ok(_) => Ok(None),
            Err(e) if is_timeout(&e) => Ok(None),
            Err(e) => Err(proto(e)),
        }
    }

    /// Sends a command and waits for its reply, queueing events that
    /// arrive meanwhile.
    fn call(&mut self, method: &str, params: Value) -> Result<Value, BackendError> {
        let id = self.send(method, params)?;
        let deadline = Instant::now() + self.command_timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(proto(format!("{method}: no reply")));
            }
            let Some(msg) = self.read(left)? else { continue };
            if msg.get("id").and_then(Value::as_u64) == Some(id) {
                if let Some(err) = msg.get("error") {
                    return Err(proto(format!("{method}: {err}")));
                }
                return Ok(msg.get("result").cloned().unwrap_or(Value::Null));
            }
            self.absorb(&msg);
        }
    }

    fn absorb(&mut self, msg: &Value) {
        let params = &msg["params"];
        match msg.get("method").and_then(Value::as_str) {
            Some("Network.requestWillBeSent") => {
                if let Some(id) = params["requestId"].as_str() {
                    self.inflight.insert(id.to_string());
                    self.events.push_back(BackendEvent::NetworkStarted);
                }
            }
            Some("Network.loadingFinished" | "Network.loadingFailed") => {
                if let Some(id) = params["requestId"].as_str() {
                    if self.inflight.remove(id) {
                        self.events.push_back(BackendEvent::NetworkFinished);
                    }
                }
            }
            Some("Runtime.bindingCalled") if params["name"] == BINDING => {
                self.events.push_back(BackendEvent::Mutation {
                    dialog_added: params["payload"] == "1",
                });
            }
            Some("Page.frameNavigated") if params["frame"].get("parentId").is_none() => {
                if let Some(url) = params["frame"]["url"].as_str() {
                    self.url = url.to_string();
                }
                self.generation = self.generation.wrapping_add(1);
            }
            _ => {}
        }
    }

    fn evaluate(&mut self, expression: &str) -> Result<Value, BackendError> {
        let result = self.call(
            "Runtime.evaluate",
            json!({ "expression": expression, "returnByValue": true }),
        )?;
        if let Some(details) = result.get("exceptionDetails") {
            let text = details
                .pointer("/exception/description")
                .and_then(Value::as_str)
                .or_else(|| details["text"].as_str())
                .unwrap_or("script error");
            return Err(proto(text));
        }
        Ok(result.pointer("/result/value").cloned().unwrap_or(Value::Null))
    }

    fn index(&self, handle: NodeHandle) -> Result<u32, BackendError> {
        if (handle.0 >> 32) as u32 != self.generation {
            return Err(BackendError::StaleHandle(handle));
        }
        Ok(handle.0 as u32)
    }

    /// Evaluates `body` with `e` bound to the handle's element.
    fn on_element(&mut self, handle: NodeHandle, body: &str) -> Result<Value, BackendError> {
        let i = self.index(handle)?;
        self.evaluate(&format!("(() => {{ const e = __agentc.el({i}); {body} }})()"))
            .map_err(|err| match &err {
                BackendError::Protocol(m) if m.contains("stale handle") => BackendError::StaleHandle(handle),
                _ => err,
            })
    }
}

impl BrowserBackend for CdpBackend {
    fn navigate(&mut self, url: &str) -> Result<(), BackendError> {
        let result = self.call("Page.navigate", json!({ "url": url }))?;
        if let Some(err) = result.get("errorText").and_then(Value::as_str) {
            return Err(BackendError::Navigation(format!("{url}: {err}")));
        }
        Ok(())
    }

    fn current_url(&self) -> String {
        self.url.clone()
    }

    fn query(&mut self, css: &str, scope: Option<NodeHandle>) -> Result<Vec<NodeHandle>, BackendError> {
        let scope_arg = match scope {
            Some(h) => self.index(h)?.to_string(),
            None => "null".into(),
        };
        let css_arg = serde_json::to_string(css).map_err(proto)?;
        let value = self
            .evaluate(&format!("__agentc.q({css_arg}, {scope_arg})"))
            .map_err(|err| match &err {
                BackendError::Protocol(m) if m.contains("not a valid selector") => {
                    BackendError::InvalidSelector(css.to_string())
                }
                BackendError::Protocol(m) if m.contains("stale handle") => {
                    BackendError::StaleHandle(scope.unwrap_or(NodeHandle(0)))
                }
                _ => err,
            })?;
        let gen = u64::from(self.generation) << 32;
        value
            .as_array()
            .ok_or_else(|| proto("query returned no array"))?
            .iter()
            .map(|v| {
                v.as_u64()
                    .map(|i| NodeHandle(gen | i))
                    .ok_or_else(|| proto("bad handle"))
            })
            .collect()
    }

    fn click(&mut self, node: NodeHandle) -> Result<(), BackendError> {
        let geometry = self.on_element(
            node,
            "e.scrollIntoView({block: 'center'}); const r = e.getBoundingClientRect(); \
             return [r.x + r.width / 2, r.y + r.height / 2, r.width * r.height];",
        )?;
        let coords: Vec<f64> = geometry
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_f64)
            .collect();
        match coords.as_slice() {
            [x, y, area] if *area > 0.0 => {
                for kind in ["mouseMoved", "mousePressed", "mouseReleased"] {
                    self.call(
                        "Input.dispatchMouseEvent",
                        json!({ "type": kind, "x": x, "y": y, "button": "left", "clickCount": 1 }),
                    )?;
                }
            }
            _ => {
                self.on_element(node, "e.click(); return true;")?;
            }
        }
        Ok(())
    }

    fn set_value(&mut self, node: NodeHandle, text: &str) -> Result<(), BackendError> {
        let editable = self.on_element(
            node,
            "e.focus(); \
             if ('value' in e && e.tagName !== 'SELECT') { e.value = ''; return true; } \
             if (e.isContentEditable) { e.textContent = ''; return true; } \
             return false;",
        )?;
        if editable != Value::Bool(true) {
            return Err(proto("element is not editable"));
        }
        self.call("Input.insertText", json!({ "text": text }))?;
        self.on_element(
            node,
            "e.dispatchEvent(new Event('change', {bubbles: true})); return true;",
        )?;
        Ok(())
    }

    fn select_option(&mut self, node: NodeHandle, label: &str) -> Result<(), BackendError> {
        let label_arg = serde_json::to_string(label).map_err(proto)?;
        let found = self.on_element(
            node,
            &format!(
                "const o = Array.from(e.querySelectorAll('option')).find(o => __agentc.norm(o.textContent) === {label_arg}); \
                 if (!o) return false; o.selected = true; \
                 e.dispatchEvent(new Event('input', {{bubbles: true}})); \
                 e.dispatchEvent(new Event('change', {{bubbles: true}})); return true;"
            ),
        )?;
        if found == Value::Bool(true) {
            Ok(())
        } else {
            Err(BackendError::OptionNotFound(label.to_string()))
        }
    }

    fn read_text(&mut self, node: NodeHandle) -> Result<String, BackendError> {
        let v = self.on_element(node, "return e.textContent;")?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn read_attribute(&mut self, node: NodeHandle, name: &str) -> Result<Option<String>, BackendError> {
        let name_arg = serde_json::to_string(name).map_err(proto)?;
        let v = self.on_element(node, &format!("return e.getAttribute({name_arg});"))?;
        Ok(v.as_str().map(str::to_string))
    }

    fn snapshot_html(&mut self) -> Result<String, BackendError> {
        let v = self.evaluate("document.documentElement.outerHTML")?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn inflight_requests(&self) -> usize {
        self.inflight.len()
    }

    fn next_event(&mut self, deadline_ms: u64) -> Option<BackendEvent> {
        loop {
            if let Some(e) = self.events.pop_front() {
                return Some(e);
            }
            let now = self.now_ms();
            if now >= deadline_ms {
                return None;
            }
            match self.read(Duration::from_millis(deadline_ms - now)) {
                Ok(Some(msg)) => self.absorb(&msg),
                Ok(None) => {}
                // A dead socket cannot produce events; let the wait time out.
                Err(_) => {
                    std::thread::sleep(Duration::from_millis((deadline_ms - now).min(50)));
                }
            }
        }
    }

    fn pause(&mut self, ms: u64) {
        let deadline = self.now_ms() + ms;
        while self.next_event(deadline).is_some() {}
    }
}
