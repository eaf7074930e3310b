use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use agentc_core::engine::{BackendError, BackendEvent, BrowserBackend, NodeHandle};
use ego_tree::NodeId;
use scraper::{ElementRef, Html, Selector};

use super::edit::{apply_edit, attr_name, set_text, Edit};
use super::manifest::{Effect, SiteManifest};
use super::scenario::{Perturbation, ScenarioScript};
use crate::dom::rebuild_element;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Timer {
    LoadDone { url: String, nav: u64 },
    ScriptEdit { script: String, edit: usize, doc: u32 },
    PerturbEdit { index: usize, doc: Option<u32> },
}

/// In-process browser over a [`SiteManifest`], on a virtual clock.
///
/// Navigations finish after the page's latency; mutation scripts and
/// scenario perturbations fire on the session clock. Nothing depends on wall
/// time, so a session is a pure function of its inputs and the calls made.
#[derive(Debug)]
pub struct SimBackend {
    manifest: Arc<SiteManifest>,
    perturbations: Vec<Perturbation>,
    spikes_left: Vec<u32>,
    clock: u64,
    url: String,
    doc: Html,
    doc_gen: u32,
    nav_seq: u64,
    handles: Vec<NodeId>,
    handle_index: HashMap<NodeId, u32>,
    inflight: usize,
    ready: VecDeque<BackendEvent>,
    timers: BinaryHeap<Reverse<(u64, u64, Timer)>>,
    timer_seq: u64,
    log: Vec<String>,
}

impl SimBackend {
    pub fn new(manifest: Arc<SiteManifest>) -> Self {
        Self::with_scenario(manifest, None)
    }

    pub fn with_scenario(manifest: Arc<SiteManifest>, scenario: Option<&ScenarioScript>) -> Self {
        let perturbations = scenario.map(|s| s.perturbations.clone()).unwrap_or_default();
        let spikes_left = perturbations
            .iter()
            .map(|p| match p {
                Perturbation::LatencySpike { occurrences, .. } => *occurrences,
                _ => 0,
            })
            .collect();
        let mut sim = SimBackend {
            manifest,
            perturbations,
            spikes_left,
            clock: 0,
            url: "about:blank".into(),
            doc: Html::parse_document(""),
            doc_gen: 0,
            nav_seq: 0,
            handles: Vec::new(),
            handle_index: HashMap::new(),
            inflight: 0,
            ready: VecDeque::new(),
            timers: BinaryHeap::new(),
            timer_seq: 0,
            log: Vec::new(),
        };
        for index in 0..sim.perturbations.len() {
            if let Perturbation::Edit {
                on_url: None,
                at_ms: Some(at),
                ..
            } = sim.perturbations[index]
            {
                sim.schedule(at, Timer::PerturbEdit { index, doc: None });
            }
        }
        sim
    }

    /// Everything that happened, in order, with session timestamps.
    pub fn event_log(&self) -> &[String] {
        &self.log
    }

    pub fn document(&self) -> &Html {
        &self.doc
    }

    fn note(&mut self, what: impl AsRef<str>) {
        self.log.push(format!("{:>8} {}", self.clock, what.as_ref()));
    }

    fn schedule(&mut self, at: u64, timer: Timer) {
        self.timer_seq += 1;
        self.timers.push(Reverse((at, self.timer_seq, timer)));
    }

    fn begin_load(&mut self, url: String) -> Result<(), BackendError> {
        if self.manifest.page(&url).is_none() {
            return Err(BackendError::Navigation(format!("no page at {url}")));
        }
        let mut latency = self.manifest.latency(&url);
        for (i, p) in self.perturbations.iter().enumerate() {
            if let Perturbation::LatencySpike { url: u, extra_ms, .. } = p {
                if *u == url && self.spikes_left[i] > 0 {
                    self.spikes_left[i] -= 1;
                    latency += extra_ms;
                }
            }
        }
        self.nav_seq += 1;
        self.inflight += 1;
        self.url = url.clone();
        self.note(format!("request {url} ({latency} ms)"));
        self.ready.push_back(BackendEvent::NetworkStarted);
        let at = self.clock + latency;
        self.schedule(at, Timer::LoadDone { url, nav: self.nav_seq });
        Ok(())
    }

    fn fire(&mut self, timer: Timer) {
        match timer {
            Timer::LoadDone { url, nav } => {
                self.inflight -= 1;
                if nav == self.nav_seq {
                    self.load_document(&url);
                } else {
                    self.note(format!("abandoned {url}"));
                }
                self.ready.push_back(BackendEvent::NetworkFinished);
                let dialog = self.has_dialog();
                self.ready.push_back(BackendEvent::Mutation { dialog_added: dialog });
            }
            Timer::ScriptEdit { script, edit, doc } => {
                if doc != self.doc_gen {
                    return;
                }
                let Some(s) = self.manifest.mutation_scripts.get(&script) else {
                    return;
                };
                let e = s.edits[edit].edit.clone();
                let repeat = s.repeat_every_ms;
                self.run_edit(&e, &format!("script {script}[{edit}]"));
                if let Some(every) = repeat {
                    let at = self.clock + every;
                    self.schedule(at, Timer::ScriptEdit { script, edit, doc });
                }
            }
            Timer::PerturbEdit { index, doc } => {
                if doc.is_some_and(|d| d != self.doc_gen) {
                    return;
                }
                if let Perturbation::Edit { edits, .. } = &self.perturbations[index] {
                    for e in edits.clone() {
                        self.run_edit(&e, &format!("perturbation {index}"));
                    }
                }
            }
        }
    }

    fn load_document(&mut self, url: &str) {
        let html = self.manifest.page(url).unwrap_or_default().to_string();
        self.doc = Html::parse_document(&html);
        self.doc_gen += 1;
        self.handles.clear();
        self.handle_index.clear();
        self.note(format!("loaded {url}"));
        // Perturbations bound to this page, then its own load scripts.
        for index in 0..self.perturbations.len() {
            if let Perturbation::Edit {
                on_url: Some(u),
                at_ms,
                edits,
            } = &self.perturbations[index]
            {
                if u != url {
                    continue;
                }
                match at_ms {
                    None => {
                        for e in edits.clone() {
                            let label = format!("perturbation {index}");
                            apply_edit(&mut self.doc, &e).ok();
                            self.note(label);
                        }
                    }
                    Some(delay) => {
                        let at = self.clock + delay;
                        self.schedule(
                            at,
                            Timer::PerturbEdit {
                                index,
                                doc: Some(self.doc_gen),
                            },
                        );
                    }
                }
            }
        }
        let manifest = Arc::clone(&self.manifest);
        for (name, script) in &manifest.mutation_scripts {
            if script.on_load.iter().any(|u| u == url) {
                self.start_script(name);
            }
        }
    }

    fn start_script(&mut self, name: &str) {
        let Some(script) = self.manifest.mutation_scripts.get(name) else {
            return;
        };
        let starts: Vec<(usize, u64)> = script.edits.iter().enumerate().map(|(i, e)| (i, e.at_ms)).collect();
        for (edit, offset) in starts {
            let at = self.clock + offset;
            self.schedule(
                at,
                Timer::ScriptEdit {
                    script: name.to_string(),
                    edit,
                    doc: self.doc_gen,
                },
            );
        }
    }

    fn run_edit(&mut self, edit: &Edit, label: &str) {
        let effect = apply_edit(&mut self.doc, edit).unwrap_or_default();
        self.note(format!("{label}: {} node(s)", effect.matched));
        if effect.matched > 0 {
            self.ready.push_back(BackendEvent::Mutation {
                dialog_added: effect.dialog_added,
            });
        }
    }

    fn has_dialog(&self) -> bool {
        let sel = Selector::parse("[role=\"dialog\"]").expect("static selector");
        self.doc.select(&sel).next().is_some()
    }

    fn handle_for(&mut self, id: NodeId) -> NodeHandle {
        let index = *self.handle_index.entry(id).or_insert_with(|| {
            self.handles.push(id);
            (self.handles.len() - 1) as u32
        });
        NodeHandle(((self.doc_gen as u64) << 32) | index as u64)
    }

    fn node(&self, handle: NodeHandle) -> Result<NodeId, BackendError> {
        let generation = (handle.0 >> 32) as u32;
        let index = (handle.0 & 0xffff_ffff) as usize;
        if generation != self.doc_gen {
            return Err(BackendError::StaleHandle(handle));
        }
        let id = *self.handles.get(index).ok_or(BackendError::StaleHandle(handle))?;
        let node = self.doc.tree.get(id).ok_or(BackendError::StaleHandle(handle))?;
        // Detached subtrees no longer reach the document root.
        let attached = node
            .ancestors()
            .last()
            .is_some_and(|root| root.id() == self.doc.tree.root().id());
        if !attached {
            return Err(BackendError::StaleHandle(handle));
        }
        Ok(id)
    }

    fn element(&self, id: NodeId) -> ElementRef<'_> {
        ElementRef::wrap(self.doc.tree.get(id).expect("checked id")).expect("handles point at elements")
    }

    fn resolve_url(&self, href: &str) -> String {
        match url::Url::parse(&self.url).and_then(|base| base.join(href)) {
            Ok(u) => u.to_string(),
            Err(_) => href.to_string(),
        }
    }

    fn mutate(&mut self) {
        self.ready.push_back(BackendEvent::Mutation { dialog_added: false });
    }

    /// The submitted values of the form enclosing `id`.
    fn form_values(&self, id: NodeId) -> BTreeMap<String, String> {
        let el = self.element(id);
        let form = el
            .ancestors()
            .filter_map(ElementRef::wrap)
            .find(|e| e.value().name() == "form")
            .unwrap_or_else(|| self.doc.root_element());
        let named = Selector::parse("[name], [data-name]").expect("static selector");
        let mut values = BTreeMap::new();
        for field in form.select(&named) {
            let v = field.value();
            let name = v.attr("name").or(v.attr("data-name")).unwrap_or_default().to_string();
            let value = match v.name() {
                "input" => v.attr("value").unwrap_or_default().to_string(),
                "select" => {
                    let opt = Selector::parse("option[selected]").expect("static selector");
                    field
                        .select(&opt)
                        .next()
                        .map(|o| o.attr("value").map(str::to_string).unwrap_or_else(|| text_of(o)))
                        .unwrap_or_default()
                }
                _ => text_of(field),
            };
            values.insert(name, value);
        }
        values
    }

    fn submit(&mut self, id: NodeId) -> Result<(), BackendError> {
        let Some(form) = self.manifest.forms.get(&self.url).cloned() else {
            return Err(BackendError::Protocol(format!("no form model for {}", self.url)));
        };
        let values = self.form_values(id);
        let ok = form.fields.iter().all(|f| {
            let v = values.get(&f.name).map(|s| s.trim()).unwrap_or("");
            if v.is_empty() {
                return !f.required;
            }
            f.accepted.as_ref().is_none_or(|a| a.iter().any(|x| x == v))
        });
        self.note(format!(
            "submit {} -> {}",
            self.url,
            if ok { "accepted" } else { "rejected" }
        ));
        self.begin_load(if ok { form.success_url } else { form.error_url })
    }
}

fn text_of(el: ElementRef<'_>) -> String {
    el.text().collect()
}

impl BrowserBackend for SimBackend {
    fn navigate(&mut self, url: &str) -> Result<(), BackendError> {
        let target = self.resolve_url(url);
        self.begin_load(target)
    }

    fn current_url(&self) -> String {
        self.url.clone()
    }

    fn query(&mut self, css: &str, scope: Option<NodeHandle>) -> Result<Vec<NodeHandle>, BackendError> {
        let sel = Selector::parse(css).map_err(|_| BackendError::InvalidSelector(css.to_string()))?;
        let ids: Vec<NodeId> = match scope {
            Some(h) => {
                let id = self.node(h)?;
                self.element(id).select(&sel).map(|e| e.id()).collect()
            }
            None => self.doc.select(&sel).map(|e| e.id()).collect(),
        };
        Ok(ids.into_iter().map(|id| self.handle_for(id)).collect())
    }

    fn click(&mut self, node: NodeHandle) -> Result<(), BackendError> {
        let id = self.node(node)?;
        let el = self.element(id);
        let transition = self
            .manifest
            .transitions
            .iter()
            .find(|t| t.url == self.url && Selector::parse(&t.selector).is_ok_and(|s| s.matches(&el)))
            .cloned();
        let link = el
            .ancestors()
            .filter_map(ElementRef::wrap)
            .chain(std::iter::once(el))
            .find_map(|e| (e.value().name() == "a").then(|| e.value().attr("href")).flatten())
            .map(str::to_string);
        let tag = el.value().name().to_string();
        self.note(format!("click <{tag}>"));
        if let Some(t) = transition {
            return match t.effect {
                Effect::Navigate { to } => self.begin_load(to),
                Effect::Mutation { script } => {
                    self.start_script(&script);
                    Ok(())
                }
                Effect::Submit => self.submit(id),
            };
        }
        if let Some(href) = link {
            let target = self.resolve_url(&href);
            return self.begin_load(target);
        }
        Ok(())
    }

    fn set_value(&mut self, node: NodeHandle, text: &str) -> Result<(), BackendError> {
        let id = self.node(node)?;
        let el = self.element(id).value();
        match el.name() {
            "input" => {
                let mut attrs: Vec<_> = el
                    .attrs
                    .iter()
                    .filter(|(n, _)| &*n.local != "value")
                    .map(|(n, v)| (n.clone(), v.to_string()))
                    .collect();
                attrs.push((attr_name("value"), text.to_string()));
                let rebuilt = rebuild_element(el, attrs);
                if let Some(mut n) = self.doc.tree.get_mut(id) {
                    *n.value() = scraper::Node::Element(rebuilt);
                }
            }
            "textarea" => set_text(&mut self.doc, id, text),
            _ if el.attr("contenteditable").is_some_and(|v| v != "false") => set_text(&mut self.doc, id, text),
            other => return Err(BackendError::Protocol(format!("<{other}> is not editable"))),
        }
        self.note(format!("type {} chars", text.chars().count()));
        self.mutate();
        Ok(())
    }

    fn select_option(&mut self, node: NodeHandle, label: &str) -> Result<(), BackendError> {
        let id = self.node(node)?;
        let opt = Selector::parse("option").expect("static selector");
        let options: Vec<(NodeId, bool)> = self
            .element(id)
            .select(&opt)
            .map(|o| (o.id(), agentc_core::engine::normalize_text(&text_of(o)) == label))
            .collect();
        if !options.iter().any(|(_, hit)| *hit) {
            return Err(BackendError::OptionNotFound(label.to_string()));
        }
        for (oid, hit) in options {
            let Some(mut n) = self.doc.tree.get_mut(oid) else {
                continue;
            };
            let scraper::Node::Element(el) = n.value() else {
                continue;
            };
            let mut attrs: Vec<_> = el
                .attrs
                .iter()
                .filter(|(n, _)| &*n.local != "selected")
                .map(|(n, v)| (n.clone(), v.to_string()))
                .collect();
            if hit {
                attrs.push((attr_name("selected"), String::new()));
            }
            *el = rebuild_element(el, attrs);
        }
        self.note(format!("select {label}"));
        self.mutate();
        Ok(())
    }

    fn read_text(&mut self, node: NodeHandle) -> Result<String, BackendError> {
        let id = self.node(node)?;
        Ok(text_of(self.element(id)))
    }

    fn read_attribute(&mut self, node: NodeHandle, name: &str) -> Result<Option<String>, BackendError> {
        let id = self.node(node)?;
        Ok(self.element(id).value().attr(name).map(str::to_string))
    }

    fn snapshot_html(&mut self) -> Result<String, BackendError> {
        Ok(self.doc.html())
    }

    fn now_ms(&self) -> u64 {
        self.clock
    }

    fn inflight_requests(&self) -> usize {
        self.inflight
    }

    fn next_event(&mut self, deadline_ms: u64) -> Option<BackendEvent> {
        loop {
            if let Some(e) = self.ready.pop_front() {
                return Some(e);
            }
            match self.timers.peek() {
                Some(Reverse((at, _, _))) if *at <= deadline_ms => {
                    let Reverse((at, _, timer)) = self.timers.pop().expect("peeked");
                    self.clock = self.clock.max(at);
                    self.fire(timer);
                }
                _ => {
                    self.clock = self.clock.max(deadline_ms);
                    return None;
                }
            }
        }
    }

    fn pause(&mut self, ms: u64) {
        let until = self.clock.saturating_add(ms);
        while self.next_event(until).is_some() {}
        self.clock = self.clock.max(until);
    }
}
