#![allow(dead_code)]

pub mod gate_ops;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use agentc::fixture::{ScenarioScript, SimBackend, SiteManifest};
use agentc::gateway::{
    builtin_price_table, lookup_price, FixedClock, Gateway, HttpReply, HttpRequest, ModelConfig, StubResponse,
    Transport, TransportError,
};
use agentc_core::blueprint::{validate, Blueprint, TokenUsage};

pub const SONNET: &str = "claude-sonnet-4.5";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn blueprint(rel: &str) -> Blueprint {
    validate(&std::fs::read(fixtures().join(rel)).unwrap()).unwrap()
}

pub fn site(rel: &str) -> Arc<SiteManifest> {
    Arc::new(SiteManifest::load(&fixtures().join(rel)).unwrap())
}

pub fn scenario(name: &str) -> (ScenarioScript, Arc<SiteManifest>) {
    let (s, m) = ScenarioScript::load(&fixtures().join(format!("task1/scenarios/{name}.json"))).unwrap();
    (s, Arc::new(m))
}

pub fn sim(manifest: &Arc<SiteManifest>, scenario: Option<&ScenarioScript>) -> SimBackend {
    SimBackend::with_scenario(manifest.clone(), scenario)
}

pub fn config(model: &str) -> ModelConfig {
    ModelConfig {
        endpoint_url: "https://models.test/v1/chat/completions".into(),
        model_id: model.into(),
        price: lookup_price(&builtin_price_table(), model).unwrap(),
        timeout_ms: 30_000,
        api_key_env_name: None,
        max_output_tokens: None,
    }
}

pub fn gateway(transport: Arc<dyn Transport>) -> Gateway {
    Gateway::new(config(SONNET), transport).with_clock(Arc::new(FixedClock("2026-03-02T09:00:00Z".into())))
}

/// Replies by calling `answer` on each request and keeps every request.
pub struct FnTransport<F> {
    pub answer: F,
    pub seen: Mutex<Vec<HttpRequest>>,
}

impl<F: Fn(&HttpRequest) -> StubResponse + Send + Sync> FnTransport<F> {
    pub fn new(answer: F) -> Self {
        FnTransport {
            answer,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl<F: Fn(&HttpRequest) -> StubResponse + Send + Sync> Transport for FnTransport<F> {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        self.seen.lock().unwrap().push(request.clone());
        let r = (self.answer)(request);
        Ok(HttpReply {
            status: r.status,
            body: r.envelope().to_string(),
            latency_ms: r.latency_ms,
        })
    }
}

pub fn user_text(request: &HttpRequest) -> String {
    request.body["messages"][1]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string()
}

/// A heal responder that reads which extracted field broke and proposes
/// the renamed selector a site-wide rename produced.
pub fn rename_healer(
    renames: &'static [(&'static str, &'static str)],
) -> impl Fn(&HttpRequest) -> StubResponse + Send + Sync {
    move |req| {
        let text = user_text(req);
        let field = text
            .split("extracted field `")
            .nth(1)
            .and_then(|rest| rest.split('`').next())
            .unwrap_or_default()
            .to_string();
        let new = renames
            .iter()
            .find(|(old, _)| *old == field)
            .map(|(_, new)| *new)
            .unwrap_or("unknown");
        let reply = serde_json::json!({"strategies": [
            {"tier": "data_attr", "expression": format!("[data-field=\"{new}\"]")},
            {"tier": "stable_class", "expression": format!(".profile-card__{new}")}
        ]});
        StubResponse::new(reply.to_string(), TokenUsage::new(2_400, 90))
    }
}

pub fn run_sim(
    bp: &Blueprint,
    backend: &mut SimBackend,
    seed: u64,
    payload: &[(&str, &str)],
) -> agentc_core::engine::RunOutcome {
    let sanitizer = agentc::dom::SanitizerConfig::default();
    let policy = agentc_core::engine::RunPolicy {
        rng_seed: seed,
        ..Default::default()
    };
    let mut engine = agentc_core::engine::Engine::new(policy)
        .with_sanitizer(&sanitizer)
        .with_payload(payload.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect());
    engine.run(bp, backend)
}

pub type Records = Vec<agentc_core::engine::Record>;

/// Task 1 records read straight off the fixture pages with plain CSS.
pub fn task1_oracle() -> Records {
    use scraper::{Html, Selector};
    let sel = |s: &str| Selector::parse(s).unwrap();
    let mut out = Vec::new();
    for page in ["page1.html", "page2.html"] {
        let doc = Html::parse_document(&std::fs::read_to_string(fixtures().join("task1").join(page)).unwrap());
        for card in doc.select(&sel(".profile-card")) {
            let mut record = agentc_core::engine::Record::new();
            for field in ["name", "url", "address", "website", "phone"] {
                let el = card.select(&sel(&format!("[data-field=\"{field}\"]"))).next().unwrap();
                let value = if field == "url" {
                    el.value().attr("href").unwrap().to_string()
                } else {
                    el.text()
                        .collect::<String>()
                        .split_whitespace()
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                record.insert(field.to_string(), value);
            }
            out.push(record);
        }
    }
    out
}

/// Field renames a redesign might apply across the whole listing site.
pub const RENAMES: [(&str, &str); 3] = [("phone", "telephone"), ("address", "location"), ("website", "homepage")];

/// A scenario applying the first `r` renames on every listing page.
pub fn renamed_site(r: usize) -> ScenarioScript {
    use agentc::fixture::{Edit, Perturbation};
    let edits: Vec<Edit> = RENAMES[..r]
        .iter()
        .flat_map(|(old, new)| {
            [
                Edit::SetAttr {
                    selector: format!("[data-field=\"{old}\"]"),
                    name: "data-field".into(),
                    value: new.to_string(),
                },
                Edit::ReplaceClass {
                    selector: format!(".profile-card__{old}"),
                    from: format!("profile-card__{old}"),
                    to: format!("profile-card__{new}"),
                },
            ]
        })
        .collect();
    let perturbations = [
        "https://listing.test/people?page=1",
        "https://listing.test/people?page=2",
    ]
    .into_iter()
    .filter(|_| r > 0)
    .map(|url| Perturbation::Edit {
        on_url: Some(url.into()),
        at_ms: None,
        edits: edits.clone(),
    })
    .collect();
    ScenarioScript {
        name: format!("{r} renames"),
        manifest: "../site.json".into(),
        perturbations,
        horizon_ms: 3_600_000,
    }
}

/// Compile requests get the canned Task 1 compile; heal requests go to `healer`.
pub struct SplitTransport<H> {
    pub compile: agentc::gateway::StubTransport,
    pub healer: H,
}

impl<H: Transport> Transport for SplitTransport<H> {
    fn send(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        if user_text(request).contains("extracted field `") {
            self.healer.send(request)
        } else {
            self.compile.send(request)
        }
    }
}

pub fn compile_stub() -> agentc::gateway::StubTransport {
    agentc::gateway::StubTransport::load(&fixtures().join("task1/compile-stub.json")).unwrap()
}

pub const LISTING: &str = "https://listing.test/people?page=1";

/// Compiles Task 1 once through `gateway`.
pub fn compile_task1(gateway: &Gateway) -> Blueprint {
    let html = std::fs::read_to_string(fixtures().join("task1/page1.html")).unwrap();
    let skeleton = agentc::dom::sanitize(&html, &agentc::dom::SanitizerConfig::default());
    gateway
        .compile(&skeleton, LISTING, "collect every profile")
        .unwrap()
        .blueprint()
        .expect("stub compiles")
        .clone()
}

pub struct HealMatrix {
    pub calls: usize,
    /// Runs whose final dataset equalled the clean oracle.
    pub matching_runs: usize,
    pub escalations: usize,
}

/// One compile, then `runs` runs against a site with `r` renamed fields,
/// healing on demand and keeping every accepted patch.
pub fn heal_matrix(r: usize, runs: usize, max_attempts: u32) -> HealMatrix {
    use agentc::gateway::CountingTransport;
    use agentc::replan::{HealPolicy, Replanner};

    let transport = Arc::new(CountingTransport::new(SplitTransport {
        compile: compile_stub(),
        healer: FnTransport::new(rename_healer(&RENAMES)),
    }));
    let gw = gateway(transport.clone());
    let mut bp = compile_task1(&gw);
    let script = renamed_site(r);
    let manifest = site("task1/site.json");
    let oracle = task1_oracle();
    let policy = HealPolicy {
        max_attempts,
        ..Default::default()
    };
    let mut matching_runs = 0;
    let mut escalations = 0;
    for run in 0..runs {
        let mut backend = sim(&manifest, Some(&script));
        let mut out = run_sim(&bp, &mut backend, run as u64, &[]);
        if out.halt.is_some() {
            let recovery = Replanner::new(&gw)
                .with_policy(policy)
                .recover(
                    &bp,
                    out,
                    &agentc_core::engine::RunPolicy {
                        rng_seed: run as u64,
                        ..Default::default()
                    },
                    &mut backend,
                )
                .unwrap();
            if recovery.resolution == agentc::replan::Resolution::EscalatedToHitl {
                escalations += 1;
            }
            bp = recovery.blueprint;
            out = recovery.outcome;
        }
        if out.is_completed() && out.datasets.get("profiles") == Some(&oracle) {
            matching_runs += 1;
        }
    }
    HealMatrix {
        calls: transport.calls(),
        matching_runs,
        escalations,
    }
}

/// Every HTML page under the fixtures directory, sorted by path.
pub fn corpus() -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut dirs = vec![fixtures()];
    while let Some(dir) = dirs.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                dirs.push(path);
            } else if path.extension().is_some_and(|e| e == "html") {
                let text = std::fs::read_to_string(&path).unwrap();
                out.push((path, text));
            }
        }
    }
    out.sort();
    assert!(out.len() >= 9, "corpus went missing: {}", out.len());
    out
}
