use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use agentc::cdp::{discover_page, CdpBackend};
use agentc::dom::{sanitize, SanitizerConfig};
use agentc::fixture::{ScenarioScript, SimBackend, SiteManifest};
use agentc::gateway::{
    builtin_price_table, load_price_table, lookup_price, Gateway, HttpTransport, ModelConfig, StubTransport, Transport,
};
use agentc::hitl::{self, BackendFactory, GateConfig, GateCore, GateState};
use agentc::replan::{heal, HealPolicy, Replanner};
use agentc_core::blueprint::{canonical_json, validate, Blueprint};
use agentc_core::cost::{breakeven, emit_report, CostGrid};
use agentc_core::engine::{BrowserBackend, Engine, HaltReport, RunPolicy};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "agentc",
    version,
    about = "Compile a web task once, replay it without inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Sim,
    Cdp,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Model id; its price comes from the price table.
    #[arg(long, default_value = "claude-sonnet-4.5")]
    model: String,
    /// Chat-completions endpoint for live calls.
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Answer from a recorded response file instead of the network.
    #[arg(long)]
    stub: Option<PathBuf>,
    /// Price table JSON; the built-in table otherwise.
    #[arg(long)]
    prices: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the skeleton of an HTML file or URL.
    Sanitize {
        input: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also print size statistics as JSON on stderr.
        #[arg(long)]
        stats: bool,
    },
    /// Compile a page and intent into a blueprint (stdout).
    Compile {
        #[arg(long)]
        url: String,
        #[arg(long)]
        intent: String,
        /// Read the page from a file instead of fetching the URL.
        #[arg(long)]
        page: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Check a blueprint file.
    Validate { blueprint: PathBuf },
    /// Execute a blueprint.
    Run {
        /// A blueprint file, or a blueprint id when `--gate-dir` is given.
        blueprint: String,
        #[arg(long, value_enum, default_value = "sim")]
        backend: BackendKind,
        /// Site manifest for the simulated backend.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Scenario layered over the manifest (implies its manifest).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// DevTools HTTP endpoint for the cdp backend.
        #[arg(long, default_value = "http://127.0.0.1:9222")]
        cdp_endpoint: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object of payload fields for `input` steps.
        #[arg(long)]
        payload: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gate data directory holding the review decision.
        #[arg(long)]
        gate_dir: Option<PathBuf>,
        /// Run without a review decision.
        #[arg(long)]
        force_local: bool,
        /// Heal halts with the configured model.
        #[arg(long)]
        heal: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Propose a selector patch for a halt report.
    Heal {
        blueprint: PathBuf,
        halt: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_attempts: u32,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Cost report CSV over a grid of execution counts.
    Bench {
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a fixture manifest over HTTP.
    Serve {
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Serve the review gate API.
    ServeGate {
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long)]
        data_dir: PathBuf,
        /// Run approved blueprints on this manifest (simulated backend).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Run on Chrome at this DevTools endpoint instead.
        #[arg(long)]
        cdp_endpoint: Option<String>,
    },
}

/// Domain failure (exit 1) versus bad input or environment (exit 2).
enum Failure {
    Domain(String),
    Usage(String),
}

type CliResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_out(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => emit(&format!("{text}\n")),
    }
}

/// Writes to stdout. A closed pipe (`agentc ... | head`) ends output quietly.
fn emit(text: &str) -> CliResult {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(usage(e)),
        _ => Ok(()),
    }
}

fn fetch(url: &str) -> Result<String, Failure> {
    ureq::get(url)
        .call()
        .map_err(usage)?
        .body_mut()
        .read_to_string()
        .map_err(usage)
}

fn load_blueprint(path: &Path) -> Result<Blueprint, Failure> {
    let text = read(path)?;
    validate(text.as_bytes()).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(|e| format!("  {e}")).collect();
        Failure::Domain(format!("{} is invalid:\n{}", path.display(), lines.join("\n")))
    })
}

fn gateway(args: &ModelArgs) -> Result<Gateway, Failure> {
    let table = match &args.prices {
        Some(p) => load_price_table(p).map_err(usage)?,
        None => builtin_price_table(),
    };
    let config = ModelConfig {
        endpoint_url: args.endpoint.clone(),
        model_id: args.model.clone(),
        price: lookup_price(&table, &args.model).map_err(usage)?,
        timeout_ms: 120_000,
        api_key_env_name: args.api_key_env.clone(),
        max_output_tokens: None,
    };
    let transport: Arc<dyn Transport> = match &args.stub {
        Some(p) => Arc::new(StubTransport::load(p).map_err(usage)?),
        None => Arc::new(HttpTransport),
    };
    Ok(Gateway::new(config, transport))
}

fn sim_world(
    manifest: Option<&Path>,
    scenario: Option<&Path>,
) -> Result<(Arc<SiteManifest>, Option<ScenarioScript>), Failure> {
    match (scenario, manifest) {
        (Some(s), _) => {
            let (script, site) = ScenarioScript::load(s).map_err(usage)?;
            Ok((Arc::new(site), Some(script)))
        }
        (None, Some(m)) => Ok((Arc::new(SiteManifest::load(m).map_err(usage)?), None)),
        (None, None) => Err(usage("the sim backend needs --manifest or --scenario")),
    }
}

fn cdp_backend(endpoint: &str) -> Result<CdpBackend, String> {
    let ws = discover_page(endpoint).map_err(|e| e.to_string())?;
    CdpBackend::connect(&ws)
        .map(|b| b.with_command_timeout(Duration::from_secs(30)))
        .map_err(|e| e.to_string())
}

fn cmd_sanitize(input: &str, config: Option<&Path>, stats: bool) -> CliResult {
    let cfg = match config {
        Some(p) => SanitizerConfig::load(p).map_err(usage)?,
        None => SanitizerConfig::default(),
    };
    let html = if input.starts_with("http://") || input.starts_with("https://") {
        fetch(input)?
    } else {
        read(Path::new(input))?
    };
    let skeleton = sanitize(&html, &cfg);
    emit(&format!("{}\n", skeleton.html))?;
    if stats {
        eprintln!("{}", serde_json::to_string(&skeleton.stats).map_err(usage)?);
    }
    Ok(())
}

fn cmd_compile(url: &str, intent: &str, page: Option<&Path>, model: &ModelArgs) -> CliResult {
    let html = match page {
        Some(p) => read(p)?,
        None => fetch(url)?,
    };
    let skeleton = sanitize(&html, &SanitizerConfig::default());
    let outcome = gateway(model)?
        .compile(&skeleton, url, intent)
        .map_err(|e| Failure::Domain(e.to_string()))?;
    let summary = serde_json::json!({
        "token_usage": outcome.token_usage,
        "cost_usd": outcome.cost_usd.to_string(),
        "latency_ms": outcome.latency_ms,
        "skeleton_tokens": skeleton.stats.est_tokens_out,
    });
    eprintln!("{summary}");
    match (outcome.blueprint(), outcome.failure()) {
        (Some(bp), _) => {
            emit(&format!("{}\n", serde_json::to_string_pretty(bp).map_err(usage)?))?;
            Ok(())
        }
        (None, Some(f)) => {
            emit(&format!("{}\n", serde_json::to_string_pretty(f).map_err(usage)?))?;
            Err(Failure::Domain(format!(
                "compilation failed: {} ({})",
                f.class.as_str(),
                f.detail
            )))
        }
        (None, None) => Err(Failure::Domain("compilation produced nothing".into())),
    }
}

/// Resolves the blueprint to run and enforces the review decision.
fn approved_blueprint(spec: &str, gate_dir: Option<&Path>, force_local: bool) -> Result<Blueprint, Failure> {
    let Some(dir) = gate_dir else {
        if force_local {
            eprintln!("warning: running without review (--force-local)");
            return load_blueprint(Path::new(spec));
        }
        return Err(Failure::Domain(
            "refusing to run an unreviewed blueprint; pass --gate-dir or --force-local".into(),
        ));
    };
    let core = GateCore::open(dir, Arc::new(agentc::gateway::SystemClock)).map_err(usage)?;
    let review = match core.review(spec) {
        Some(r) => r.clone(),
        None => {
            let bp = load_blueprint(Path::new(spec))?;
            let digest = canonical_json(&bp);
            core.reviews()
                .find(|r| canonical_json(&r.blueprint) == digest)
                .cloned()
                .ok_or_else(|| Failure::Domain(format!("{spec} was never submitted for review")))?
        }
    };
    if !review.state.is_executable() {
        return Err(Failure::Domain(format!(
            "{} is {}, not approved",
            review.blueprint_id,
            review.state.as_str()
        )));
    }
    Ok(review.blueprint)
}

struct RunArgs<'a> {
    seed: u64,
    payload: BTreeMap<String, String>,
    out: Option<&'a Path>,
    heal: Option<Gateway>,
}

fn execute<B: BrowserBackend + ?Sized>(bp: &Blueprint, backend: &mut B, args: RunArgs<'_>) -> CliResult {
    let policy = RunPolicy {
        rng_seed: args.seed,
        ..RunPolicy::default()
    };
    let sanitizer = SanitizerConfig::default();
    let outcome = Engine::new(policy.clone())
        .with_sanitizer(&sanitizer)
        .with_payload(args.payload.clone())
        .run(bp, backend);
    let (report, completed) = match (&outcome.halt, &args.heal) {
        (Some(_), Some(gw)) => {
            let recovery = Replanner::new(gw)
                .with_payload(args.payload)
                .recover(bp, outcome, &policy, backend)
                .map_err(|e| Failure::Domain(e.to_string()))?;
            let done = recovery.outcome.is_completed();
            (serde_json::to_string_pretty(&recovery), done)
        }
        _ => {
            let done = outcome.is_completed();
            (serde_json::to_string_pretty(&outcome), done)
        }
    };
    write_out(args.out, &report.map_err(usage)?)?;
    if completed {
        Ok(())
    } else {
        Err(Failure::Domain("run halted".into()))
    }
}

fn cmd_heal(bp: &Path, halt: &Path, max_attempts: u32, model: &ModelArgs) -> CliResult {
    let blueprint = load_blueprint(bp)?;
    let report: HaltReport = serde_json::from_str(&read(halt)?).map_err(usage)?;
    let policy = HealPolicy {
        max_attempts,
        ..HealPolicy::default()
    };
    let result = heal(
        &blueprint,
        &report,
        &gateway(model)?,
        &policy,
        &SanitizerConfig::default(),
    )
    .map_err(|e| Failure::Domain(e.to_string()))?;
    emit(&format!("{}\n", serde_json::to_string_pretty(&result).map_err(usage)?))?;
    match result.resolution {
        agentc::replan::Resolution::EscalatedToHitl => Err(Failure::Domain("escalated to human review".into())),
        _ => Ok(()),
    }
}

fn cmd_bench(grid: Option<&Path>, out: Option<&Path>) -> CliResult {
    let grid: CostGrid = match grid {
        Some(p) => serde_json::from_str(&read(p)?).map_err(usage)?,
        None => CostGrid::applied_benchmark(),
    };
    let csv = emit_report(&grid.rows()).map_err(|e| Failure::Domain(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => emit(&csv)?,
    }
    match breakeven(&grid.base) {
        Ok(b) => {
            let ratio = b
                .ratio_at_m
                .map(|r| r.normalize().to_string())
                .unwrap_or_else(|| "n/a".into());
            eprintln!("breakeven_M={} ratio_at_M={}x", b.min_executions, ratio);
        }
        Err(e) => eprintln!("breakeven: {e}"),
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(usage)
}

fn cmd_serve(manifest: &Path, port: u16) -> CliResult {
    let site = SiteManifest::load(manifest).map_err(usage)?;
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(usage)?;
        eprintln!("fixture server on http://{}", listener.local_addr().map_err(usage)?);
        agentc::fixture::serve(&site, listener).await.map_err(usage)
    })
}

fn cmd_serve_gate(
    port: u16,
    data_dir: &Path,
    manifest: Option<&Path>,
    scenario: Option<&Path>,
    cdp_endpoint: Option<String>,
) -> CliResult {
    let backend: BackendFactory = match cdp_endpoint {
        Some(endpoint) => Arc::new(move || cdp_backend(&endpoint).map(|b| Box::new(b) as Box<dyn BrowserBackend>)),
        None => {
            let (site, script) = sim_world(manifest, scenario)?;
            Arc::new(move || {
                Ok(Box::new(SimBackend::with_scenario(site.clone(), script.as_ref())) as Box<dyn BrowserBackend>)
            })
        }
    };
    let core = GateCore::open(data_dir, Arc::new(agentc::gateway::SystemClock)).map_err(usage)?;
    let state = GateState::new(
        core,
        GateConfig {
            run_policy: RunPolicy::default(),
            sanitizer: SanitizerConfig::default(),
            backend,
        },
    );
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(usage)?;
        eprintln!("gate on http://{}", listener.local_addr().map_err(usage)?);
        hitl::serve(state, listener).await.map_err(usage)
    })
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Sanitize { input, config, stats } => cmd_sanitize(&input, config.as_deref(), stats),
        Command::Compile {
            url,
            intent,
            page,
            model,
        } => cmd_compile(&url, &intent, page.as_deref(), &model),
        Command::Validate { blueprint } => {
            let bp = load_blueprint(&blueprint)?;
            emit(&format!("ok: {} steps\n", bp.steps.len()))?;
            Ok(())
        }
        Command::Run {
            blueprint,
            backend,
            manifest,
            scenario,
            cdp_endpoint,
            seed,
            payload,
            out,
            gate_dir,
            force_local,
            heal,
            model,
        } => {
            let bp = approved_blueprint(&blueprint, gate_dir.as_deref(), force_local)?;
            let payload = match payload {
                Some(p) => serde_json::from_str(&read(&p)?).map_err(usage)?,
                None => BTreeMap::new(),
            };
            let args = RunArgs {
                seed,
                payload,
                out: out.as_deref(),
                heal: if heal { Some(gateway(&model)?) } else { None },
            };
            match backend {
                BackendKind::Sim => {
                    let (site, script) = sim_world(manifest.as_deref(), scenario.as_deref())?;
                    let mut sim = SimBackend::with_scenario(site, script.as_ref());
                    execute(&bp, &mut sim, args)
                }
                BackendKind::Cdp => {
                    let mut cdp = cdp_backend(&cdp_endpoint).map_err(Failure::Usage)?;
                    execute(&bp, &mut cdp, args)
                }
            }
        }
        Command::Heal {
            blueprint,
            halt,
            max_attempts,
            model,
        } => cmd_heal(&blueprint, &halt, max_attempts, &model),
        Command::Bench { grid, out } => cmd_bench(grid.as_deref(), out.as_deref()),
        Command::Serve { manifest, port } => cmd_serve(&manifest, port),
        Command::ServeGate {
            port,
            data_dir,
            manifest,
            scenario,
            cdp_endpoint,
        } => cmd_serve_gate(port, &data_dir, manifest.as_deref(), scenario.as_deref(), cdp_endpoint),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
