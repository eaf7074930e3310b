//! Acceptance criteria, one line each. Exits non-zero when any fails.

#[path = "../../core/tests/support/arb.rs"]
mod arb;
mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use agentc::dom::{sanitize, SanitizerConfig};
use agentc::gateway::{builtin_price_table, lookup_price, CountingTransport, StubResponse, StubTransport};
use agentc::hitl::GateCore;
use agentc::replan::Replanner;
use agentc_core::blueprint::{apply_patch, serialize, structural_fingerprint, validate, SelectorPatch, TokenUsage};
use agentc_core::cost::{
    account_cost, breakeven, cost_continuous, cost_continuous_cached, cost_oneshot, emit_report, CostGrid,
};
use agentc_core::engine::{FailureMode, RunPolicy};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rust_decimal::Decimal;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dsm_compression() -> Verdict {
    let cfg = SanitizerConfig::default();
    let html = std::fs::read_to_string(fixtures().join("dsm/large.html")).unwrap();
    let started = Instant::now();
    let large = sanitize(&html, &cfg);
    let large_time = started.elapsed();
    let tokens_in = html.chars().count().div_ceil(4);
    let tokens_out = large.html.chars().count().div_ceil(4);
    let ratio = 1.0 - tokens_out as f64 / tokens_in as f64;

    let mut slowest = Duration::ZERO;
    let mut ratios = Vec::new();
    for (_, page) in corpus() {
        let started = Instant::now();
        ratios.push(sanitize(&page, &cfg).stats.reduction_ratio);
        slowest = slowest.max(started.elapsed());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check(
        tokens_in >= 20_000 && ratio >= 0.85 && mean >= 0.70 && large_time < Duration::from_secs(1) && slowest < Duration::from_secs(1),
        format!(
            "large page {tokens_in} tokens, reduction {ratio:.4} (>= 0.85) in {large_time:?}; corpus mean {mean:.4} (>= 0.70) over {} pages, slowest {slowest:?}",
            ratios.len()
        ),
    )
}

fn cost_benchmark() -> Verdict {
    let started = Instant::now();
    let grid: CostGrid = serde_json::from_slice(&std::fs::read(fixtures().join("bench/grid.json")).unwrap()).unwrap();
    let csv = emit_report(&grid.rows()).map_err(|e| e.to_string())?;
    let p = grid.base.clone();
    let b = breakeven(&p).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    // 500 runs * 5 steps * 20000 tokens * $3e-6 = $150; 10% of that uncached.
    let c_t: Decimal = "0.000003".parse().unwrap();
    let continuous = Decimal::from(500u64 * 5 * 20_000) * c_t;
    let cached = continuous * Decimal::new(1, 1);
    let row = csv
        .lines()
        .find(|l| l.starts_with("500,"))
        .unwrap_or_default()
        .to_string();
    let ratio = cost_continuous(&p) / cost_oneshot(&p);
    check(
        p.usd_per_token == c_t
            && cost_continuous(&p) == continuous
            && continuous == Decimal::from(150)
            && cost_continuous_cached(&p) == cached
            && cost_oneshot(&p) <= Decimal::new(10, 2)
            && row == "500,150.00,15.00,0.10,0.10"
            && ratio == Decimal::from(1500)
            && b.ratio_at_m == Some(Decimal::from(1500))
            && elapsed < Duration::from_secs(1),
        format!(
            "row `{row}`, ratio {}x exact, breakeven M={}, {elapsed:?}",
            ratio.normalize(),
            b.min_executions
        ),
    )
}

fn table1() -> Verdict {
    let table = builtin_price_table();
    let tolerance = Decimal::new(5, 4);
    let rows = [
        ("claude-opus-4.6", 11_628, 1_340, "0.0916"),
        ("claude-sonnet-4.5", 11_628, 1_670, "0.0599"),
        ("gpt-5.2-codex", 9_951, 1_447, "0.0377"),
        ("qwen3.5-397b", 10_738, 3_000, "0.0172"),
        ("qwen3-coder-next", 10_536, 550, "0.0020"),
    ];
    let mut worst = Decimal::ZERO;
    let mut parts = Vec::new();
    for (model, t_in, t_out, published) in rows {
        let price = lookup_price(&table, model).map_err(|e| e.to_string())?;
        let cost = account_cost(TokenUsage::new(t_in, t_out), &price);
        let diff = (cost - published.parse::<Decimal>().unwrap()).abs();
        worst = worst.max(diff);
        parts.push(format!("{model} {cost}"));
    }
    check(
        worst <= tolerance,
        format!("max |diff| {worst} (<= {tolerance}): {}", parts.join(", ")),
    )
}

fn zero_inference() -> Verdict {
    let started = Instant::now();
    let transport = Arc::new(CountingTransport::new(compile_stub()));
    let gw = gateway(transport.clone());
    let bp = compile_task1(&gw);
    let manifest = site("task1/site.json");
    let oracle = task1_oracle();
    let mut good = 0;
    for run in 0..500u64 {
        let out = run_sim(&bp, &mut sim(&manifest, None), run, &[]);
        if out.is_completed() && out.inference_calls_during_run == 0 && out.datasets["profiles"] == oracle {
            good += 1;
        }
    }
    let elapsed = started.elapsed();
    check(
        transport.calls() == 1 && good == 500 && elapsed < Duration::from_secs(60),
        format!(
            "{} model call(s) for 500 runs, {good}/500 matched the oracle, {elapsed:?}",
            transport.calls()
        ),
    )
}

fn heal_accounting() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (r, cap) in [(0, 1), (1, 3), (3, 7)] {
        let m = heal_matrix(r, 50, 2);
        ok &= m.calls <= cap && m.calls > r && m.matching_runs == 50 && m.escalations == 0;
        if r == 0 {
            ok &= m.calls == 1;
        }
        parts.push(format!(
            "R={r}: {} calls (cap {cap}), {}/50 runs equal the clean oracle",
            m.calls, m.matching_runs
        ));
    }
    check(ok, parts.join("; "))
}

fn failure_modes() -> Verdict {
    let bp = blueprint("task1/blueprint.json");
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, expected) in [
        ("ui-changed", FailureMode::UiChanged),
        ("execution-broke", FailureMode::ExecutionBroke),
        ("plan-failed", FailureMode::PlanFailed),
    ] {
        let (script, manifest) = scenario(name);
        let mut backend = sim(&manifest, Some(&script));
        let out = run_sim(&bp, &mut backend, 0, &[]);
        let got = out.halt.as_ref().map(|h| h.failure_mode);
        ok &= got == Some(expected);
        let mut detail = format!("{name} -> {}", got.map_or("completed", |m| m.as_str()));
        if expected == FailureMode::PlanFailed {
            let counting = Arc::new(CountingTransport::new(StubTransport::single(StubResponse::new(
                "[]",
                TokenUsage::default(),
            ))));
            let gw = gateway(counting.clone());
            let recovery = Replanner::new(&gw).recover(&bp, out, &RunPolicy::default(), &mut backend);
            ok &= recovery.is_ok() && counting.calls() == 0;
            detail.push_str(&format!(" with {} inference call(s)", counting.calls()));
        }
        parts.push(detail);
    }
    check(ok, parts.join(", "))
}

fn determinism() -> Verdict {
    let manifest = site("task1/site.json");
    let bp = blueprint("task1/blueprint.json");
    let a = run_sim(&bp, &mut sim(&manifest, None), 2026, &[]);
    let b = run_sim(&bp, &mut sim(&manifest, None), 2026, &[]);
    let traces = serde_json::to_vec(&a.trace).unwrap() == serde_json::to_vec(&b.trace).unwrap();
    let datasets = serde_json::to_vec(&a.datasets).unwrap() == serde_json::to_vec(&b.datasets).unwrap();
    let grid = CostGrid::applied_benchmark();
    let csv = emit_report(&grid.rows()).map_err(|e| e.to_string())?
        == emit_report(&grid.rows()).map_err(|e| e.to_string())?;
    check(
        traces && datasets && csv && !a.trace.is_empty(),
        format!("seed 2026: traces identical {traces}, datasets identical {datasets}, bench CSV identical {csv}"),
    )
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn verdict<T: std::fmt::Debug>(r: &Result<(), proptest::test_runner::TestError<T>>) -> String {
    r.as_ref().map_or_else(|e| e.to_string(), |_| "ok".into())
}

fn ir_properties() -> Verdict {
    let identity = runner(1000).run(&arb::blueprint(), |bp| {
        let bytes = serialize(&bp);
        let back = validate(&bytes).map_err(|e| TestCaseError::fail(format!("{e:?}")))?;
        prop_assert_eq!(&back, &bp);
        prop_assert_eq!(serialize(&back), bytes);
        Ok(())
    });
    let patches = runner(1000).run(
        &(arb::blueprint(), any::<prop::sample::Index>(), arb::strategies()),
        |(bp, pick, strategies)| {
            let sites = arb::selector_sites(&bp.steps);
            if sites.is_empty() {
                return Ok(());
            }
            let (step_id, target) = sites[pick.index(sites.len())].clone();
            let patched = apply_patch(
                &bp,
                &SelectorPatch {
                    step_id,
                    target,
                    strategies,
                },
            )
            .unwrap();
            prop_assert_eq!(structural_fingerprint(&patched), structural_fingerprint(&bp));
            Ok(())
        },
    );
    let edits = runner(1000).run(&(arb::blueprint(), 0..arb::STRUCTURAL_EDITS), |(bp, which)| {
        prop_assert_ne!(
            structural_fingerprint(&arb::structural_edit(&bp, which)),
            structural_fingerprint(&bp)
        );
        Ok(())
    });
    check(
        identity.is_ok() && patches.is_ok() && edits.is_ok(),
        format!(
            "1000 cases each: validate(serialize) identity {}, patches keep fingerprint {}, structural edits change it {}",
            verdict(&identity),
            verdict(&patches),
            verdict(&edits)
        ),
    )
}

fn gate_safety() -> Verdict {
    let fx = common::gate_ops::Fixtures::load();
    let result = runner(256).run(&common::gate_ops::ops(), |ops| {
        let mut core = GateCore::new(common::gate_ops::clock());
        common::gate_ops::drive(&mut core, &ops, &fx).map_err(TestCaseError::fail)
    });
    check(
        result.is_ok(),
        format!(
            "256 random op sequences: no run from a non-approved blueprint and audit replay equal: {}",
            verdict(&result)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("dsm_compression", dsm_compression),
        ("cost_benchmark", cost_benchmark),
        ("table1_cost_accounting", table1),
        ("zero_inference_execution", zero_inference),
        ("heal_accounting_o_r", heal_accounting),
        ("failure_mode_fidelity", failure_modes),
        ("determinism", determinism),
        ("ir_properties", ir_properties),
        ("gate_safety", gate_safety),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
