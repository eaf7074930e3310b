//! Blueprint generators shared by the property suites.

use agentc_core::blueprint::{
    Action, Blueprint, BlueprintMeta, Capture, Cardinality, FieldMapping, LoopMode, LoopStep, SelectorSpec,
    SelectorTarget, Step, Strategy as Strat, Tier, TokenUsage, ValueSource, WaitCondition, BLUEPRINT_VERSION,
    MAX_LOOP_DEPTH,
};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,8}"
}

fn expression(tier: Tier) -> BoxedStrategy<String> {
    match tier {
        Tier::Aria => ident().prop_map(|s| format!("[aria-label=\"{s}\"]")).boxed(),
        Tier::DataAttr => ident().prop_map(|s| format!("[data-testid=\"{s}\"]")).boxed(),
        Tier::Id => ident().prop_map(|s| format!("#{s}")).boxed(),
        Tier::StableClass => ident().prop_map(|s| format!(".{s}")).boxed(),
        Tier::Text => ("[a-z]{1,6}", "[A-Za-z][A-Za-z ]{0,10}")
            .prop_map(|(t, l)| format!("{t} >> text={}", l.trim()))
            .boxed(),
        Tier::Positional => (1u8..9).prop_map(|n| format!("li:nth-child({n})")).boxed(),
    }
}

/// A tier-ordered strategy list.
pub fn strategies() -> impl Strategy<Value = Vec<Strat>> {
    proptest::sample::subsequence(Tier::ALL.to_vec(), 1..=4).prop_flat_map(|tiers| {
        tiers
            .into_iter()
            .map(|t| expression(t).prop_map(move |e| Strat::new(t, e)))
            .collect::<Vec<_>>()
    })
}

fn selector() -> impl Strategy<Value = SelectorSpec> {
    (
        strategies(),
        prop_oneof![Just(Cardinality::One), Just(Cardinality::Many)],
    )
        .prop_map(|(strategies, expected_cardinality)| SelectorSpec {
            strategies,
            expected_cardinality,
        })
}

fn url() -> impl Strategy<Value = String> {
    (ident(), ident()).prop_map(|(h, p)| format!("https://{h}.test/{p}"))
}

fn fields() -> impl Strategy<Value = Vec<FieldMapping>> {
    proptest::collection::btree_set(ident(), 1..4).prop_flat_map(|names| {
        names
            .into_iter()
            .map(|name| {
                let capture = prop_oneof![Just(Capture::Text), ident().prop_map(Capture::Attribute)];
                (selector(), capture).prop_map(move |(selector, capture)| FieldMapping {
                    name: name.clone(),
                    selector,
                    capture,
                })
            })
            .collect::<Vec<_>>()
    })
}

fn leaf() -> impl Strategy<Value = Action> {
    prop_oneof![
        url().prop_map(|url| Action::Navigate { url }),
        selector().prop_map(|selector| Action::Click { selector }),
        (
            selector(),
            prop_oneof![
                ident().prop_map(ValueSource::Literal),
                ident().prop_map(ValueSource::Field)
            ]
        )
            .prop_map(|(selector, value_source)| Action::Input { selector, value_source }),
        (selector(), "[A-Za-z]{1,10}").prop_map(|(selector, option_label)| Action::Select { selector, option_label }),
        (selector(), fields(), ident()).prop_map(|(scope_selector, fields, dataset)| Action::Extract {
            scope_selector,
            fields,
            dataset
        }),
        (
            prop_oneof![
                Just(WaitCondition::MutationQuiet),
                Just(WaitCondition::NetworkIdle),
                selector().prop_map(|selector| WaitCondition::SelectorVisible { selector }),
            ],
            1u64..60_000
        )
            .prop_map(|(condition, timeout_ms)| Action::Wait { condition, timeout_ms }),
        (0u64..10_000, 0u64..5_000).prop_map(|(base_ms, jitter_ms)| Action::Delay { base_ms, jitter_ms }),
    ]
}

fn action() -> impl Strategy<Value = Action> {
    leaf().prop_recursive(MAX_LOOP_DEPTH as u32, 24, 4, |inner| {
        let body = proptest::collection::vec(
            inner.prop_map(|a| Step {
                id: String::new(),
                action: a,
            }),
            1..4,
        );
        let mode = prop_oneof![
            selector().prop_map(|next_selector| LoopMode::Paginate { next_selector }),
            (1u32..20).prop_map(|count| LoopMode::RepeatCount { count }),
        ];
        (mode, 1u32..50, 0u64..10_000, body).prop_map(|(mode, max_iterations, inter_iteration_delay_ms, body)| {
            Action::Loop(LoopStep {
                mode,
                max_iterations,
                inter_iteration_delay_ms,
                body,
            })
        })
    })
}

fn number_ids(steps: &mut [Step], next: &mut usize) {
    for step in steps {
        *next += 1;
        step.id = format!("s{next}");
        if let Action::Loop(l) = &mut step.action {
            number_ids(&mut l.body, next);
        }
    }
}

/// Valid blueprints with unique step ids and at most three loop levels.
pub fn blueprint() -> impl Strategy<Value = Blueprint> {
    proptest::collection::vec(action(), 1..6).prop_map(|actions| {
        let mut steps: Vec<Step> = actions
            .into_iter()
            .map(|action| Step {
                id: String::new(),
                action,
            })
            .collect();
        number_ids(&mut steps, &mut 0);
        Blueprint {
            version: BLUEPRINT_VERSION.into(),
            meta: BlueprintMeta {
                intent: "generated".into(),
                source_url: "https://gen.test/".into(),
                compiled_at: "2026-01-01T00:00:00Z".into(),
                model_id: "stub".into(),
                token_usage: TokenUsage::new(1, 1),
            },
            steps,
        }
    })
}

/// Every selector a patch may target, as (step id, target).
pub fn selector_sites(steps: &[Step]) -> Vec<(String, SelectorTarget)> {
    let mut out = Vec::new();
    for step in steps {
        if step.action.primary_selector().is_some() {
            out.push((step.id.clone(), SelectorTarget::Primary));
        }
        match &step.action {
            Action::Extract { fields, .. } => {
                out.extend(
                    fields
                        .iter()
                        .map(|f| (step.id.clone(), SelectorTarget::Field(f.name.clone()))),
                );
            }
            Action::Loop(l) => out.extend(selector_sites(&l.body)),
            _ => {}
        }
    }
    out
}

/// Ways to change a blueprint's control structure.
pub const STRUCTURAL_EDITS: usize = 5;

/// Applies structural edit `which` (mod [`STRUCTURAL_EDITS`]): append a
/// step, drop a step, rename a step, reorder steps, or flip the cardinality
/// of the first step.
pub fn structural_edit(bp: &Blueprint, which: usize) -> Blueprint {
    let mut out = bp.clone();
    let extra = Step {
        id: "added".into(),
        action: Action::Delay {
            base_ms: 1,
            jitter_ms: 0,
        },
    };
    match which % STRUCTURAL_EDITS {
        0 => out.steps.push(extra),
        1 if out.steps.len() > 1 => {
            out.steps.pop();
        }
        1 => out.steps.push(extra),
        2 => out.steps[0].id.push_str("-renamed"),
        3 if out.steps.len() > 1 => out.steps.swap(0, 1),
        3 => out.steps.insert(0, extra),
        _ => match out.steps[0].action.primary_selector().map(|s| s.expected_cardinality) {
            Some(c) => {
                let flipped = match c {
                    Cardinality::One => Cardinality::Many,
                    Cardinality::Many => Cardinality::One,
                };
                set_primary_cardinality(&mut out.steps[0].action, flipped);
            }
            None => out.steps.insert(0, extra),
        },
    }
    out
}

fn set_primary_cardinality(action: &mut Action, c: Cardinality) {
    let spec = match action {
        Action::Click { selector } | Action::Input { selector, .. } | Action::Select { selector, .. } => selector,
        Action::Extract { scope_selector, .. } => scope_selector,
        Action::Wait {
            condition: WaitCondition::SelectorVisible { selector },
            ..
        } => selector,
        Action::Loop(LoopStep {
            mode: LoopMode::Paginate { next_selector },
            ..
        }) => next_selector,
        _ => return,
    };
    spec.expected_cardinality = c;
}
