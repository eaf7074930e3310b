use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

/// Selector robustness tiers, most robust first. The declaration order is the
/// priority order: a strategy list must never move to a higher tier once it
/// has used a lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Aria,
    DataAttr,
    Id,
    StableClass,
    Text,
    Positional,
}

impl Tier {
    pub const ALL: [Tier; 6] = [
        Tier::Aria,
        Tier::DataAttr,
        Tier::Id,
        Tier::StableClass,
        Tier::Text,
        Tier::Positional,
    ];

    /// 0 is the most robust tier.
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Aria => "aria",
            Tier::DataAttr => "data_attr",
            Tier::Id => "id",
            Tier::StableClass => "stable_class",
            Tier::Text => "text",
            Tier::Positional => "positional",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Tier::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub tier: Tier,
    /// A CSS selector. `text` strategies append ` >> text=<label>` to match
    /// the element's trimmed text exactly.
    pub expression: String,
}

impl Strategy {
    pub fn new(tier: Tier, expression: impl Into<String>) -> Self {
        Self {
            tier,
            expression: expression.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    One,
    Many,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectorSpec {
    pub strategies: Vec<Strategy>,
    pub expected_cardinality: Cardinality,
}

impl SelectorSpec {
    pub fn one(strategies: Vec<Strategy>) -> Self {
        Self {
            strategies,
            expected_cardinality: Cardinality::One,
        }
    }

    pub fn many(strategies: Vec<Strategy>) -> Self {
        Self {
            strategies,
            expected_cardinality: Cardinality::Many,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TierOrderError {
    Empty,
    /// A positional strategy leads while more robust tiers follow.
    PositionalFirst,
    /// `index` uses a more robust tier than its predecessor.
    Inverted {
        index: usize,
        previous: Tier,
        found: Tier,
    },
}

impl fmt::Display for TierOrderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TierOrderError::Empty => f.write_str("selector has no strategies"),
            TierOrderError::PositionalFirst => f.write_str("positional strategy listed before more robust tiers"),
            TierOrderError::Inverted { index, previous, found } => write!(
                f,
                "strategy {index} uses tier {found} after lower-priority tier {previous}"
            ),
        }
    }
}

/// Checks the non-increasing priority rule over a strategy list.
pub fn check_tier_order(strategies: &[Strategy]) -> Result<(), TierOrderError> {
    let first = strategies.first().ok_or(TierOrderError::Empty)?;
    if first.tier == Tier::Positional && strategies.iter().any(|s| s.tier != Tier::Positional) {
        return Err(TierOrderError::PositionalFirst);
    }
    for (i, pair) in strategies.windows(2).enumerate() {
        if pair[1].tier < pair[0].tier {
            return Err(TierOrderError::Inverted {
                index: i + 1,
                previous: pair[0].tier,
                found: pair[1].tier,
            });
        }
    }
    Ok(())
}
