//! Inference cost model for continuous agents versus one-shot compilation,
//! with heal-aware accounting. All currency is exact decimal.

mod price;
mod report;

use alloc::vec::Vec;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use price::{account_cost, format_usd, round_display, Price, PriceTable};
pub use report::{emit_report, CostGrid, ExecutionRange, ReportRow, CSV_HEADER};

/// Every symbol of the cost formulas. JSON field names follow the symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// Execution count.
    #[serde(rename = "M")]
    pub executions: u64,
    /// Sequential actions per workflow; must equal `step_tokens.len()`.
    #[serde(rename = "N")]
    pub steps: u64,
    /// Token size of the page state seen at each step.
    #[serde(rename = "S")]
    pub step_tokens: Vec<u64>,
    /// USD per token for continuous inference and healing.
    #[serde(rename = "C_t", with = "price::decimal_str")]
    pub usd_per_token: Decimal,
    #[serde(rename = "S_compile")]
    pub compile_tokens: u64,
    /// USD per token for the compilation call; `C_t` when absent.
    #[serde(
        rename = "C_compile",
        default,
        skip_serializing_if = "Option::is_none",
        with = "price::opt_decimal_str"
    )]
    pub compile_usd_per_token: Option<Decimal>,
    /// USD per execution of the deterministic runtime.
    #[serde(rename = "C_exec", with = "price::decimal_str")]
    pub exec_usd: Decimal,
    #[serde(with = "price::decimal_str")]
    pub cache_efficiency: Decimal,
    /// Heal events over the M executions.
    #[serde(rename = "R")]
    pub heal_events: u64,
    #[serde(rename = "S_heal")]
    pub heal_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("N = {steps} but S lists {listed} step sizes")]
    StepCountMismatch { steps: u64, listed: usize },
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("cache_efficiency must lie in [0, 1]")]
    CacheEfficiency,
    #[error("per-execution continuous cost is zero; break-even is undefined")]
    ZeroContinuousCost,
    #[error("one-shot execution overhead is not below the continuous per-execution cost; no break-even exists")]
    NoBreakeven,
    #[error("cost grid is empty")]
    EmptyGrid,
}

impl CostModelParams {
    /// The applied benchmark: 500 runs of a five-step workflow over
    /// 20,000-token pages at $3 per million tokens, 90% caching, and a
    /// compilation priced at $0.10.
    pub fn applied_benchmark() -> Self {
        CostModelParams {
            executions: 500,
            steps: 5,
            step_tokens: alloc::vec![20_000; 5],
            usd_per_token: Decimal::new(3, 6),
            compile_tokens: 20_000,
            compile_usd_per_token: Some(Decimal::new(5, 6)),
            exec_usd: Decimal::ZERO,
            cache_efficiency: Decimal::new(9, 1),
            heal_events: 0,
            heal_tokens: 2_000,
        }
    }

    pub fn check(&self) -> Result<(), CostError> {
        if self.steps != self.step_tokens.len() as u64 {
            return Err(CostError::StepCountMismatch {
                steps: self.steps,
                listed: self.step_tokens.len(),
            });
        }
        if self.usd_per_token.is_sign_negative() {
            return Err(CostError::Negative("C_t"));
        }
        if self.compile_usd_per_token.is_some_and(|c| c.is_sign_negative()) {
            return Err(CostError::Negative("C_compile"));
        }
        if self.exec_usd.is_sign_negative() {
            return Err(CostError::Negative("C_exec"));
        }
        if self.cache_efficiency.is_sign_negative() || self.cache_efficiency > Decimal::ONE {
            return Err(CostError::CacheEfficiency);
        }
        Ok(())
    }

    pub fn with_executions(&self, executions: u64) -> Self {
        CostModelParams {
            executions,
            ..self.clone()
        }
    }

    fn compile_rate(&self) -> Decimal {
        self.compile_usd_per_token.unwrap_or(self.usd_per_token)
    }

    /// Σ S_i × C_t: what a continuous agent pays per execution.
    pub fn continuous_per_execution(&self) -> Decimal {
        self.step_tokens
            .iter()
            .map(|&s| Decimal::from(s) * self.usd_per_token)
            .sum()
    }

    /// S_compile × C_compile: the single inference charge.
    pub fn compile_cost(&self) -> Decimal {
        Decimal::from(self.compile_tokens) * self.compile_rate()
    }
}

/// M × Σ S_i × C_t.
pub fn cost_continuous(p: &CostModelParams) -> Decimal {
    Decimal::from(p.executions) * p.continuous_per_execution()
}

/// (1 − cache_efficiency) × continuous cost.
pub fn cost_continuous_cached(p: &CostModelParams) -> Decimal {
    (Decimal::ONE - p.cache_efficiency) * cost_continuous(p)
}

/// S_compile × C_compile + M × C_exec.
pub fn cost_oneshot(p: &CostModelParams) -> Decimal {
    p.compile_cost() + Decimal::from(p.executions) * p.exec_usd
}

/// One-shot cost plus R heals of S_heal tokens each at C_t.
pub fn cost_lazy(p: &CostModelParams) -> Decimal {
    cost_oneshot(p) + Decimal::from(p.heal_events) * Decimal::from(p.heal_tokens) * p.usd_per_token
}

/// True when healing has grown so frequent that lazy replanning costs at
/// least as much as the continuous agent would.
pub fn lazy_is_degenerate(p: &CostModelParams) -> bool {
    p.executions > 0 && cost_lazy(p) >= cost_continuous(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakeven {
    /// Smallest execution count at which one-shot is strictly cheaper.
    pub min_executions: u64,
    /// cost_continuous / cost_oneshot at the params' own M; `None` when the
    /// one-shot cost there is zero.
    #[serde(with = "price::opt_decimal_str")]
    pub ratio_at_m: Option<Decimal>,
}

pub fn breakeven(p: &CostModelParams) -> Result<Breakeven, CostError> {
    let per_exec = p.continuous_per_execution();
    if per_exec.is_zero() {
        return Err(CostError::ZeroContinuousCost);
    }
    let margin = per_exec - p.exec_usd;
    if margin <= Decimal::ZERO {
        return Err(CostError::NoBreakeven);
    }
    // M × margin > compile_cost  ⇔  M > compile_cost / margin
    let threshold = (p.compile_cost() / margin).floor();
    let min_executions = u64::try_from(threshold).unwrap_or(u64::MAX).saturating_add(1);
    let oneshot = cost_oneshot(p);
    let ratio_at_m = if oneshot.is_zero() {
        None
    } else {
        Some(cost_continuous(p) / oneshot)
    };
    Ok(Breakeven {
        min_executions,
        ratio_at_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit() -> CostModelParams {
        CostModelParams {
            executions: 1,
            steps: 1,
            step_tokens: vec![1],
            usd_per_token: Decimal::ONE,
            compile_tokens: 0,
            compile_usd_per_token: None,
            exec_usd: Decimal::ZERO,
            cache_efficiency: Decimal::ZERO,
            heal_events: 0,
            heal_tokens: 0,
        }
    }

    #[test]
    fn continuous_unit_and_zero() {
        assert_eq!(cost_continuous(&unit()), Decimal::ONE);
        assert_eq!(cost_continuous(&unit().with_executions(0)), Decimal::ZERO);
    }

    #[test]
    fn applied_benchmark_headline_values() {
        let p = CostModelParams::applied_benchmark();
        p.check().unwrap();
        assert_eq!(cost_continuous(&p), Decimal::new(150, 0));
        assert_eq!(cost_continuous_cached(&p), Decimal::new(15, 0));
        assert_eq!(cost_oneshot(&p), Decimal::new(10, 2));
    }

    #[test]
    fn cache_boundaries() {
        let mut p = CostModelParams::applied_benchmark();
        p.cache_efficiency = Decimal::ZERO;
        assert_eq!(cost_continuous_cached(&p), cost_continuous(&p));
        p.cache_efficiency = Decimal::ONE;
        assert_eq!(cost_continuous_cached(&p), Decimal::ZERO);
        p.cache_efficiency = Decimal::new(11, 1);
        assert_eq!(p.check(), Err(CostError::CacheEfficiency));
    }

    #[test]
    fn lazy_adds_heal_charges() {
        let mut p = CostModelParams::applied_benchmark();
        assert_eq!(cost_lazy(&p), cost_oneshot(&p));
        p.heal_events = 2;
        p.heal_tokens = 2_000;
        // 2 × 2000 × 3e-6 = 0.012
        assert_eq!(cost_lazy(&p) - cost_oneshot(&p), Decimal::new(12, 3));
        assert!(!lazy_is_degenerate(&p));
    }

    #[test]
    fn healing_every_run_with_full_pages_is_degenerate() {
        let mut p = CostModelParams::applied_benchmark();
        p.heal_events = p.executions;
        p.heal_tokens = p.step_tokens.iter().sum();
        assert!(cost_lazy(&p) >= cost_continuous(&p));
        assert!(lazy_is_degenerate(&p));
    }

    #[test]
    fn breakeven_at_first_run() {
        let p = CostModelParams::applied_benchmark();
        let b = breakeven(&p).unwrap();
        assert_eq!(b.min_executions, 1);
        assert_eq!(b.ratio_at_m, Some(Decimal::new(1500, 0)));
    }

    #[test]
    fn breakeven_rounds_up_past_exact_ties() {
        // compile 0.60, per-exec 0.30: M = 2 ties, so M* = 3.
        let mut p = CostModelParams::applied_benchmark();
        p.compile_tokens = 120_000;
        assert_eq!(breakeven(&p).unwrap().min_executions, 3);
    }

    #[test]
    fn breakeven_guards() {
        let mut p = CostModelParams::applied_benchmark();
        p.usd_per_token = Decimal::ZERO;
        p.compile_usd_per_token = Some(Decimal::new(5, 6));
        assert_eq!(breakeven(&p), Err(CostError::ZeroContinuousCost));
        let mut q = CostModelParams::applied_benchmark();
        q.exec_usd = Decimal::ONE;
        assert_eq!(breakeven(&q), Err(CostError::NoBreakeven));
    }

    #[test]
    fn mismatched_step_count_is_rejected() {
        let mut p = CostModelParams::applied_benchmark();
        p.steps = 4;
        assert!(matches!(p.check(), Err(CostError::StepCountMismatch { .. })));
    }
}
