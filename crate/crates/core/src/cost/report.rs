use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{cost_continuous, cost_continuous_cached, cost_lazy, cost_oneshot, format_usd, CostError, CostModelParams};

pub const CSV_HEADER: &str = "M,cost_continuous,cost_cached,cost_oneshot,cost_lazy";

/// A base parameter set swept over execution counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostGrid {
    pub base: CostModelParams,
    #[serde(rename = "M")]
    pub executions: ExecutionRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExecutionRange {
    List(Vec<u64>),
    /// Inclusive of `end` when the stride lands on it.
    Range {
        start: u64,
        end: u64,
        step: u64,
    },
}

impl ExecutionRange {
    pub fn values(&self) -> Vec<u64> {
        match self {
            ExecutionRange::List(v) => v.clone(),
            ExecutionRange::Range { start, end, step } => {
                if *step == 0 || start > end {
                    return Vec::new();
                }
                (*start..=*end).step_by(*step as usize).collect()
            }
        }
    }
}

impl CostGrid {
    /// M ∈ {0, 50, …, 500} over the applied benchmark.
    pub fn applied_benchmark() -> Self {
        CostGrid {
            base: CostModelParams::applied_benchmark(),
            executions: ExecutionRange::Range {
                start: 0,
                end: 500,
                step: 50,
            },
        }
    }

    pub fn rows(&self) -> Vec<CostModelParams> {
        self.executions
            .values()
            .into_iter()
            .map(|m| self.base.with_executions(m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub executions: u64,
    pub continuous: Decimal,
    pub cached: Decimal,
    pub oneshot: Decimal,
    pub lazy: Decimal,
}

impl ReportRow {
    pub fn compute(p: &CostModelParams) -> Self {
        ReportRow {
            executions: p.executions,
            continuous: cost_continuous(p),
            cached: cost_continuous_cached(p),
            oneshot: cost_oneshot(p),
            lazy: cost_lazy(p),
        }
    }
}

/// CSV with one row per parameter set, in input order.
pub fn emit_report(rows: &[CostModelParams]) -> Result<String, CostError> {
    if rows.is_empty() {
        return Err(CostError::EmptyGrid);
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in rows {
        p.check()?;
        let r = ReportRow::compute(p);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.executions,
            format_usd(r.continuous),
            format_usd(r.cached),
            format_usd(r.oneshot),
            format_usd(r.lazy)
        );
    }
    Ok(out)
}
