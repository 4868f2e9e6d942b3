use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::error::Error;

/// Exact per-phase query counts with an optional hard budget.
///
/// Queries are reserved before dispatch, so a budget is never overrun.
#[derive(Debug)]
pub struct QueryLedger {
    total: AtomicU64,
    per_phase: [AtomicU64; Phase::ALL.len()],
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn new(budget: Option<u64>) -> Self {
        Self { total: AtomicU64::new(0), per_phase: Default::default(), budget }
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.per_phase[phase as usize].load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.total()))
    }

    /// Reserves up to `k` queries and returns how many were granted.
    pub fn reserve(&self, phase: Phase, k: u64) -> u64 {
        let granted = match self.budget {
            None => {
                self.total.fetch_add(k, Ordering::SeqCst);
                k
            }
            Some(budget) => {
                let mut cur = self.total.load(Ordering::SeqCst);
                loop {
                    let g = k.min(budget.saturating_sub(cur));
                    if g == 0 {
                        return 0;
                    }
                    match self.total.compare_exchange(cur, cur + g, Ordering::SeqCst, Ordering::SeqCst) {
                        Ok(_) => break g,
                        Err(actual) => cur = actual,
                    }
                }
            }
        };
        self.per_phase[phase as usize].fetch_add(granted, Ordering::SeqCst);
        granted
    }

    pub(crate) fn exceeded(&self) -> Error {
        Error::BudgetExceeded { spent: self.total(), budget: self.budget.unwrap_or(u64::MAX), partial: None }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let per_phase = Phase::ALL
            .iter()
            .map(|&p| (p, self.phase(p)))
            .filter(|(_, c)| *c > 0)
            .collect();
        LedgerSnapshot { total: self.total(), per_phase, budget: self.budget }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub total: u64,
    pub per_phase: BTreeMap<Phase, u64>,
    pub budget: Option<u64>,
}

impl LedgerSnapshot {
    pub fn phase(&self, phase: Phase) -> u64 {
        self.per_phase.get(&phase).copied().unwrap_or(0)
    }

    pub fn is_conserved(&self) -> bool {
        self.per_phase.values().sum::<u64>() == self.total
    }

    /// Per-phase difference `self - earlier`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        let per_phase = self
            .per_phase
            .iter()
            .map(|(p, c)| (*p, c - earlier.phase(*p)))
            .filter(|(_, c)| *c > 0)
            .collect();
        LedgerSnapshot { total: self.total - earlier.total, per_phase, budget: self.budget }
    }
}
