//! The hard-label query boundary.
//!
//! Backends implement [`HardLabelOracle`] and return a top-1 label and
//! nothing else. Every call made by the optimizers goes through an
//! [`OracleSession`], which charges a [`QueryLedger`] before dispatch.

mod http;
mod labels;
mod ledger;
mod process;
pub mod stub;
mod template;
pub mod wire;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub use http::HttpOracle;
pub use labels::{levenshtein, StringLabelAdapter, TextOracle};
pub use ledger::{LedgerSnapshot, QueryLedger};
pub use process::ExternalProcessOracle;
pub use template::TemplateClassifier;

/// An opaque class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub i64);

impl Label {
    /// Returned by a survivability-wrapped oracle when no label clears its threshold.
    pub const REJECT: Label = Label(-1);
    /// Plate-reader backends that find no text.
    pub const NO_DETECTION: Label = Label(-2);
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for Label {
    fn from(v: i64) -> Self {
        Label(v)
    }
}

/// What a ledger entry was spent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Heatmap,
    Coarse,
    Fine,
    Boost,
    LineSearch,
    Baseline,
    WrapperInner,
    Holdout,
    Direct,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Heatmap,
        Phase::Coarse,
        Phase::Fine,
        Phase::Boost,
        Phase::LineSearch,
        Phase::Baseline,
        Phase::WrapperInner,
        Phase::Holdout,
        Phase::Direct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Heatmap => "heatmap",
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
            Phase::Boost => "boost",
            Phase::LineSearch => "line_search",
            Phase::Baseline => "baseline",
            Phase::WrapperInner => "wrapper_inner",
            Phase::Holdout => "holdout",
            Phase::Direct => "direct",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    /// Calls may overlap.
    Concurrent,
    /// Calls must be issued one at a time.
    Serial,
}

/// Top-1 label access to a classifier.
pub trait HardLabelOracle: Send + Sync {
    fn classify(&self, img: &Image) -> Result<Label>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

impl<F> HardLabelOracle for F
where
    F: Fn(&Image) -> Label + Send + Sync,
{
    fn classify(&self, img: &Image) -> Result<Label> {
        Ok(self(img))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Charges `ledger` once, then asks `oracle`.
pub fn query(oracle: &dyn HardLabelOracle, img: &Image, ledger: &QueryLedger, phase: Phase) -> Result<Label> {
    if ledger.reserve(phase, 1) == 0 {
        return Err(ledger.exceeded());
    }
    oracle.classify(img)
}

/// Labels from a batch that may have been cut short by the budget.
#[derive(Debug, Clone)]
pub struct Batch {
    pub labels: Vec<Label>,
    pub exhausted: bool,
}

type LabelCache = HashMap<[u8; 32], Label>;

/// An oracle bound to a ledger, optionally with a digest-keyed cache.
#[derive(Clone)]
pub struct OracleSession {
    oracle: Arc<dyn HardLabelOracle>,
    ledger: Arc<QueryLedger>,
    cache: Option<Arc<Mutex<LabelCache>>>,
}

impl fmt::Debug for OracleSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleSession").field("ledger", &self.ledger).field("cached", &self.cache.is_some()).finish()
    }
}

fn digest(img: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in [img.width(), img.height(), img.channels()] {
        h.update((d as u64).to_le_bytes());
    }
    for v in img.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

impl OracleSession {
    pub fn new(oracle: Arc<dyn HardLabelOracle>, ledger: Arc<QueryLedger>) -> Self {
        Self { oracle, ledger, cache: None }
    }

    /// Session with a fresh unlimited ledger.
    pub fn unlimited(oracle: Arc<dyn HardLabelOracle>) -> Self {
        Self::new(oracle, Arc::new(QueryLedger::new(None)))
    }

    /// Repeated identical images are answered from memory and not charged.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Arc::default());
        self
    }

    /// Same oracle (and cache), different ledger.
    pub fn with_ledger(&self, ledger: Arc<QueryLedger>) -> Self {
        Self { oracle: self.oracle.clone(), ledger, cache: self.cache.clone() }
    }

    pub fn ledger(&self) -> &Arc<QueryLedger> {
        &self.ledger
    }

    pub fn oracle(&self) -> &Arc<dyn HardLabelOracle> {
        &self.oracle
    }

    pub fn query(&self, img: &Image, phase: Phase) -> Result<Label> {
        let Some(cache) = &self.cache else {
            return query(self.oracle.as_ref(), img, &self.ledger, phase);
        };
        let key = digest(img);
        if let Some(l) = cache.lock().expect("cache lock").get(&key) {
            return Ok(*l);
        }
        let label = query(self.oracle.as_ref(), img, &self.ledger, phase)?;
        cache.lock().expect("cache lock").insert(key, label);
        Ok(label)
    }

    /// Queries images `0..n` produced by `make`, in index order.
    ///
    /// Budget is reserved for the whole batch up front; if only part of it
    /// is granted, the granted prefix is still evaluated and the batch is
    /// flagged exhausted. Concurrent-safe oracles are queried in parallel.
    pub fn query_batch<F>(&self, n: usize, make: F, phase: Phase) -> Result<Batch>
    where
        F: Fn(usize) -> Result<Image> + Sync,
    {
        if self.cache.is_some() {
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                match self.query(&make(i)?, phase) {
                    Ok(l) => labels.push(l),
                    Err(e) if e.is_budget_exceeded() => return Ok(Batch { labels, exhausted: true }),
                    Err(e) => return Err(e),
                }
            }
            return Ok(Batch { labels, exhausted: false });
        }
        let granted = self.ledger.reserve(phase, n as u64) as usize;
        let run = |i: usize| make(i).and_then(|img| self.oracle.classify(&img));
        let labels: Result<Vec<Label>> = match self.oracle.concurrency() {
            Concurrency::Concurrent if granted > 1 => (0..granted).into_par_iter().map(run).collect(),
            _ => (0..granted).map(run).collect(),
        };
        Ok(Batch { labels: labels?, exhausted: granted < n })
    }
}

/// Always answers the same label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle(pub Label);

impl HardLabelOracle for ConstantOracle {
    fn classify(&self, _img: &Image) -> Result<Label> {
        Ok(self.0)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Wraps another oracle and counts the calls it actually receives.
pub struct CountingOracle<O> {
    pub inner: O,
    calls: std::sync::atomic::AtomicU64,
}

impl<O: HardLabelOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, calls: Default::default() }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<O: HardLabelOracle> HardLabelOracle for CountingOracle<O> {
    fn classify(&self, img: &Image) -> Result<Label> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.classify(img)
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }
}

impl Error {
    pub(crate) fn oracle_io(e: impl fmt::Display) -> Self {
        Error::OracleIo(e.to_string())
    }
}
