use std::collections::HashMap;
use std::sync::Mutex;

use super::{Concurrency, HardLabelOracle, Label};
use crate::error::Result;
use crate::imaging::Image;

/// A backend that reads text (such as a plate number) or nothing.
pub trait TextOracle: Send + Sync {
    fn read_text(&self, img: &Image) -> Result<Option<String>>;
}

/// Maps distinct strings to stable integer labels in first-seen order.
///
/// Empty reads map to [`Label::NO_DETECTION`].
pub struct StringLabelAdapter<T> {
    backend: T,
    table: Mutex<HashMap<String, Label>>,
}

impl<T: TextOracle> StringLabelAdapter<T> {
    pub fn new(backend: T) -> Self {
        Self { backend, table: Mutex::default() }
    }

    /// Pre-registers strings so their labels are known before querying.
    pub fn label_for(&self, text: &str) -> Label {
        if text.is_empty() {
            return Label::NO_DETECTION;
        }
        let mut table = self.table.lock().expect("label table lock");
        let next = Label(table.len() as i64);
        *table.entry(text.to_string()).or_insert(next)
    }

    pub fn text_for(&self, label: Label) -> Option<String> {
        let table = self.table.lock().expect("label table lock");
        table.iter().find(|(_, l)| **l == label).map(|(s, _)| s.clone())
    }
}

impl<T: TextOracle> HardLabelOracle for StringLabelAdapter<T> {
    fn classify(&self, img: &Image) -> Result<Label> {
        Ok(match self.backend.read_text(img)? {
            Some(s) => self.label_for(&s),
            None => Label::NO_DETECTION,
        })
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

/// Edit distance between two label strings, for reporting.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}
