use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Rotate { index: i64, level: u32 },
    /// `level` is the level of the product.
    MultPlain { level: u32 },
    MultCipher { level: u32 },
    Bootstrap { from: u32, to: u32 },
    /// Marks the start of a top-level model layer.
    Layer { index: usize, name: String },
    Note { text: String },
}

/// Shared, append-only event log. Cloning yields another handle to the same log.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    events: Arc<Mutex<Vec<TraceEvent>>>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&self, event: TraceEvent) {
        self.events.lock().expect("trace lock poisoned").push(event);
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().expect("trace lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("trace lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.events.lock().expect("trace lock poisoned").clear();
    }

    pub fn rotation_indices(&self) -> BTreeSet<i64> {
        self.events()
            .into_iter()
            .filter_map(|e| match e {
                TraceEvent::Rotate { index, .. } => Some(index),
                _ => None,
            })
            .collect()
    }

    pub fn rotation_count(&self) -> usize {
        self.events()
            .iter()
            .filter(|e| matches!(e, TraceEvent::Rotate { .. }))
            .count()
    }

    pub fn mult_count(&self) -> usize {
        self.events()
            .iter()
            .filter(|e| matches!(e, TraceEvent::MultPlain { .. } | TraceEvent::MultCipher { .. }))
            .count()
    }
}
