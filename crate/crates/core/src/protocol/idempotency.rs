use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Exactly-once computation per key. Concurrent callers with the same key
/// block until the first computation finishes and then share its result.
pub struct IdempotencyCache<V> {
    entries: Mutex<HashMap<String, Arc<OnceLock<V>>>>,
}

impl<V: Clone> IdempotencyCache<V> {
    pub fn new() -> Self {
        Self { entries: Mutex::new(HashMap::new()) }
    }

    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> V) -> V {
        let slot = {
            let mut entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
            Arc::clone(entries.entry(key.to_string()).or_default())
        };
        slot.get_or_init(compute).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }
}

impl<V: Clone> Default for IdempotencyCache<V> {
    fn default() -> Self {
        Self::new()
    }
}
