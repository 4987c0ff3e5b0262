//! LRU-with-score eviction.

use std::cmp::Ordering;

use crate::model::{EntryId, KnowledgeEntry};

use super::KbError;

/// Retention value `s · e^{-λ Δt}` with `Δt = clock - last_read_at`.
pub fn retention(entry: &KnowledgeEntry, clock: u64, lambda: f64) -> f64 {
    let dt = clock.saturating_sub(entry.last_read_at) as f64;
    entry.score * (-lambda * dt).exp()
}

/// Entry with the smallest retention value; ties go to the oldest
/// `created_at`, then the smallest id.
pub fn evict_candidate<'a, I>(live: I, clock: u64, lambda: f64) -> Result<EntryId, KbError>
where
    I: IntoIterator<Item = &'a KnowledgeEntry>,
{
    live.into_iter()
        .map(|e| (retention(e, clock, lambda), e.created_at, e.id))
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        })
        .map(|(_, _, id)| id)
        .ok_or(KbError::EmptyStore)
}
