//! Persistent knowledge base.
//!
//! The store is an append-only record log. Only a token carrying
//! `VALIDATOR_WRITE_KB` may commit, and a commit is one atomic batch. When
//! the live set grows past capacity, entries are tombstoned (never erased)
//! by [`evict_candidate`]. Roles read through a [`Snapshot`] taken at round
//! start; reads are buffered in the snapshot and folded back into
//! `last_read_at` by [`KnowledgeBase::end_round`].

mod eviction;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::canonical::{ContentHash, SerializationError, HASH_FUNCTION};
use crate::model::{EntryDraft, EntryId, EntryKey, EntryKind, KnowledgeEntry, RoleId};
use crate::workspace::{CapabilityToken, Grant};

pub use eviction::{evict_candidate, retention};
pub use store::{read_store, KbFile, KbHeader, KbRecord, STORE_FORMAT};

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct KbConfig {
    pub capacity: usize,
    pub lambda: f64,
    pub tau_prom: f64,
}

impl Default for KbConfig {
    fn default() -> Self {
        KbConfig { capacity: 256, lambda: 0.05, tau_prom: 0.6 }
    }
}

impl KbConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("capacity M must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("decay λ must be a nonnegative real, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau_prom) {
            return Err(format!("τ_prom must lie in [0,1], got {}", self.tau_prom));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KbError {
    #[error("knowledge write denied: {0}")]
    WriteDenied(String),
    #[error("entry score {score} is below the promotion threshold {tau}")]
    ScoreBelowThreshold { score: f64, tau: f64 },
    #[error("entry score {0} outside [0,1]")]
    ScoreOutOfRange(f64),
    #[error("eviction over an empty store")]
    EmptyStore,
    #[error("retrieval key {key:?} does not address {kind:?} entries")]
    KeyShapeMismatch { kind: EntryKind, key: EntryKey },
    #[error("store i/o: {0}")]
    Io(String),
    #[error("corrupt store record {index}: {reason}")]
    Corrupt { index: usize, reason: String },
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

/// Result of one committed batch.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub batch: u64,
    pub accepted: Vec<EntryId>,
    pub refreshed: Vec<EntryId>,
    pub evicted: Vec<EntryId>,
}

type Index = BTreeMap<EntryKey, BTreeSet<EntryId>>;

/// Frozen view of the live entries at round start.
#[derive(Clone, Debug)]
pub struct Snapshot {
    clock: u64,
    entries: Arc<BTreeMap<EntryId, KnowledgeEntry>>,
    index: Arc<Index>,
    reads: Arc<Mutex<BTreeSet<EntryId>>>,
}

impl Snapshot {
    pub fn empty() -> Self {
        Snapshot {
            clock: 0,
            entries: Arc::default(),
            index: Arc::default(),
            reads: Arc::default(),
        }
    }

    /// Logical round at which the snapshot was taken.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> BTreeSet<EntryId> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, id: EntryId) -> Option<&KnowledgeEntry> {
        self.entries.get(&id)
    }

    pub fn prov_hashes(&self) -> BTreeSet<ContentHash> {
        self.entries.values().map(|e| e.prov_hash).collect()
    }

    /// Buffers a read mark, applied to `last_read_at` at round end.
    pub fn mark_read(&self, id: EntryId) {
        if self.entries.contains_key(&id) {
            self.reads.lock().expect("read buffer").insert(id);
        }
    }

    pub fn reads(&self) -> BTreeSet<EntryId> {
        self.reads.lock().expect("read buffer").clone()
    }

    fn ranked(&self, ids: impl Iterator<Item = EntryId>) -> Vec<KnowledgeEntry> {
        let mut out: Vec<KnowledgeEntry> = ids.filter_map(|id| self.entries.get(&id).cloned()).collect();
        out.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.created_at.cmp(&a.created_at))
                .then(b.id.cmp(&a.id))
        });
        for e in &out {
            self.mark_read(e.id);
        }
        out
    }

    /// Typed retrieval by exact key, ranked by score then recency.
    pub fn retrieve(&self, kind: EntryKind, key: &EntryKey) -> Result<Vec<KnowledgeEntry>, KbError> {
        if key.kind() != kind {
            return Err(KbError::KeyShapeMismatch { kind, key: key.clone() });
        }
        let ids = self.index.get(key).into_iter().flatten().copied();
        Ok(self.ranked(ids))
    }

    /// Pattern entries under one abstraction key.
    pub fn patterns(&self, key: ContentHash) -> Vec<KnowledgeEntry> {
        self.retrieve(EntryKind::Pattern, &EntryKey::Pattern(key)).unwrap_or_default()
    }

    /// Every pattern entry, without marking reads.
    pub fn all_patterns(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.values().filter(|e| e.kind() == EntryKind::Pattern)
    }

    pub fn capability(&self, role: RoleId, tool: &str) -> Vec<KnowledgeEntry> {
        let key = EntryKey::Capability { role, tool: tool.to_owned() };
        self.retrieve(EntryKind::Capability, &key).unwrap_or_default()
    }

    /// Capability profiles for `tool` across all executor instances.
    pub fn capabilities_for_tool(&self, tool: &str) -> Vec<KnowledgeEntry> {
        let ids = self
            .index
            .iter()
            .filter(|(k, _)| matches!(k, EntryKey::Capability { tool: t, .. } if t == tool))
            .flat_map(|(_, ids)| ids.iter().copied());
        self.ranked(ids)
    }

    pub fn feedback(&self, role: RoleId) -> Vec<KnowledgeEntry> {
        self.retrieve(EntryKind::Feedback, &EntryKey::Feedback(role)).unwrap_or_default()
    }
}

/// Append-only validated store.
#[derive(Debug)]
pub struct KnowledgeBase {
    config: KbConfig,
    clock: u64,
    next_id: u64,
    next_batch: u64,
    live: Arc<BTreeMap<EntryId, KnowledgeEntry>>,
    index: Arc<Index>,
    evicted: BTreeMap<EntryId, KnowledgeEntry>,
    log: Vec<KbRecord>,
    file: Option<KbFile>,
}

impl KnowledgeBase {
    pub fn in_memory(config: KbConfig) -> Self {
        KnowledgeBase {
            config,
            clock: 0,
            next_id: 1,
            next_batch: 1,
            live: Arc::default(),
            index: Arc::default(),
            evicted: BTreeMap::new(),
            log: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a file-backed store. An existing file is replayed
    /// to rebuild the live set; its header parameters take precedence.
    pub fn open(path: &Path, config: KbConfig) -> Result<Self, KbError> {
        if path.exists() {
            let (header, records) = read_store(path)?;
            if header.capacity != config.capacity || header.lambda != config.lambda || header.tau_prom != config.tau_prom {
                tracing::warn!(path = %path.display(), "store header parameters differ from requested config; using header");
            }
            let mut kb = Self::rebuild(header.config(), records)?;
            kb.file = Some(KbFile::append(path)?);
            Ok(kb)
        } else {
            let header = KbHeader::new(config);
            let file = KbFile::create(path, &header)?;
            let mut kb = Self::in_memory(config);
            kb.file = Some(file);
            Ok(kb)
        }
    }

    /// Deterministically reconstructs the store from its record stream.
    pub fn rebuild(config: KbConfig, records: Vec<KbRecord>) -> Result<Self, KbError> {
        let mut kb = Self::in_memory(config);
        for (index, rec) in records.iter().enumerate() {
            let corrupt = |reason: &str| KbError::Corrupt { index, reason: reason.to_owned() };
            match rec {
                KbRecord::Entry { entry, batch, .. } => {
                    if kb.live.contains_key(&entry.id) || kb.evicted.contains_key(&entry.id) {
                        return Err(corrupt("duplicate entry id"));
                    }
                    kb.next_id = kb.next_id.max(entry.id.0 as u64 + 1);
                    kb.next_batch = kb.next_batch.max(batch + 1);
                    kb.insert_live(entry.clone());
                }
                KbRecord::Tombstone { id, .. } => {
                    let e = kb.remove_live(*id).ok_or_else(|| corrupt("tombstone for unknown entry"))?;
                    kb.evicted.insert(*id, e);
                }
                KbRecord::Refresh { id, score, last_read_at, .. } => {
                    let live = Arc::make_mut(&mut kb.live);
                    let e = live.get_mut(id).ok_or_else(|| corrupt("refresh of unknown entry"))?;
                    e.score = *score;
                    e.last_read_at = *last_read_at;
                }
                KbRecord::Round { clock } => kb.clock = kb.clock.max(*clock),
            }
        }
        kb.log = records;
        Ok(kb)
    }

    pub fn config(&self) -> &KbConfig {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn live(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.live.values()
    }

    pub fn tombstoned(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.evicted.values()
    }

    /// Every record appended so far, in order.
    pub fn log(&self) -> &[KbRecord] {
        &self.log
    }

    /// Advances the logical clock; called when a round opens.
    pub fn begin_round(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            clock: self.clock,
            entries: Arc::clone(&self.live),
            index: Arc::clone(&self.index),
            reads: Arc::default(),
        }
    }

    fn insert_live(&mut self, entry: KnowledgeEntry) {
        Arc::make_mut(&mut self.index).entry(entry.key.clone()).or_default().insert(entry.id);
        Arc::make_mut(&mut self.live).insert(entry.id, entry);
    }

    fn remove_live(&mut self, id: EntryId) -> Option<KnowledgeEntry> {
        let e = Arc::make_mut(&mut self.live).remove(&id)?;
        let index = Arc::make_mut(&mut self.index);
        if let Some(ids) = index.get_mut(&e.key) {
            ids.remove(&id);
            if ids.is_empty() {
                index.remove(&e.key);
            }
        }
        Some(e)
    }

    fn append(&mut self, rec: KbRecord) -> Result<(), KbError> {
        if let Some(f) = &mut self.file {
            f.write(&rec)?;
        }
        self.log.push(rec);
        Ok(())
    }

    /// Commits one validator batch atomically, then evicts down to capacity.
    pub fn commit_batch(
        &mut self,
        token: &CapabilityToken,
        batch: Vec<EntryDraft>,
    ) -> Result<CommitReceipt, KbError> {
        if token.grant() != Grant::ValidatorWriteKb || token.holder() != RoleId::Validator {
            return Err(KbError::WriteDenied(format!(
                "{} holds {:?}; VALIDATOR_WRITE_KB required",
                token.holder(),
                token.grant()
            )));
        }
        for d in &batch {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(KbError::ScoreOutOfRange(d.score));
            }
            if d.score < self.config.tau_prom {
                return Err(KbError::ScoreBelowThreshold { score: d.score, tau: self.config.tau_prom });
            }
            crate::canonical::to_bytes(&d.payload)?;
        }

        let batch_id = self.next_batch;
        self.next_batch += 1;
        let round = self.clock;
        let mut receipt = CommitReceipt { batch: batch_id, ..Default::default() };

        for draft in batch {
            let dup = self
                .live
                .values()
                .find(|e| e.prov_hash == draft.prov_hash && e.kind() == draft.kind())
                .map(|e| (e.id, e.score));
            if let Some((id, old)) = dup {
                let score = old.max(draft.score);
                let live = Arc::make_mut(&mut self.live);
                let e = live.get_mut(&id).expect("duplicate is live");
                e.score = score;
                e.last_read_at = self.clock;
                self.append(KbRecord::Refresh { id, score, last_read_at: self.clock, round, batch: batch_id })?;
                receipt.refreshed.push(id);
                continue;
            }
            let entry = KnowledgeEntry {
                id: EntryId(self.next_id as u128),
                key: draft.key,
                payload: draft.payload,
                score: draft.score,
                prov_hash: draft.prov_hash,
                created_at: self.clock,
                last_read_at: self.clock,
            };
            self.next_id += 1;
            receipt.accepted.push(entry.id);
            self.append(KbRecord::Entry { entry: entry.clone(), round, batch: batch_id })?;
            self.insert_live(entry);
        }

        while self.live.len() > self.config.capacity {
            let id = evict_candidate(self.live.values(), self.clock, self.config.lambda)?;
            let e = self.remove_live(id).expect("candidate is live");
            self.evicted.insert(id, e);
            self.append(KbRecord::Tombstone { id, round, batch: batch_id })?;
            receipt.evicted.push(id);
        }
        Ok(receipt)
    }

    /// Applies a round's buffered reads and closes the round.
    pub fn end_round(&mut self, snapshot: &Snapshot) -> Result<(), KbError> {
        let batch = self.next_batch;
        for id in snapshot.reads() {
            let Some(e) = Arc::make_mut(&mut self.live).get_mut(&id) else { continue };
            if e.last_read_at >= snapshot.clock() {
                continue;
            }
            e.last_read_at = snapshot.clock();
            let (score, last_read_at) = (e.score, e.last_read_at);
            self.append(KbRecord::Refresh { id, score, last_read_at, round: self.clock, batch })?;
        }
        self.append(KbRecord::Round { clock: self.clock })
    }

    pub fn header(&self) -> KbHeader {
        KbHeader::new(self.config)
    }

    pub fn hash_function(&self) -> &'static str {
        HASH_FUNCTION
    }
}
