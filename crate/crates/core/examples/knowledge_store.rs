//! Threshold-gated commits, retention-based eviction and snapshot
//! isolation in the knowledge store.

use serde_json::json;
use warroom::canonical::ContentHash;
use warroom::knowledge::{retention, KbConfig, KnowledgeBase};
use warroom::model::{EntryDraft, EntryKey, EntryKind, RoleId};
use warroom::workspace::{Grant, MissionId, TokenIssuer};

fn draft(n: u64, score: f64) -> EntryDraft {
    EntryDraft {
        key: EntryKey::Pattern(ContentHash::digest(&(n % 2).to_be_bytes())),
        payload: json!({ "pattern": n }),
        score,
        prov_hash: ContentHash::digest(&n.to_be_bytes()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = KbConfig { capacity: 3, lambda: 0.2, tau_prom: 0.6 };
    let mut kb = KnowledgeBase::in_memory(cfg);
    let mut issuer = TokenIssuer::new(MissionId(1));
    let validator = issuer.issue(RoleId::Validator, Grant::ValidatorWriteKb);
    let general = issuer.issue(RoleId::General, Grant::WriteOwnPartition);

    kb.begin_round();
    println!("general commit: {:?}", kb.commit_batch(&general, vec![draft(0, 0.9)]).unwrap_err());
    println!("below τ: {:?}", kb.commit_batch(&validator, vec![draft(0, 0.9), draft(1, 0.4)]).unwrap_err());
    println!("store after rejected batch: {} entries", kb.len());

    for round in 0..4u64 {
        kb.begin_round();
        let snap = kb.snapshot();
        if let Some(first) = snap.entries().next() {
            snap.mark_read(first.id);
        }
        let r = kb.commit_batch(&validator, vec![draft(10 + round, 0.6 + 0.1 * round as f64)])?;
        println!(
            "clock {}: accepted {:?} evicted {:?}; open snapshot still sees {} entries",
            kb.clock(),
            r.accepted,
            r.evicted,
            snap.len()
        );
        kb.end_round(&snap)?;
    }
    for e in kb.live() {
        println!("  {} score {:.2} read@{} retention {:.4}", e.id, e.score, e.last_read_at, retention(e, kb.clock(), cfg.lambda));
    }
    let snap = kb.snapshot();
    let key = EntryKey::Pattern(ContentHash::digest(&0u64.to_be_bytes()));
    println!("retrieve pattern key 0: {} hit(s)", snap.retrieve(EntryKind::Pattern, &key)?.len());
    println!("{} tombstoned", kb.tombstoned().count());
    Ok(())
}
