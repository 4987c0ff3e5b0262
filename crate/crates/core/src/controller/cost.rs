//! Per-round cost ledger: `C_r = Σ_X T_X + k·(T_S + T_G) + C_tool`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{RoleId, Stage};

/// Ledger row label; executor instances share one row.
pub fn role_class(role: RoleId) -> &'static str {
    match role {
        RoleId::Detective => "D",
        RoleId::Strategist => "S",
        RoleId::General => "G",
        RoleId::Executor(_) => "E",
        RoleId::Validator => "V",
        RoleId::Controller => "ctrl",
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub enum CostEvent {
    Backend { role: RoleId, stage: Stage, tokens: u64 },
    Tool { cost: u64 },
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub k: u32,
    /// T_X
    pub tokens: BTreeMap<String, u64>,
    /// L_X
    pub calls: BTreeMap<String, u64>,
    pub tool_cost: u64,
    /// Tokens actually spent by S and G during the handshake.
    pub handshake_tokens: u64,
    pub total: u64,
}

impl CostLedger {
    pub fn new(k: u32) -> Self {
        CostLedger { k, ..Default::default() }
    }

    fn t(&self, class: &str) -> u64 {
        self.tokens.get(class).copied().unwrap_or(0)
    }

    /// Upper bound on handshake tokens used in the total.
    pub fn handshake_bound(&self) -> u64 {
        u64::from(self.k) * (self.t("S") + self.t("G"))
    }

    /// Total recomputed from the parts.
    pub fn recompute(&self) -> u64 {
        self.tokens.values().sum::<u64>() + self.handshake_bound() + self.tool_cost
    }

    pub fn accumulate(&mut self, event: &CostEvent) {
        match *event {
            CostEvent::Backend { role, stage, tokens } => {
                let c = role_class(role).to_owned();
                *self.tokens.entry(c.clone()).or_default() += tokens;
                *self.calls.entry(c).or_default() += 1;
                if stage == Stage::S4 && matches!(role, RoleId::Strategist | RoleId::General) {
                    self.handshake_tokens += tokens;
                }
            }
            CostEvent::Tool { cost } => self.tool_cost += cost,
        }
        self.total = self.recompute();
        debug_assert!(self.identity_holds());
    }

    pub fn identity_holds(&self) -> bool {
        self.total == self.recompute() && self.handshake_tokens <= self.handshake_bound()
    }
}

/// Mission-level resource use against the budget.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Spent {
    pub tokens: u64,
    pub time_ms: u64,
    /// Maximum round risk so far.
    pub risk: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_is_zero() {
        assert_eq!(CostLedger::new(3).recompute(), 0);
    }

    #[test]
    fn formula_example() {
        let mut l = CostLedger::new(2);
        let ev = |role, tokens| CostEvent::Backend { role, stage: Stage::S2, tokens };
        for e in [
            ev(RoleId::Detective, 100),
            ev(RoleId::Strategist, 50),
            ev(RoleId::General, 50),
            ev(RoleId::Executor(0), 120),
            ev(RoleId::Executor(1), 80),
            ev(RoleId::Validator, 100),
            CostEvent::Tool { cost: 30 },
        ] {
            l.accumulate(&e);
            assert!(l.identity_holds());
        }
        assert_eq!(l.total, 730);
        assert_eq!(l.calls["E"], 2);
    }

    #[test]
    fn shallow_handshake_stays_under_bound() {
        let mut l = CostLedger::new(3);
        l.accumulate(&CostEvent::Backend { role: RoleId::Strategist, stage: Stage::S3, tokens: 40 });
        l.accumulate(&CostEvent::Backend { role: RoleId::General, stage: Stage::S4, tokens: 20 });
        l.accumulate(&CostEvent::Backend { role: RoleId::Strategist, stage: Stage::S4, tokens: 10 });
        assert_eq!(l.handshake_tokens, 30);
        assert_eq!(l.handshake_bound(), 3 * 70);
        assert!(l.identity_holds());
    }
}
