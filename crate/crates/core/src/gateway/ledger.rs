use std::sync::Mutex;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use super::{CallPhase, Usage};

/// Prices in currency units per one million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(with = "rust_decimal::serde::str")]
    pub prompt_per_million: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub completion_per_million: Decimal,
}

impl PriceTable {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> Decimal {
        let million = Decimal::from(1_000_000u32);
        (Decimal::from(prompt_tokens) * self.prompt_per_million
            + Decimal::from(completion_tokens) * self.completion_per_million)
            / million
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub case_id: String,
    pub agent_id: String,
    pub phase: CallPhase,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(with = "rust_decimal::serde::str")]
    pub cost: Decimal,
}

/// Append-only usage record. Appends are serialized, so one ledger can be
/// shared by concurrent agent calls.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<UsageEntry>>,
    price_table: PriceTable,
}

impl UsageLedger {
    pub fn new(price_table: PriceTable) -> Self {
        Self {
            entries: Mutex::new(Vec::new()),
            price_table,
        }
    }

    pub fn price_table(&self) -> PriceTable {
        self.price_table
    }

    pub fn record(&self, case_id: &str, agent_id: &str, phase: CallPhase, usage: Usage) {
        self.entries.lock().expect("ledger lock").push(UsageEntry {
            case_id: case_id.to_string(),
            agent_id: agent_id.to_string(),
            phase,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        });
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    /// Entries belonging to one case, in append order.
    pub fn slice(&self, case_id: &str) -> Vec<UsageEntry> {
        self.entries
            .lock()
            .expect("ledger lock")
            .iter()
            .filter(|e| e.case_id == case_id)
            .cloned()
            .collect()
    }

    pub fn totals(&self) -> LedgerTotals {
        totals_of(&self.entries(), &self.price_table)
    }
}

/// Sums tokens and prices them exactly; round only for display.
pub fn totals_of(entries: &[UsageEntry], price_table: &PriceTable) -> LedgerTotals {
    let prompt_tokens = entries.iter().map(|e| e.prompt_tokens).sum();
    let completion_tokens = entries.iter().map(|e| e.completion_tokens).sum();
    LedgerTotals {
        prompt_tokens,
        completion_tokens,
        cost: price_table.cost(prompt_tokens, completion_tokens),
    }
}

/// Cost rounded half-even to cents, e.g. `$7.08`.
pub fn format_cost(cost: Decimal) -> String {
    let rounded = cost.round_dp_with_strategy(2, RoundingStrategy::MidpointNearestEven);
    format!("${rounded:.2}")
}
