//! Reduction of raw transaction events to long-term supply links.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::network::RawEdge;

/// Minimum number of transactions for a link to count as long-term.
pub const MIN_EVENTS: usize = 2;
/// Minimum span in days between the first and the last transaction.
pub const MIN_SPAN_DAYS: i64 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionEvent {
    pub supplier_id: String,
    pub buyer_id: String,
    pub date: NaiveDate,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterOutcome {
    /// Kept links with their summed volumes, ordered by `(supplier, buyer)`.
    pub links: Vec<RawEdge>,
    pub pairs_total: usize,
    pub volume_total: f64,
    pub volume_kept: f64,
}

impl FilterOutcome {
    pub fn kept_link_fraction(&self) -> f64 {
        if self.pairs_total == 0 {
            0.0
        } else {
            self.links.len() as f64 / self.pairs_total as f64
        }
    }

    pub fn kept_volume_fraction(&self) -> f64 {
        if self.volume_total > 0.0 {
            self.volume_kept / self.volume_total
        } else {
            0.0
        }
    }
}

struct PairStats {
    events: usize,
    first: NaiveDate,
    last: NaiveDate,
    volume: f64,
}

/// Keeps every supplier-buyer pair with at least [`MIN_EVENTS`] events whose
/// first and last dates lie at least [`MIN_SPAN_DAYS`] apart; the link
/// weight is the pair's total volume.
pub fn filter_long_term_links(events: &[TransactionEvent]) -> FilterOutcome {
    let mut pairs: BTreeMap<(&str, &str), PairStats> = BTreeMap::new();
    for e in events {
        pairs
            .entry((&e.supplier_id, &e.buyer_id))
            .and_modify(|p| {
                p.events += 1;
                p.first = p.first.min(e.date);
                p.last = p.last.max(e.date);
                p.volume += e.amount;
            })
            .or_insert(PairStats {
                events: 1,
                first: e.date,
                last: e.date,
                volume: e.amount,
            });
    }

    let mut out = FilterOutcome {
        pairs_total: pairs.len(),
        ..Default::default()
    };
    for ((s, b), p) in pairs {
        out.volume_total += p.volume;
        if p.events >= MIN_EVENTS && (p.last - p.first).num_days() >= MIN_SPAN_DAYS {
            out.volume_kept += p.volume;
            out.links.push(RawEdge::new(s, b, p.volume));
        }
    }
    out
}
