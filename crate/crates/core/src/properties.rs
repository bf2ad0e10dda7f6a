//! Executable predicates over a single process step and over order books.
//!
//! Each property check returns a [`PropertyReport`] listing every violation
//! with a witness naming the offending orders, so a failing step can be
//! diagnosed without re-running anything.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    is_matching, matchable, more_competitive_ask, more_competitive_bid, multiset_diff, same_orders,
    side_totals, traded_asks, traded_bids, Command, Instruction, Order, OrderDomain, OrderId,
    Transaction,
};
use crate::engine::{absorb, IllegalInput, StepOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    PositiveSpread,
    PriceTimePriority,
    Conservation,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::PositiveSpread => "positive bid-ask spread",
            Property::PriceTimePriority => "price-time priority",
            Property::Conservation => "conservation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    pub witness: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub violations: Vec<Violation>,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, property: Property, witness: impl Into<String>) {
        self.violations.push(Violation {
            property,
            witness: witness.into(),
        });
    }

    pub fn merge(&mut self, other: PropertyReport) {
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.holds() {
            return f.write_str("all properties hold");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.property, v.witness)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropertyError {
    #[error("matching references order id {0} outside the domain")]
    UnknownId(OrderId),
    #[error("illegal input: {0}")]
    Illegal(#[from] IllegalInput),
}

/// Why a book is not structured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureReason {
    /// Timestamp not strictly greater than the previous instruction's.
    Timestamps,
    /// Non-delete id seen before and not directly after its own delete.
    ReusedId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("instruction {index}: {}", match .reason {
    StructureReason::Timestamps => "timestamp does not increase",
    StructureReason::ReusedId => "id reused without an immediately preceding delete",
})]
pub struct StructureViolation {
    pub index: usize,
    pub reason: StructureReason,
}

/// Ids and timestamps are distinct across bids and asks together.
pub fn is_admissible(d: &OrderDomain) -> bool {
    let mut ids = HashSet::new();
    let mut timestamps = HashSet::new();
    d.orders()
        .all(|o| ids.insert(o.id()) && timestamps.insert(o.timestamp()))
}

pub fn is_legal_input(bids: &[Order], asks: &[Order], instruction: &Instruction) -> bool {
    legal_input(bids, asks, instruction).is_ok()
}

/// Same as [`is_legal_input`] but names the violated condition.
pub fn legal_input(
    bids: &[Order],
    asks: &[Order],
    instruction: &Instruction,
) -> Result<(), IllegalInput> {
    if let Some((b, a)) = crate::domain::tradable_pair_in(bids, asks) {
        return Err(IllegalInput::Matchable {
            bid_id: b.id(),
            ask_id: a.id(),
        });
    }
    // the absorbed domain, bids before asks, without copying it
    let mut absorbed: Vec<&Order> = Vec::with_capacity(bids.len() + asks.len() + 1);
    match instruction {
        Instruction::Buy(b) => absorbed.extend(bids.iter().chain([b]).chain(asks)),
        Instruction::Sell(a) => absorbed.extend(bids.iter().chain(asks).chain([a])),
        Instruction::Del { id, .. } => {
            absorbed.extend(bids.iter().chain(asks).filter(|o| o.id() != *id))
        }
    }
    let mut ids = HashSet::with_capacity(absorbed.len());
    let mut timestamps = HashSet::with_capacity(absorbed.len());
    for o in absorbed {
        if !ids.insert(o.id()) {
            return Err(IllegalInput::DuplicateId(o.id()));
        }
        if !timestamps.insert(o.timestamp()) {
            return Err(IllegalInput::DuplicateTimestamp(o.timestamp()));
        }
    }
    Ok(())
}

/// Timestamps strictly increase, and every non-delete id is fresh or
/// repeats the id of a delete placed immediately before it.
pub fn is_structured(book: &[Instruction]) -> Result<(), StructureViolation> {
    let mut seen: HashSet<OrderId> = HashSet::with_capacity(book.len());
    for (index, instr) in book.iter().enumerate() {
        if index > 0 && instr.timestamp() <= book[index - 1].timestamp() {
            return Err(StructureViolation {
                index,
                reason: StructureReason::Timestamps,
            });
        }
        let id = instr.id();
        if instr.command() != Command::Del && seen.contains(&id) {
            let after_own_delete = index > 0
                && book[index - 1].command() == Command::Del
                && book[index - 1].id() == id;
            if !after_own_delete {
                return Err(StructureViolation {
                    index,
                    reason: StructureReason::ReusedId,
                });
            }
        }
        seen.insert(id);
    }
    Ok(())
}

/// Resident bids and asks are not matchable.
pub fn check_positive_spread(bids: &[Order], asks: &[Order]) -> PropertyReport {
    let mut report = PropertyReport::default();
    let domain = OrderDomain::new(bids.to_vec(), asks.to_vec());
    if matchable(&domain) {
        let (b, a) = crate::domain::tradable_pair(&domain).expect("matchable domain");
        report.push(
            Property::PositiveSpread,
            format!(
                "resident bid #{} (price {}) and ask #{} (price {}) are tradable",
                b.id(),
                b.price(),
                a.id(),
                a.price()
            ),
        );
    }
    report
}

/// If a less competitive order trades in `m`, every more competitive order
/// on its side is fully traded. Quantifies over the absorbed domain.
pub fn check_price_time_priority(
    bids: &[Order],
    asks: &[Order],
    m: &[Transaction],
) -> Result<PropertyReport, PropertyError> {
    for t in m {
        if !bids.iter().any(|b| b.id() == t.bid_id()) {
            return Err(PropertyError::UnknownId(t.bid_id()));
        }
        if !asks.iter().any(|a| a.id() == t.ask_id()) {
            return Err(PropertyError::UnknownId(t.ask_id()));
        }
    }
    let mut report = PropertyReport::default();
    let (Ok(bid_totals), Ok(ask_totals)) = (
        side_totals(m, Transaction::bid_id),
        side_totals(m, Transaction::ask_id),
    ) else {
        report.push(Property::PriceTimePriority, "traded totals overflow u64");
        return Ok(report);
    };
    side_priority(&mut report, "ask", asks, &ask_totals, more_competitive_ask);
    side_priority(&mut report, "bid", bids, &bid_totals, more_competitive_bid);
    Ok(report)
}

fn side_priority(
    report: &mut PropertyReport,
    side: &str,
    orders: &[Order],
    totals: &HashMap<OrderId, u64>,
    better: fn(&Order, &Order) -> bool,
) {
    for worse in orders.iter().filter(|o| totals.contains_key(&o.id())) {
        for best in orders {
            if !better(best, worse) {
                continue;
            }
            let traded = totals.get(&best.id()).copied().unwrap_or(0);
            if traded != best.qty() {
                report.push(
                    Property::PriceTimePriority,
                    format!(
                        "{side} #{} traded while more competitive {side} #{} traded {} of {}",
                        worse.id(),
                        best.id(),
                        traded,
                        best.qty()
                    ),
                );
            }
        }
    }
}

/// `m` is a matching over the absorbed domain and the residents are the
/// absorbed domain minus what traded.
pub fn check_conservation(
    absorbed_bids: &[Order],
    absorbed_asks: &[Order],
    resident_bids: &[Order],
    resident_asks: &[Order],
    m: &[Transaction],
) -> PropertyReport {
    let mut report = PropertyReport::default();
    let domain = OrderDomain::new(absorbed_bids.to_vec(), absorbed_asks.to_vec());
    if !is_matching(m, &domain) {
        let culprit = m
            .iter()
            .find(|t| !crate::domain::transaction_valid(t, &domain))
            .map(|t| format!("transaction {t} is not valid over the absorbed domain"))
            .unwrap_or_else(|| "some order trades more than its quantity".to_string());
        report.push(
            Property::Conservation,
            format!("(a) not a matching: {culprit}"),
        );
    }
    let expected_bids =
        traded_bids(m, absorbed_bids).and_then(|t| multiset_diff(absorbed_bids, &t));
    side_conservation(&mut report, "(b) bids", expected_bids, resident_bids);
    let expected_asks =
        traded_asks(m, absorbed_asks).and_then(|t| multiset_diff(absorbed_asks, &t));
    side_conservation(&mut report, "(c) asks", expected_asks, resident_asks);
    report
}

fn side_conservation(
    report: &mut PropertyReport,
    label: &str,
    expected: Result<Vec<Order>, crate::domain::DomainError>,
    actual: &[Order],
) {
    match expected {
        Err(e) => report.push(
            Property::Conservation,
            format!("{label}: residents cannot be derived: {e}"),
        ),
        Ok(expected) if !same_orders(&expected, actual) => {
            let exp: HashMap<OrderId, &Order> = expected.iter().map(|o| (o.id(), o)).collect();
            let act: HashMap<OrderId, &Order> = actual.iter().map(|o| (o.id(), o)).collect();
            let mut ids: Vec<OrderId> = exp.keys().chain(act.keys()).copied().collect();
            ids.sort_unstable();
            ids.dedup();
            let detail = ids
                .into_iter()
                .find_map(|id| match (exp.get(&id), act.get(&id)) {
                    (Some(e), None) => Some(format!("expected resident {e} is missing")),
                    (None, Some(a)) => Some(format!("unexpected resident {a}")),
                    (Some(e), Some(a)) if e != a => Some(format!("expected {e}, found {a}")),
                    _ => None,
                })
                .unwrap_or_else(|| "duplicate residents".to_string());
            report.push(Property::Conservation, format!("{label}: {detail}"));
        }
        Ok(_) => {}
    }
}

/// All three properties for one step of some process.
pub fn check_step(
    bids: &[Order],
    asks: &[Order],
    instruction: &Instruction,
    out: &StepOutput,
) -> Result<PropertyReport, PropertyError> {
    legal_input(bids, asks, instruction)?;
    let absorbed = absorb(bids, asks, instruction);
    let mut report = check_positive_spread(&out.resident_bids, &out.resident_asks);
    match check_price_time_priority(&absorbed.bids, &absorbed.asks, &out.matching) {
        Ok(r) => report.merge(r),
        Err(PropertyError::UnknownId(id)) => report.push(
            Property::PriceTimePriority,
            format!("matching references order id {id} outside the absorbed domain"),
        ),
        Err(e) => return Err(e),
    }
    report.merge(check_conservation(
        &absorbed.bids,
        &absorbed.asks,
        &out.resident_bids,
        &out.resident_asks,
        &out.matching,
    ));
    Ok(report)
}
