//! Orders, instructions, transactions and the algebra over them.
//!
//! Every quantity is a positive `u64`; a zero-quantity order or
//! transaction cannot be constructed. Sums are checked and report
//! [`DomainError::Overflow`] instead of wrapping.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type OrderId = u64;
pub type Timestamp = u64;
pub type Quantity = u64;
pub type Price = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("quantity must be positive (order/transaction id {0})")]
    ZeroQuantity(OrderId),
    #[error("quantity sum overflows u64")]
    Overflow,
    #[error("transaction references unknown order id {0}")]
    UnknownId(OrderId),
    #[error("order {id}: subtrahend does not match minuend ({reason})")]
    AttributeMismatch { id: OrderId, reason: &'static str },
    #[error("order {id}: cannot subtract {subtrahend} from {minuend}")]
    OverSubtraction {
        id: OrderId,
        minuend: Quantity,
        subtrahend: Quantity,
    },
    #[error("duplicate order id {0} in collection")]
    DuplicateId(OrderId),
}

/// A bid or an ask: `(id, timestamp, qty, price)` with `qty > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Order {
    id: OrderId,
    timestamp: Timestamp,
    qty: Quantity,
    price: Price,
}

impl Order {
    pub fn new(
        id: OrderId,
        timestamp: Timestamp,
        qty: Quantity,
        price: Price,
    ) -> Result<Self, DomainError> {
        if qty == 0 {
            return Err(DomainError::ZeroQuantity(id));
        }
        Ok(Self {
            id,
            timestamp,
            qty,
            price,
        })
    }

    pub fn id(&self) -> OrderId {
        self.id
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn qty(&self) -> Quantity {
        self.qty
    }

    pub fn price(&self) -> Price {
        self.price
    }

    /// Same order with a different quantity; `None` when `qty` is zero.
    pub fn with_qty(&self, qty: Quantity) -> Option<Self> {
        (qty > 0).then_some(Self { qty, ..*self })
    }

    pub(crate) fn with_timestamp(&self, timestamp: Timestamp) -> Self {
        Self { timestamp, ..*self }
    }

    /// Attributes other than quantity agree.
    pub fn same_identity(&self, other: &Order) -> bool {
        self.id == other.id && self.timestamp == other.timestamp && self.price == other.price
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "#{} (ts {}, qty {}, price {})",
            self.id, self.timestamp, self.qty, self.price
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Buy,
    Sell,
    Del,
}

/// One entry of an order book.
///
/// A delete only needs the id of its target; its own timestamp is still
/// carried so that book ordering can be validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Buy(Order),
    Sell(Order),
    Del { id: OrderId, timestamp: Timestamp },
}

impl Instruction {
    pub fn command(&self) -> Command {
        match self {
            Instruction::Buy(_) => Command::Buy,
            Instruction::Sell(_) => Command::Sell,
            Instruction::Del { .. } => Command::Del,
        }
    }

    pub fn id(&self) -> OrderId {
        match self {
            Instruction::Buy(o) | Instruction::Sell(o) => o.id(),
            Instruction::Del { id, .. } => *id,
        }
    }

    pub fn timestamp(&self) -> Timestamp {
        match self {
            Instruction::Buy(o) | Instruction::Sell(o) => o.timestamp(),
            Instruction::Del { timestamp, .. } => *timestamp,
        }
    }

    pub fn order(&self) -> Option<&Order> {
        match self {
            Instruction::Buy(o) | Instruction::Sell(o) => Some(o),
            Instruction::Del { .. } => None,
        }
    }

    pub(crate) fn with_timestamp(&self, timestamp: Timestamp) -> Self {
        match self {
            Instruction::Buy(o) => Instruction::Buy(o.with_timestamp(timestamp)),
            Instruction::Sell(o) => Instruction::Sell(o.with_timestamp(timestamp)),
            Instruction::Del { id, .. } => Instruction::Del { id: *id, timestamp },
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Buy(o) => write!(f, "Buy {o}"),
            Instruction::Sell(o) => write!(f, "Sell {o}"),
            Instruction::Del { id, timestamp } => write!(f, "Del #{id} (ts {timestamp})"),
        }
    }
}

pub type OrderBook = Vec<Instruction>;

/// A trade of `qty` units between bid `bid_id` and ask `ask_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transaction {
    bid_id: OrderId,
    ask_id: OrderId,
    qty: Quantity,
}

impl Transaction {
    pub fn new(bid_id: OrderId, ask_id: OrderId, qty: Quantity) -> Result<Self, DomainError> {
        if qty == 0 {
            return Err(DomainError::ZeroQuantity(bid_id));
        }
        Ok(Self {
            bid_id,
            ask_id,
            qty,
        })
    }

    pub fn bid_id(&self) -> OrderId {
        self.bid_id
    }

    pub fn ask_id(&self) -> OrderId {
        self.ask_id
    }

    pub fn qty(&self) -> Quantity {
        self.qty
    }

    pub fn pair(&self) -> (OrderId, OrderId) {
        (self.bid_id, self.ask_id)
    }

    pub fn with_qty(&self, qty: Quantity) -> Option<Self> {
        (qty > 0).then_some(Self { qty, ..*self })
    }

    pub fn with_bid_id(&self, bid_id: OrderId) -> Self {
        Self { bid_id, ..*self }
    }

    /// Price and time at which the trade can be reported: the ask's price and
    /// the later of the two timestamps. Not part of any comparison.
    pub fn print_terms(&self, bid: &Order, ask: &Order) -> (Price, Timestamp) {
        (ask.price(), bid.timestamp().max(ask.timestamp()))
    }
}

impl fmt::Display for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(bid {}, ask {}, qty {})",
            self.bid_id, self.ask_id, self.qty
        )
    }
}

/// Resident or absorbed bids and asks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderDomain {
    pub bids: Vec<Order>,
    pub asks: Vec<Order>,
}

impl OrderDomain {
    pub fn new(bids: Vec<Order>, asks: Vec<Order>) -> Self {
        Self { bids, asks }
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.bids.iter().chain(self.asks.iter())
    }

    pub fn find_bid(&self, id: OrderId) -> Option<&Order> {
        self.bids.iter().find(|b| b.id() == id)
    }

    pub fn find_ask(&self, id: OrderId) -> Option<&Order> {
        self.asks.iter().find(|a| a.id() == id)
    }
}

pub fn more_competitive_bid(b1: &Order, b2: &Order) -> bool {
    b1.price > b2.price || (b1.price == b2.price && b1.timestamp < b2.timestamp)
}

pub fn more_competitive_ask(a1: &Order, a2: &Order) -> bool {
    a1.price < a2.price || (a1.price == a2.price && a1.timestamp < a2.timestamp)
}

/// Total order for bids, most competitive first.
pub fn bid_priority(b1: &Order, b2: &Order) -> Ordering {
    b2.price
        .cmp(&b1.price)
        .then(b1.timestamp.cmp(&b2.timestamp))
}

/// Total order for asks, most competitive first.
pub fn ask_priority(a1: &Order, a2: &Order) -> Ordering {
    a1.price
        .cmp(&a2.price)
        .then(a1.timestamp.cmp(&a2.timestamp))
}

pub fn tradable(bid: &Order, ask: &Order) -> bool {
    bid.price >= ask.price
}

/// Some bid in `d` is tradable with some ask in `d`.
pub fn matchable(d: &OrderDomain) -> bool {
    match (
        d.bids.iter().map(Order::price).max(),
        d.asks.iter().map(Order::price).min(),
    ) {
        (Some(best_bid), Some(best_ask)) => best_bid >= best_ask,
        _ => false,
    }
}

/// First tradable `(bid, ask)` pair in `d`, if any.
pub fn tradable_pair(d: &OrderDomain) -> Option<(&Order, &Order)> {
    tradable_pair_in(&d.bids, &d.asks)
}

pub(crate) fn tradable_pair_in<'a>(
    bids: &'a [Order],
    asks: &'a [Order],
) -> Option<(&'a Order, &'a Order)> {
    let bid = bids.iter().max_by_key(|b| b.price())?;
    let ask = asks.iter().min_by_key(|a| a.price())?;
    tradable(bid, ask).then_some((bid, ask))
}

fn checked_sum<I: IntoIterator<Item = Quantity>>(iter: I) -> Result<Quantity, DomainError> {
    iter.into_iter().try_fold(0u64, |acc, q| {
        acc.checked_add(q).ok_or(DomainError::Overflow)
    })
}

pub fn qty_bid(m: &[Transaction], id: OrderId) -> Result<Quantity, DomainError> {
    checked_sum(m.iter().filter(|t| t.bid_id == id).map(|t| t.qty))
}

pub fn qty_ask(m: &[Transaction], id: OrderId) -> Result<Quantity, DomainError> {
    checked_sum(m.iter().filter(|t| t.ask_id == id).map(|t| t.qty))
}

pub fn vol(m: &[Transaction]) -> Result<Quantity, DomainError> {
    checked_sum(m.iter().map(|t| t.qty))
}

/// Per-id traded totals on one side.
pub(crate) fn side_totals(
    m: &[Transaction],
    side_id: impl Fn(&Transaction) -> OrderId,
) -> Result<HashMap<OrderId, Quantity>, DomainError> {
    let mut totals: HashMap<OrderId, Quantity> = HashMap::new();
    for t in m {
        let slot = totals.entry(side_id(t)).or_insert(0);
        *slot = slot.checked_add(t.qty).ok_or(DomainError::Overflow)?;
    }
    Ok(totals)
}

pub fn transaction_valid(t: &Transaction, d: &OrderDomain) -> bool {
    match (d.find_bid(t.bid_id), d.find_ask(t.ask_id)) {
        (Some(b), Some(a)) => tradable(b, a) && t.qty <= b.qty.min(a.qty),
        _ => false,
    }
}

/// `m` is a matching over the admissible domain `d`: every transaction is
/// valid and no order trades more than its quantity.
pub fn is_matching(m: &[Transaction], d: &OrderDomain) -> bool {
    if !m.iter().all(|t| transaction_valid(t, d)) {
        return false;
    }
    let (Ok(bid_totals), Ok(ask_totals)) = (
        side_totals(m, Transaction::bid_id),
        side_totals(m, Transaction::ask_id),
    ) else {
        return false;
    };
    d.bids
        .iter()
        .all(|b| bid_totals.get(&b.id).copied().unwrap_or(0) <= b.qty)
        && d.asks
            .iter()
            .all(|a| ask_totals.get(&a.id).copied().unwrap_or(0) <= a.qty)
}

/// One transaction per `(bid_id, ask_id)` pair carrying the pair total,
/// ordered by ascending pair.
pub fn canonical_form(m: &[Transaction]) -> Result<Vec<Transaction>, DomainError> {
    let mut totals: BTreeMap<(OrderId, OrderId), Quantity> = BTreeMap::new();
    for t in m {
        let slot = totals.entry(t.pair()).or_insert(0);
        *slot = slot.checked_add(t.qty).ok_or(DomainError::Overflow)?;
    }
    Ok(totals
        .into_iter()
        .map(|((bid_id, ask_id), qty)| Transaction {
            bid_id,
            ask_id,
            qty,
        })
        .collect())
}

fn traded_side(
    m: &[Transaction],
    orders: &[Order],
    side_id: impl Fn(&Transaction) -> OrderId,
) -> Result<Vec<Order>, DomainError> {
    let totals = side_totals(m, side_id)?;
    let mut seen = 0usize;
    let mut out = Vec::with_capacity(totals.len());
    for o in orders {
        if let Some(&q) = totals.get(&o.id) {
            seen += 1;
            out.push(Order { qty: q, ..*o });
        }
    }
    if seen != totals.len() {
        let known: std::collections::HashSet<_> = orders.iter().map(|o| o.id).collect();
        let missing = totals
            .keys()
            .copied()
            .filter(|id| !known.contains(id))
            .min()
            .unwrap_or_default();
        return Err(if known.len() != orders.len() {
            DomainError::DuplicateId(duplicate_id(orders).unwrap_or(missing))
        } else {
            DomainError::UnknownId(missing)
        });
    }
    Ok(out)
}

fn duplicate_id(orders: &[Order]) -> Option<OrderId> {
    let mut seen = std::collections::HashSet::new();
    orders.iter().map(|o| o.id).find(|id| !seen.insert(*id))
}

/// Bids of `b` that trade in `m`, each with its traded total as quantity.
pub fn traded_bids(m: &[Transaction], b: &[Order]) -> Result<Vec<Order>, DomainError> {
    traded_side(m, b, Transaction::bid_id)
}

/// Asks of `a` that trade in `m`, each with its traded total as quantity.
pub fn traded_asks(m: &[Transaction], a: &[Order]) -> Result<Vec<Order>, DomainError> {
    traded_side(m, a, Transaction::ask_id)
}

/// Multiset difference with quantity as multiplicity. Orders whose
/// remainder is zero are dropped.
pub fn multiset_diff(s1: &[Order], s2: &[Order]) -> Result<Vec<Order>, DomainError> {
    if let Some(id) = duplicate_id(s1).or_else(|| duplicate_id(s2)) {
        return Err(DomainError::DuplicateId(id));
    }
    let minus: HashMap<OrderId, &Order> = s2.iter().map(|o| (o.id, o)).collect();
    let mut used = 0usize;
    let mut out = Vec::with_capacity(s1.len());
    for o in s1 {
        match minus.get(&o.id) {
            None => out.push(*o),
            Some(sub) => {
                used += 1;
                if sub.timestamp != o.timestamp {
                    return Err(DomainError::AttributeMismatch {
                        id: o.id,
                        reason: "timestamp",
                    });
                }
                if sub.price != o.price {
                    return Err(DomainError::AttributeMismatch {
                        id: o.id,
                        reason: "price",
                    });
                }
                let rest = o
                    .qty
                    .checked_sub(sub.qty)
                    .ok_or(DomainError::OverSubtraction {
                        id: o.id,
                        minuend: o.qty,
                        subtrahend: sub.qty,
                    })?;
                out.extend(o.with_qty(rest));
            }
        }
    }
    if used != minus.len() {
        let known: std::collections::HashSet<_> = s1.iter().map(|o| o.id).collect();
        let id = s2
            .iter()
            .map(|o| o.id)
            .find(|id| !known.contains(id))
            .unwrap_or_default();
        return Err(DomainError::UnknownId(id));
    }
    Ok(out)
}

/// Normal form of an order collection for set comparison: sorted by id.
pub fn normalized(orders: &[Order]) -> Vec<Order> {
    let mut v = orders.to_vec();
    v.sort_unstable_by_key(|o| (o.id, o.timestamp, o.price, o.qty));
    v
}

/// Two order collections hold the same `(id, timestamp, qty, price)` tuples.
pub fn same_orders(a: &[Order], b: &[Order]) -> bool {
    a.len() == b.len() && normalized(a) == normalized(b)
}
