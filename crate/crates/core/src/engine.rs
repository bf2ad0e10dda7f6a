//! The reference price-time priority matching process.
//!
//! [`RestingBook`] keeps both sides ordered by competitiveness so the best
//! resident is at the front of its map. The free functions
//! ([`process_instruction`], [`match_ask`], ...) are pure wrappers that
//! validate their input, build a book from the given residents and run a
//! single step.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Instruction, Order, OrderDomain, OrderId, Price, Quantity, Timestamp, Transaction,
};
use crate::properties::{is_structured, StructureViolation};

/// Why a `(residents, instruction)` pair is not a legal input.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IllegalInput {
    #[error("resident bid {bid_id} and ask {ask_id} are tradable")]
    Matchable { bid_id: OrderId, ask_id: OrderId },
    #[error("order id {0} is not unique")]
    DuplicateId(OrderId),
    #[error("timestamp {0} is not unique")]
    DuplicateTimestamp(Timestamp),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("illegal input: {0}")]
    Illegal(#[from] IllegalInput),
    #[error("order book is not structured: {0}")]
    NotStructured(StructureViolation),
    #[error("illegal input at step {index}: {source}")]
    IllegalStep { index: usize, source: IllegalInput },
}

/// Residents after one step and the matching that step produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutput {
    pub resident_bids: Vec<Order>,
    pub resident_asks: Vec<Order>,
    pub matching: Vec<Transaction>,
}

impl StepOutput {
    pub fn residents(&self) -> OrderDomain {
        OrderDomain::new(self.resident_bids.clone(), self.resident_asks.clone())
    }
}

/// Something with the signature of a matching process.
pub trait Process {
    fn step(
        &self,
        bids: &[Order],
        asks: &[Order],
        instruction: &Instruction,
    ) -> Result<StepOutput, IllegalInput>;
}

/// The reference process.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceProcess;

impl Process for ReferenceProcess {
    fn step(
        &self,
        bids: &[Order],
        asks: &[Order],
        instruction: &Instruction,
    ) -> Result<StepOutput, IllegalInput> {
        process_instruction(bids, asks, instruction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Bid,
    Ask,
}

type BidKey = (Reverse<Price>, Timestamp);
type AskKey = (Price, Timestamp);

/// Non-matchable, admissible resident orders.
#[derive(Debug, Clone, Default)]
pub struct RestingBook {
    bids: BTreeMap<BidKey, Order>,
    asks: BTreeMap<AskKey, Order>,
    index: HashMap<OrderId, (Side, Price, Timestamp)>,
    timestamps: HashSet<Timestamp>,
}

impl RestingBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a book from residents, checking that they are admissible and
    /// not matchable.
    pub fn from_residents(bids: &[Order], asks: &[Order]) -> Result<Self, IllegalInput> {
        let mut book = Self::new();
        for b in bids {
            book.check_fresh(b)?;
            book.insert(Side::Bid, *b);
        }
        for a in asks {
            book.check_fresh(a)?;
            book.insert(Side::Ask, *a);
        }
        if let (Some(b), Some(a)) = (book.best_bid(), book.best_ask()) {
            if b.price() >= a.price() {
                return Err(IllegalInput::Matchable {
                    bid_id: b.id(),
                    ask_id: a.id(),
                });
            }
        }
        Ok(book)
    }

    pub fn best_bid(&self) -> Option<&Order> {
        self.bids.values().next()
    }

    pub fn best_ask(&self) -> Option<&Order> {
        self.asks.values().next()
    }

    /// Resident bids, most competitive first.
    pub fn bids(&self) -> impl Iterator<Item = &Order> {
        self.bids.values()
    }

    /// Resident asks, most competitive first.
    pub fn asks(&self) -> impl Iterator<Item = &Order> {
        self.asks.values()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, id: OrderId) -> Option<&Order> {
        let &(side, price, ts) = self.index.get(&id)?;
        match side {
            Side::Bid => self.bids.get(&(Reverse(price), ts)),
            Side::Ask => self.asks.get(&(price, ts)),
        }
    }

    pub fn snapshot(&self) -> OrderDomain {
        OrderDomain::new(
            self.bids().copied().collect(),
            self.asks().copied().collect(),
        )
    }

    fn check_fresh(&self, order: &Order) -> Result<(), IllegalInput> {
        if self.index.contains_key(&order.id()) {
            return Err(IllegalInput::DuplicateId(order.id()));
        }
        if self.timestamps.contains(&order.timestamp()) {
            return Err(IllegalInput::DuplicateTimestamp(order.timestamp()));
        }
        Ok(())
    }

    fn insert(&mut self, side: Side, order: Order) {
        let (price, ts) = (order.price(), order.timestamp());
        let fresh = match side {
            Side::Bid => self.bids.insert((Reverse(price), ts), order).is_none(),
            Side::Ask => self.asks.insert((price, ts), order).is_none(),
        };
        // distinct timestamps rule out equal keys
        assert!(fresh, "competitiveness tie among residents at ts {ts}");
        self.index.insert(order.id(), (side, price, ts));
        self.timestamps.insert(ts);
    }

    fn forget(&mut self, order: &Order) {
        self.index.remove(&order.id());
        self.timestamps.remove(&order.timestamp());
    }

    fn remove(&mut self, id: OrderId) -> Option<Order> {
        let (side, price, ts) = self.index.remove(&id)?;
        self.timestamps.remove(&ts);
        match side {
            Side::Bid => self.bids.remove(&(Reverse(price), ts)),
            Side::Ask => self.asks.remove(&(price, ts)),
        }
    }

    /// Runs one instruction against the residents and returns its matching.
    /// The book is left untouched when the input is illegal.
    pub fn apply(&mut self, instruction: &Instruction) -> Result<Vec<Transaction>, IllegalInput> {
        match instruction {
            Instruction::Buy(bid) => {
                self.check_fresh(bid)?;
                Ok(self.match_bid(*bid))
            }
            Instruction::Sell(ask) => {
                self.check_fresh(ask)?;
                Ok(self.match_ask(*ask))
            }
            Instruction::Del { id, .. } => {
                self.remove(*id);
                Ok(Vec::new())
            }
        }
    }

    fn match_ask(&mut self, ask: Order) -> Vec<Transaction> {
        let mut matching = Vec::new();
        let mut remaining = ask.qty();
        while let Some(mut entry) = self.bids.first_entry() {
            let bid = *entry.get();
            if bid.price() < ask.price() {
                break;
            }
            let traded = trade_step(bid, &mut remaining, &mut matching, |q| {
                Transaction::new(bid.id(), ask.id(), q)
            });
            match traded {
                Fill::Consumed => {
                    entry.remove();
                    self.forget(&bid);
                }
                Fill::Reduced(rest) => {
                    *entry.get_mut() = rest;
                }
            }
            if remaining == 0 {
                return matching;
            }
        }
        let rest = ask
            .with_qty(remaining)
            .expect("remaining ask quantity is positive");
        self.insert(Side::Ask, rest);
        matching
    }

    fn match_bid(&mut self, bid: Order) -> Vec<Transaction> {
        let mut matching = Vec::new();
        let mut remaining = bid.qty();
        while let Some(mut entry) = self.asks.first_entry() {
            let ask = *entry.get();
            if bid.price() < ask.price() {
                break;
            }
            let traded = trade_step(ask, &mut remaining, &mut matching, |q| {
                Transaction::new(bid.id(), ask.id(), q)
            });
            match traded {
                Fill::Consumed => {
                    entry.remove();
                    self.forget(&ask);
                }
                Fill::Reduced(rest) => {
                    *entry.get_mut() = rest;
                }
            }
            if remaining == 0 {
                return matching;
            }
        }
        let rest = bid
            .with_qty(remaining)
            .expect("remaining bid quantity is positive");
        self.insert(Side::Bid, rest);
        matching
    }
}

enum Fill {
    Consumed,
    Reduced(Order),
}

/// Trades the incoming order's `remaining` quantity against `resident`:
/// equal quantities consume both, a larger resident is reduced, a smaller
/// resident is consumed and the incoming order carries on.
fn trade_step(
    resident: Order,
    remaining: &mut Quantity,
    matching: &mut Vec<Transaction>,
    make: impl Fn(Quantity) -> Result<Transaction, crate::domain::DomainError>,
) -> Fill {
    let q = resident.qty().min(*remaining);
    matching.push(make(q).expect("traded quantity is positive"));
    *remaining -= q;
    match resident.with_qty(resident.qty() - q) {
        Some(rest) => Fill::Reduced(rest),
        None => Fill::Consumed,
    }
}

/// The effective order domain after `instruction` is absorbed.
pub fn absorb(bids: &[Order], asks: &[Order], instruction: &Instruction) -> OrderDomain {
    match instruction {
        Instruction::Del { id, .. } => OrderDomain::new(
            bids.iter().filter(|b| b.id() != *id).copied().collect(),
            asks.iter().filter(|a| a.id() != *id).copied().collect(),
        ),
        Instruction::Buy(b) => {
            let mut bids = bids.to_vec();
            bids.push(*b);
            OrderDomain::new(bids, asks.to_vec())
        }
        Instruction::Sell(a) => {
            let mut asks = asks.to_vec();
            asks.push(*a);
            OrderDomain::new(bids.to_vec(), asks)
        }
    }
}

fn output(book: &RestingBook, matching: Vec<Transaction>) -> StepOutput {
    StepOutput {
        resident_bids: book.bids().copied().collect(),
        resident_asks: book.asks().copied().collect(),
        matching,
    }
}

/// Incoming ask against resident bids.
pub fn match_ask(bids: &[Order], asks: &[Order], ask: &Order) -> Result<StepOutput, IllegalInput> {
    let mut book = RestingBook::from_residents(bids, asks)?;
    book.check_fresh(ask)?;
    let m = book.match_ask(*ask);
    Ok(output(&book, m))
}

/// Incoming bid against resident asks.
pub fn match_bid(bids: &[Order], asks: &[Order], bid: &Order) -> Result<StepOutput, IllegalInput> {
    let mut book = RestingBook::from_residents(bids, asks)?;
    book.check_fresh(bid)?;
    let m = book.match_bid(*bid);
    Ok(output(&book, m))
}

/// Removes every resident with `id`; the matching is empty.
pub fn del_order(bids: &[Order], asks: &[Order], id: OrderId) -> Result<StepOutput, IllegalInput> {
    if let Some((b, a)) = crate::domain::tradable_pair_in(bids, asks) {
        return Err(IllegalInput::Matchable {
            bid_id: b.id(),
            ask_id: a.id(),
        });
    }
    let kept = absorb(bids, asks, &Instruction::Del { id, timestamp: 0 });
    let book = RestingBook::from_residents(&kept.bids, &kept.asks)?;
    Ok(output(&book, Vec::new()))
}

/// One step of the reference process on a legal input.
pub fn process_instruction(
    bids: &[Order],
    asks: &[Order],
    instruction: &Instruction,
) -> Result<StepOutput, IllegalInput> {
    match instruction {
        Instruction::Buy(b) => match_bid(bids, asks, b),
        Instruction::Sell(a) => match_ask(bids, asks, a),
        Instruction::Del { id, .. } => del_order(bids, asks, *id),
    }
}

/// Streams the reference process over a book, one matching per
/// instruction. Only per-step legality is enforced; callers that need a
/// structured book check it first.
pub struct Replay<'a> {
    instructions: &'a [Instruction],
    next: usize,
    book: RestingBook,
    halted: bool,
}

impl<'a> Replay<'a> {
    pub fn new(instructions: &'a [Instruction]) -> Self {
        Self {
            instructions,
            next: 0,
            book: RestingBook::new(),
            halted: false,
        }
    }

    /// Residents after the last processed step.
    pub fn book(&self) -> &RestingBook {
        &self.book
    }

    /// Index of the next instruction to process.
    pub fn position(&self) -> usize {
        self.next
    }
}

impl Iterator for Replay<'_> {
    type Item = Result<Vec<Transaction>, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.halted {
            return None;
        }
        let instruction = self.instructions.get(self.next)?;
        let index = self.next;
        self.next += 1;
        Some(self.book.apply(instruction).map_err(|source| {
            self.halted = true;
            EngineError::IllegalStep { index, source }
        }))
    }
}

/// Output of the reference process at time `k` on a structured book:
/// `k == 0` or `k > len` gives the empty output, otherwise the output of
/// instruction `k - 1`.
pub fn iterated(book: &[Instruction], k: usize) -> Result<StepOutput, EngineError> {
    is_structured(book).map_err(EngineError::NotStructured)?;
    if k == 0 || k > book.len() {
        return Ok(StepOutput::default());
    }
    let mut replay = Replay::new(&book[..k]);
    let mut last = Vec::new();
    for step in replay.by_ref() {
        last = step?;
    }
    Ok(output(replay.book(), last))
}

/// Every step's output of the reference process on a structured book.
/// `run_book(book)[k] == iterated(book, k + 1)`.
pub fn run_book(book: &[Instruction]) -> Result<Vec<StepOutput>, EngineError> {
    is_structured(book).map_err(EngineError::NotStructured)?;
    let mut replay = Replay::new(book);
    let mut out = Vec::with_capacity(book.len());
    while let Some(step) = replay.next() {
        let m = step?;
        out.push(output(replay.book(), m));
    }
    Ok(out)
}

/// `iterated` for an arbitrary process, driven through its slice interface.
pub fn iterated_with<P: Process>(
    process: &P,
    book: &[Instruction],
    k: usize,
) -> Result<StepOutput, EngineError> {
    is_structured(book).map_err(EngineError::NotStructured)?;
    if k == 0 || k > book.len() {
        return Ok(StepOutput::default());
    }
    let mut state = StepOutput::default();
    for (index, instruction) in book[..k].iter().enumerate() {
        state = process
            .step(&state.resident_bids, &state.resident_asks, instruction)
            .map_err(|source| EngineError::IllegalStep { index, source })?;
    }
    Ok(state)
}

/// `run_book` for an arbitrary process.
pub fn run_book_with<P: Process>(
    process: &P,
    book: &[Instruction],
) -> Result<Vec<StepOutput>, EngineError> {
    is_structured(book).map_err(EngineError::NotStructured)?;
    let mut out: Vec<StepOutput> = Vec::with_capacity(book.len());
    let empty = StepOutput::default();
    for (index, instruction) in book.iter().enumerate() {
        let prev = out.last().unwrap_or(&empty);
        let next = process
            .step(&prev.resident_bids, &prev.resident_asks, instruction)
            .map_err(|source| EngineError::IllegalStep { index, source })?;
        out.push(next);
    }
    Ok(out)
}
