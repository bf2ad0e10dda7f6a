//! Independent references used to test the engine and the checker.
//!
//! * [`max_matching_volume`] finds the largest matching volume over a small
//!   domain by exhaustive search.
//! * [`AltProcess`] is a second matching process written without the
//!   engine's ordered containers: every fill is a fresh linear scan.
//! * [`generate_book`] and [`random_legal_input`] produce random inputs.
//! * [`mutate_trade_log`] corrupts a trade log in one targeted way.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`
//! (`rand_chacha` 0.9), so a seed reproduces the same book everywhere.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    canonical_form, more_competitive_ask, more_competitive_bid, tradable, Instruction, Order,
    OrderBook, OrderDomain, OrderId, Quantity, Transaction,
};
use crate::engine::{IllegalInput, Process, StepOutput};
use crate::properties::legal_input;

pub const MAX_ORACLE_ORDERS_PER_SIDE: usize = 6;
pub const MAX_ORACLE_QTY: Quantity = 10;
/// Search nodes the volume oracle may visit before refusing.
pub const MAX_ORACLE_STATES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("domain exceeds oracle bounds ({0})")]
    SizeLimit(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(&'static str),
    #[error("trade log has nothing to mutate with {0:?}")]
    Unmutatable(Mutation),
}

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest `vol(M')` over all matchings `M'` over `d`.
///
/// Enumerates, bid by bid, every split of the bid's quantity across the
/// asks it can trade with, memoized on the remaining ask capacities. Every
/// matching has a canonical form with the same volume, and canonical forms
/// are exactly what this enumerates, so nothing is pruned.
pub fn max_matching_volume(d: &OrderDomain) -> Result<Quantity, OracleError> {
    if d.bids.len() > MAX_ORACLE_ORDERS_PER_SIDE || d.asks.len() > MAX_ORACLE_ORDERS_PER_SIDE {
        return Err(OracleError::SizeLimit(format!(
            "{} bids, {} asks; at most {MAX_ORACLE_ORDERS_PER_SIDE} per side",
            d.bids.len(),
            d.asks.len()
        )));
    }
    if let Some(o) = d.orders().find(|o| o.qty() > MAX_ORACLE_QTY) {
        return Err(OracleError::SizeLimit(format!(
            "order #{} has qty {}; at most {MAX_ORACLE_QTY}",
            o.id(),
            o.qty()
        )));
    }
    let mut search = VolumeSearch {
        bids: &d.bids,
        asks: &d.asks,
        memo: HashMap::new(),
        visited: 0,
    };
    let capacity: Vec<Quantity> = d.asks.iter().map(Order::qty).collect();
    search.best_from(0, &capacity)
}

struct VolumeSearch<'a> {
    bids: &'a [Order],
    asks: &'a [Order],
    memo: HashMap<(usize, Vec<Quantity>), Quantity>,
    visited: usize,
}

impl VolumeSearch<'_> {
    fn tick(&mut self) -> Result<(), OracleError> {
        self.visited += 1;
        if self.visited > MAX_ORACLE_STATES {
            return Err(OracleError::SizeLimit(format!(
                "more than {MAX_ORACLE_STATES} search states"
            )));
        }
        Ok(())
    }

    /// Best volume using bids `bid..` against the remaining ask capacities.
    fn best_from(&mut self, bid: usize, capacity: &[Quantity]) -> Result<Quantity, OracleError> {
        if bid == self.bids.len() {
            return Ok(0);
        }
        if let Some(&v) = self.memo.get(&(bid, capacity.to_vec())) {
            return Ok(v);
        }
        self.tick()?;
        let mut cap = capacity.to_vec();
        let best = self.split(bid, 0, self.bids[bid].qty(), &mut cap)?;
        self.memo.insert((bid, capacity.to_vec()), best);
        Ok(best)
    }

    /// Tries every quantity bid `bid` can give to ask `ask` and onwards.
    fn split(
        &mut self,
        bid: usize,
        ask: usize,
        left: Quantity,
        cap: &mut Vec<Quantity>,
    ) -> Result<Quantity, OracleError> {
        self.tick()?;
        if ask == self.asks.len() {
            let snapshot = cap.clone();
            return self.best_from(bid + 1, &snapshot);
        }
        let limit = if tradable(&self.bids[bid], &self.asks[ask]) {
            left.min(cap[ask])
        } else {
            0
        };
        let mut best = 0;
        for x in 0..=limit {
            cap[ask] -= x;
            let v = x + self.split(bid, ask + 1, left - x, cap)?;
            cap[ask] += x;
            best = best.max(v);
        }
        Ok(best)
    }
}

/// A second price-time priority process. Each fill rescans the opposite
/// side for its most competitive tradable order; residents keep their input
/// order rather than being sorted.
#[derive(Debug, Clone, Copy, Default)]
pub struct AltProcess;

impl Process for AltProcess {
    fn step(
        &self,
        bids: &[Order],
        asks: &[Order],
        instruction: &Instruction,
    ) -> Result<StepOutput, IllegalInput> {
        alt_process(bids, asks, instruction)
    }
}

pub fn alt_process(
    bids: &[Order],
    asks: &[Order],
    instruction: &Instruction,
) -> Result<StepOutput, IllegalInput> {
    legal_input(bids, asks, instruction)?;
    let mut bids = bids.to_vec();
    let mut asks = asks.to_vec();
    let mut matching = Vec::new();
    match instruction {
        Instruction::Del { id, .. } => {
            bids.retain(|b| b.id() != *id);
            asks.retain(|a| a.id() != *id);
        }
        Instruction::Buy(bid) => {
            let mut left = bid.qty();
            while left > 0 {
                let Some(i) = best_index(&asks, |a| tradable(bid, a), more_competitive_ask) else {
                    break;
                };
                let q = left.min(asks[i].qty());
                matching.push(Transaction::new(bid.id(), asks[i].id(), q).expect("q > 0"));
                left -= q;
                match asks[i].with_qty(asks[i].qty() - q) {
                    Some(rest) => asks[i] = rest,
                    None => {
                        asks.remove(i);
                    }
                }
            }
            bids.extend(bid.with_qty(left));
        }
        Instruction::Sell(ask) => {
            let mut left = ask.qty();
            while left > 0 {
                let Some(i) = best_index(&bids, |b| tradable(b, ask), more_competitive_bid) else {
                    break;
                };
                let q = left.min(bids[i].qty());
                matching.push(Transaction::new(bids[i].id(), ask.id(), q).expect("q > 0"));
                left -= q;
                match bids[i].with_qty(bids[i].qty() - q) {
                    Some(rest) => bids[i] = rest,
                    None => {
                        bids.remove(i);
                    }
                }
            }
            asks.extend(ask.with_qty(left));
        }
    }
    Ok(StepOutput {
        resident_bids: bids,
        resident_asks: asks,
        matching,
    })
}

fn best_index(
    orders: &[Order],
    eligible: impl Fn(&Order) -> bool,
    better: fn(&Order, &Order) -> bool,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in orders.iter().enumerate() {
        if !eligible(o) {
            continue;
        }
        if best.is_none_or(|b| better(o, &orders[b])) {
            best = Some(i);
        }
    }
    best
}

/// Parameters for [`generate_book`]. Sell probability is whatever the
/// delete and buy probabilities leave over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub num_instructions: usize,
    pub max_price: u64,
    pub max_qty: u64,
    pub del_probability: f64,
    pub buy_probability: f64,
    /// Chance that the instruction after a delete re-uses the deleted id.
    pub reuse_probability: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            num_instructions: 1000,
            max_price: 50,
            max_qty: 100,
            del_probability: 0.2,
            buy_probability: 0.4,
            reuse_probability: 0.05,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), OracleError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.max_price < 1 || self.max_qty < 1 {
            return Err(OracleError::InvalidParams(
                "max_price and max_qty must be at least 1",
            ));
        }
        if !unit(self.del_probability)
            || !unit(self.buy_probability)
            || !unit(self.reuse_probability)
        {
            return Err(OracleError::InvalidParams(
                "probabilities must lie in [0, 1]",
            ));
        }
        if self.del_probability + self.buy_probability > 1.0 {
            return Err(OracleError::InvalidParams(
                "delete and buy probabilities sum to more than 1",
            ));
        }
        Ok(())
    }
}

/// A random structured order book. Timestamps are `index + 1`; deletes pick
/// any previously issued id, live or not.
pub fn generate_book(p: &GenParams) -> Result<OrderBook, OracleError> {
    p.validate()?;
    let mut rng = rng(p.seed);
    let mut book = Vec::with_capacity(p.num_instructions);
    let mut issued: Vec<OrderId> = Vec::new();
    let mut next_id: OrderId = 1;
    let mut reuse: Option<OrderId> = None;
    let buy_share = if p.del_probability < 1.0 {
        p.buy_probability / (1.0 - p.del_probability)
    } else {
        0.5
    };
    for i in 0..p.num_instructions {
        let timestamp = i as u64 + 1;
        let roll: f64 = rng.random();
        let id = match reuse.take() {
            Some(id) => id,
            None if roll < p.del_probability && !issued.is_empty() => {
                let id = issued[rng.random_range(0..issued.len())];
                book.push(Instruction::Del { id, timestamp });
                if rng.random_bool(p.reuse_probability) {
                    reuse = Some(id);
                }
                continue;
            }
            None => {
                next_id += 1;
                issued.push(next_id - 1);
                next_id - 1
            }
        };
        let order = Order::new(
            id,
            timestamp,
            rng.random_range(1..=p.max_qty),
            rng.random_range(1..=p.max_price),
        )
        .expect("qty >= 1");
        let buy = if roll >= p.del_probability {
            roll < p.del_probability + p.buy_probability
        } else {
            rng.random_bool(buy_share.clamp(0.0, 1.0))
        };
        book.push(if buy {
            Instruction::Buy(order)
        } else {
            Instruction::Sell(order)
        });
    }
    Ok(book)
}

/// Bounds for [`random_legal_input`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegalInputBounds {
    pub max_residents_per_side: usize,
    pub max_qty: Quantity,
    pub max_price: u64,
}

/// Random non-matchable residents plus an instruction whose absorbed domain
/// is admissible. Ids and timestamps are distinct but not ordered.
pub fn random_legal_input(
    rng: &mut Rng64,
    bounds: &LegalInputBounds,
) -> (Vec<Order>, Vec<Order>, Instruction) {
    let n_bids = rng.random_range(0..=bounds.max_residents_per_side);
    let n_asks = rng.random_range(0..=bounds.max_residents_per_side);
    let total = n_bids + n_asks + 1;
    let mut ids: Vec<OrderId> = (1..=3 * total as u64).collect();
    ids.shuffle(rng);
    let mut stamps: Vec<u64> = (1..=3 * total as u64).collect();
    stamps.shuffle(rng);
    let split = rng.random_range(1..=bounds.max_price.max(1));
    let make = |k: usize, price: u64, rng: &mut Rng64| {
        Order::new(
            ids[k],
            stamps[k],
            rng.random_range(1..=bounds.max_qty),
            price,
        )
        .expect("qty >= 1")
    };
    let bids: Vec<Order> = (0..n_bids)
        .map(|k| {
            let price = rng.random_range(0..split);
            make(k, price, rng)
        })
        .collect();
    let asks: Vec<Order> = (0..n_asks)
        .map(|k| {
            let price = rng.random_range(split..=bounds.max_price.max(split));
            make(n_bids + k, price, rng)
        })
        .collect();
    let roll: f64 = rng.random();
    let instruction = if roll < 0.1 {
        let resident: Vec<OrderId> = bids.iter().chain(&asks).map(Order::id).collect();
        let id = if !resident.is_empty() && rng.random_bool(0.7) {
            resident[rng.random_range(0..resident.len())]
        } else {
            ids[total - 1]
        };
        Instruction::Del {
            id,
            timestamp: stamps[total - 1],
        }
    } else {
        let price = rng.random_range(0..=bounds.max_price);
        let order = make(total - 1, price, rng);
        if roll < 0.55 {
            Instruction::Buy(order)
        } else {
            Instruction::Sell(order)
        }
    };
    (bids, asks, instruction)
}

/// One targeted corruption of a trade log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Remove one transaction.
    Drop,
    /// Increase one transaction's quantity by one.
    QtyPlus,
    /// Decrease one transaction's quantity by one (only where it stays >= 1).
    QtyMinus,
    /// Exchange the bid ids of two transactions in the same step.
    SwapBids,
    /// Move one transaction to the neighbouring step.
    Move,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::Drop,
        Mutation::QtyPlus,
        Mutation::QtyMinus,
        Mutation::SwapBids,
        Mutation::Move,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mutation::Drop => "drop",
            Mutation::QtyPlus => "qty-plus",
            Mutation::QtyMinus => "qty-minus",
            Mutation::SwapBids => "swap-bids",
            Mutation::Move => "move",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Applies `kind` at a seeded random site. Returns the mutated log and the
/// earliest step it altered. Swaps are only chosen where they change the
/// step's canonical form, so every mutation is observable.
pub fn mutate_trade_log(
    steps: &[Vec<Transaction>],
    kind: Mutation,
    seed: u64,
) -> Result<(Vec<Vec<Transaction>>, usize), OracleError> {
    let mut rng = rng(seed);
    let sites: Vec<(usize, usize)> = steps
        .iter()
        .enumerate()
        .flat_map(|(k, m)| (0..m.len()).map(move |i| (k, i)))
        .collect();
    let mut log = steps.to_vec();
    let pick = |candidates: Vec<(usize, usize)>, rng: &mut Rng64| {
        (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
    };
    let none = || OracleError::Unmutatable(kind);
    match kind {
        Mutation::Drop => {
            let (k, i) = pick(sites, &mut rng).ok_or_else(none)?;
            log[k].remove(i);
            Ok((log, k))
        }
        Mutation::QtyPlus | Mutation::QtyMinus => {
            let candidates = sites
                .into_iter()
                .filter(|&(k, i)| match kind {
                    Mutation::QtyPlus => steps[k][i].qty() < Quantity::MAX,
                    _ => steps[k][i].qty() >= 2,
                })
                .collect();
            let (k, i) = pick(candidates, &mut rng).ok_or_else(none)?;
            let t = log[k][i];
            let q = if kind == Mutation::QtyPlus {
                t.qty() + 1
            } else {
                t.qty() - 1
            };
            log[k][i] = t.with_qty(q).expect("q >= 1");
            Ok((log, k))
        }
        Mutation::SwapBids => {
            let mut candidates = Vec::new();
            for (k, m) in steps.iter().enumerate() {
                let before = canonical_form(m).ok();
                for i in 0..m.len() {
                    for j in i + 1..m.len() {
                        if m[i].bid_id() == m[j].bid_id() {
                            continue;
                        }
                        if before != canonical_form(&swapped(m, i, j)).ok() {
                            candidates.push((k, i * m.len() + j));
                        }
                    }
                }
            }
            let (k, code) = pick(candidates, &mut rng).ok_or_else(none)?;
            let n = steps[k].len();
            log[k] = swapped(&steps[k], code / n, code % n);
            Ok((log, k))
        }
        Mutation::Move => {
            if steps.len() < 2 {
                return Err(none());
            }
            let (k, i) = pick(sites, &mut rng).ok_or_else(none)?;
            let target = if k + 1 < steps.len() { k + 1 } else { k - 1 };
            let t = log[k].remove(i);
            log[target].push(t);
            Ok((log, k.min(target)))
        }
    }
}

fn swapped(m: &[Transaction], i: usize, j: usize) -> Vec<Transaction> {
    let mut out = m.to_vec();
    let (bi, bj) = (m[i].bid_id(), m[j].bid_id());
    out[i] = m[i].with_bid_id(bj);
    out[j] = m[j].with_bid_id(bi);
    out
}
