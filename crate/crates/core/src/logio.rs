//! Order-book and trade-book CSV files, and the rewrite of exchange
//! instruction types into buy/sell/delete primitives.
//!
//! Order book rows are `kind,id,timestamp,qty,price[,extra]` where `extra`
//! is the trigger timestamp of a `STOP_*` row or the untraded quantity of
//! an `UPDATE_*` row. Absent values are empty fields. Trade book rows are
//! `step_timestamp,bid_id,ask_id,qty`. A header line is recognised by a
//! non-numeric second field and skipped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Instruction, Order, OrderBook, OrderId, Price, Quantity, Timestamp, Transaction,
};

/// Price given to market buys. Explicit limit prices may not use it.
pub const MARKET_BUY_PRICE: Price = Price::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawKind {
    Buy,
    Sell,
    Delete,
    UpdateBuy,
    UpdateSell,
    MarketBuy,
    MarketSell,
    IocBuy,
    IocSell,
    StopBuy,
    StopSell,
}

impl RawKind {
    const NAMES: [(RawKind, &'static str); 11] = [
        (RawKind::Buy, "BUY"),
        (RawKind::Sell, "SELL"),
        (RawKind::Delete, "DELETE"),
        (RawKind::UpdateBuy, "UPDATE_BUY"),
        (RawKind::UpdateSell, "UPDATE_SELL"),
        (RawKind::MarketBuy, "MARKET_BUY"),
        (RawKind::MarketSell, "MARKET_SELL"),
        (RawKind::IocBuy, "IOC_BUY"),
        (RawKind::IocSell, "IOC_SELL"),
        (RawKind::StopBuy, "STOP_BUY"),
        (RawKind::StopSell, "STOP_SELL"),
    ];

    pub fn as_str(&self) -> &'static str {
        Self::NAMES
            .iter()
            .find(|(k, _)| k == self)
            .map(|(_, n)| *n)
            .expect("every kind is named")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::NAMES.iter().find(|(_, n)| *n == s).map(|(k, _)| *k)
    }

    fn is_buy(&self) -> bool {
        matches!(
            self,
            RawKind::Buy
                | RawKind::UpdateBuy
                | RawKind::MarketBuy
                | RawKind::IocBuy
                | RawKind::StopBuy
        )
    }

    fn has_price(&self) -> bool {
        !matches!(
            self,
            RawKind::Delete | RawKind::MarketBuy | RawKind::MarketSell
        )
    }

    fn has_extra(&self) -> bool {
        matches!(
            self,
            RawKind::UpdateBuy | RawKind::UpdateSell | RawKind::StopBuy | RawKind::StopSell
        )
    }
}

impl fmt::Display for RawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One order-book row as the exchange logged it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstruction {
    pub kind: RawKind,
    pub id: OrderId,
    pub timestamp: Timestamp,
    pub qty: Option<Quantity>,
    pub price: Option<Price>,
    pub trigger_timestamp: Option<Timestamp>,
    pub untraded_qty: Option<Quantity>,
    /// 1-based line in the source file; 0 when not parsed from a file.
    pub line: u64,
}

impl RawInstruction {
    pub fn from_instruction(instruction: &Instruction) -> Self {
        let (kind, qty, price) = match instruction {
            Instruction::Buy(o) => (RawKind::Buy, Some(o.qty()), Some(o.price())),
            Instruction::Sell(o) => (RawKind::Sell, Some(o.qty()), Some(o.price())),
            Instruction::Del { .. } => (RawKind::Delete, None, None),
        };
        Self {
            kind,
            id: instruction.id(),
            timestamp: instruction.timestamp(),
            qty,
            price,
            trigger_timestamp: None,
            untraded_qty: None,
            line: 0,
        }
    }

    fn extra(&self) -> Option<u64> {
        match self.kind {
            RawKind::StopBuy | RawKind::StopSell => self.trigger_timestamp,
            RawKind::UpdateBuy | RawKind::UpdateSell => self.untraded_qty,
            _ => None,
        }
    }
}

/// A trade-book row: the trade happened while processing the instruction
/// with timestamp `step_timestamp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub step_timestamp: Timestamp,
    pub bid_id: OrderId,
    pub ask_id: OrderId,
    pub qty: Quantity,
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}: {message}")]
pub struct LineError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{}", join_lines(.0))]
    Parse(Vec<LineError>),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Preprocess { line: u64, message: String },
    #[error("line {line}: trade at step timestamp {step_timestamp} matches no instruction")]
    OrphanTrade {
        line: u64,
        step_timestamp: Timestamp,
    },
}

fn join_lines(errors: &[LineError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

/// A non-fatal finding during preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    record
        .get(1)
        .is_some_and(|f| !f.is_empty() && f.parse::<u64>().is_err())
}

fn field(record: &csv::StringRecord, i: usize) -> Option<&str> {
    record.get(i).filter(|f| !f.is_empty())
}

fn number(record: &csv::StringRecord, i: usize, name: &str) -> Result<Option<u64>, String> {
    field(record, i)
        .map(|f| {
            f.parse::<u64>()
                .map_err(|_| format!("{name} `{f}` is not a non-negative integer"))
        })
        .transpose()
}

fn required(record: &csv::StringRecord, i: usize, name: &str) -> Result<u64, String> {
    number(record, i, name)?.ok_or_else(|| format!("missing {name}"))
}

/// Runs `parse_row` over every record. Strict mode stops at the first bad
/// line; lenient mode collects every error.
fn parse_rows<R: Read, T>(
    input: R,
    lenient: bool,
    mut parse_row: impl FnMut(&csv::StringRecord, u64) -> Result<T, String>,
) -> Result<Vec<T>, LogError> {
    let mut reader = csv_reader(input);
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(LogError::Io(io::Error::other(e.to_string())));
                }
                errors.push(LineError {
                    line,
                    message: e.to_string(),
                });
                if !lenient {
                    break;
                }
                continue;
            }
        };
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        if n == 0 && looks_like_header(&record) {
            continue;
        }
        match parse_row(&record, line) {
            Ok(row) => rows.push(row),
            Err(message) => {
                errors.push(LineError { line, message });
                if !lenient {
                    break;
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(LogError::Parse(errors))
    }
}

fn parse_order_row(record: &csv::StringRecord, line: u64) -> Result<RawInstruction, String> {
    if record.len() < 5 || record.len() > 6 {
        return Err(format!("expected 5 or 6 fields, found {}", record.len()));
    }
    let name = record.get(0).unwrap_or_default();
    let kind = RawKind::parse(name).ok_or_else(|| {
        if name.starts_with("ICEBERG") {
            format!("iceberg orders are not supported (`{name}`)")
        } else {
            format!("unknown instruction kind `{name}`")
        }
    })?;
    let id = required(record, 1, "id")?;
    let timestamp = required(record, 2, "timestamp")?;
    let qty = number(record, 3, "qty")?;
    let price = number(record, 4, "price")?;
    let extra = number(record, 5, "extra field")?;
    match (kind, qty) {
        (RawKind::Delete, Some(_)) => return Err("DELETE takes no qty".into()),
        (RawKind::Delete, None) => {}
        (_, None) => return Err(format!("missing qty for {kind}")),
        (_, Some(0)) => return Err("qty must be positive".into()),
        _ => {}
    }
    match (kind.has_price(), price) {
        (true, None) => return Err(format!("missing price for {kind}")),
        (false, Some(_)) => return Err(format!("{kind} takes no price")),
        (true, Some(MARKET_BUY_PRICE)) => {
            return Err(format!(
                "price {MARKET_BUY_PRICE} is reserved for market buys"
            ))
        }
        _ => {}
    }
    if extra.is_some() && !kind.has_extra() {
        return Err(format!("{kind} takes no sixth field"));
    }
    let (trigger_timestamp, untraded_qty) = match kind {
        RawKind::StopBuy | RawKind::StopSell => (
            Some(extra.ok_or_else(|| format!("missing trigger timestamp for {kind}"))?),
            None,
        ),
        RawKind::UpdateBuy | RawKind::UpdateSell => (None, extra),
        _ => (None, None),
    };
    Ok(RawInstruction {
        kind,
        id,
        timestamp,
        qty,
        price,
        trigger_timestamp,
        untraded_qty,
        line,
    })
}

pub fn parse_order_book<R: Read>(input: R, lenient: bool) -> Result<Vec<RawInstruction>, LogError> {
    parse_rows(input, lenient, parse_order_row)
}

fn parse_trade_row(record: &csv::StringRecord, line: u64) -> Result<TradeRecord, String> {
    if record.len() != 4 {
        return Err(format!("expected 4 fields, found {}", record.len()));
    }
    let qty = required(record, 3, "qty")?;
    if qty == 0 {
        return Err("qty must be positive".into());
    }
    Ok(TradeRecord {
        step_timestamp: required(record, 0, "step timestamp")?,
        bid_id: required(record, 1, "bid id")?,
        ask_id: required(record, 2, "ask id")?,
        qty,
        line,
    })
}

pub fn parse_trade_book<R: Read>(input: R, lenient: bool) -> Result<Vec<TradeRecord>, LogError> {
    parse_rows(input, lenient, parse_trade_row)
}

fn opt(v: Option<u64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_order_book<W: Write>(mut out: W, rows: &[RawInstruction]) -> io::Result<()> {
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.kind,
            r.id,
            r.timestamp,
            opt(r.qty),
            opt(r.price)
        )?;
        if let Some(extra) = r.extra() {
            write!(out, ",{extra}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes primitive instructions as BUY/SELL/DELETE rows.
pub fn write_instructions<W: Write>(out: W, book: &[Instruction]) -> io::Result<()> {
    let rows: Vec<RawInstruction> = book.iter().map(RawInstruction::from_instruction).collect();
    write_order_book(out, &rows)
}

pub fn write_trade_book<W: Write>(mut out: W, rows: &[TradeRecord]) -> io::Result<()> {
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.step_timestamp, r.bid_id, r.ask_id, r.qty
        )?;
    }
    Ok(())
}

/// Trade rows for per-step matchings; `step_timestamps[k]` labels step `k`.
pub fn trade_records(
    steps: &[Vec<Transaction>],
    step_timestamps: &[Timestamp],
) -> Vec<TradeRecord> {
    steps
        .iter()
        .zip(step_timestamps)
        .flat_map(|(m, &ts)| {
            m.iter().map(move |t| TradeRecord {
                step_timestamp: ts,
                bid_id: t.bid_id(),
                ask_id: t.ask_id(),
                qty: t.qty(),
                line: 0,
            })
        })
        .collect()
}

/// Where a primitive came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub raw_timestamp: Timestamp,
    pub line: u64,
}

/// A replay should find `id` resting with `untraded_qty` just before step
/// `step` (the delete half of an update).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UntradedCheck {
    pub step: usize,
    pub id: OrderId,
    pub untraded_qty: Quantity,
    pub line: u64,
}

/// A primitive order book ready for replay, with the bookkeeping needed to
/// line trade records up with its steps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedBook {
    pub book: OrderBook,
    pub origins: Vec<Origin>,
    /// Raw timestamp -> index of the primitive that produces its trades.
    pub trade_steps: HashMap<Timestamp, usize>,
    pub warnings: Vec<Warning>,
    pub untraded_checks: Vec<UntradedCheck>,
}

impl PreparedBook {
    pub fn step_timestamps(&self) -> Vec<Timestamp> {
        self.origins.iter().map(|o| o.raw_timestamp).collect()
    }
}

fn instruction_for(kind: RawKind, order: Order) -> Instruction {
    if kind.is_buy() {
        Instruction::Buy(order)
    } else {
        Instruction::Sell(order)
    }
}

fn preprocess_error(line: u64, message: impl Into<String>) -> LogError {
    LogError::Preprocess {
        line,
        message: message.into(),
    }
}

/// Takes a book that already consists of BUY/SELL/DELETE rows as is,
/// keeping its timestamps.
pub fn primitives_only(raw: &[RawInstruction]) -> Result<PreparedBook, LogError> {
    let mut prepared = PreparedBook::default();
    for (index, r) in raw.iter().enumerate() {
        let instruction = match r.kind {
            RawKind::Delete => Instruction::Del {
                id: r.id,
                timestamp: r.timestamp,
            },
            RawKind::Buy | RawKind::Sell => instruction_for(r.kind, raw_order(r, r.timestamp)?),
            other => {
                return Err(preprocess_error(
                    r.line,
                    format!("{other} needs preprocessing; only BUY, SELL and DELETE are primitive"),
                ))
            }
        };
        prepared.book.push(instruction);
        prepared.origins.push(Origin {
            raw_timestamp: r.timestamp,
            line: r.line,
        });
        if prepared.trade_steps.insert(r.timestamp, index).is_some() {
            prepared.warnings.push(Warning {
                line: r.line,
                message: format!(
                    "timestamp {} repeats; trades attach to the last row",
                    r.timestamp
                ),
            });
        }
    }
    Ok(prepared)
}

fn raw_order(r: &RawInstruction, timestamp: Timestamp) -> Result<Order, LogError> {
    let price = match r.kind {
        RawKind::MarketBuy => MARKET_BUY_PRICE,
        RawKind::MarketSell => 0,
        _ => r
            .price
            .ok_or_else(|| preprocess_error(r.line, "missing price"))?,
    };
    let qty = r
        .qty
        .ok_or_else(|| preprocess_error(r.line, "missing qty"))?;
    Order::new(r.id, timestamp, qty, price).map_err(|e| preprocess_error(r.line, e.to_string()))
}

/// Last stated attributes of an order that may still rest.
struct Placed {
    buy: bool,
    qty: Quantity,
    price: Price,
    /// Output index whose timestamp the order's priority uses.
    priority: usize,
}

/// Rewrites exchange instruction types into primitives and renumbers
/// timestamps by final position.
///
/// * `UPDATE_*` becomes a delete followed by the new order. A same-price
///   quantity decrease keeps the original order's priority timestamp.
/// * `MARKET_SELL` gets price 0, `MARKET_BUY` gets [`MARKET_BUY_PRICE`].
/// * `IOC_*` becomes the order followed by its delete.
/// * `STOP_*` moves to its trigger time, after the row that carries that
///   timestamp.
///
/// With `strict`, updates and deletes of never-issued ids are errors rather
/// than warnings.
pub fn preprocess(raw: &[RawInstruction], strict: bool) -> Result<PreparedBook, LogError> {
    for pair in raw.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(preprocess_error(
                pair[1].line,
                format!(
                    "timestamp {} does not increase (previous {})",
                    pair[1].timestamp, pair[0].timestamp
                ),
            ));
        }
    }
    for r in raw {
        if let Some(trigger) = r.trigger_timestamp {
            if trigger < r.timestamp {
                return Err(preprocess_error(
                    r.line,
                    format!(
                        "trigger timestamp {trigger} precedes placement at {}",
                        r.timestamp
                    ),
                ));
            }
        }
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| {
        let r = &raw[i];
        match r.trigger_timestamp {
            Some(trigger) => (trigger, 1u8, i),
            None => (r.timestamp, 0u8, i),
        }
    });

    let mut out: Vec<(Instruction, Option<usize>)> = Vec::with_capacity(raw.len() * 2);
    let mut prepared = PreparedBook::default();
    let mut issued: HashSet<OrderId> = HashSet::new();
    let mut placed: HashMap<OrderId, Placed> = HashMap::new();
    let mut just_deleted: Option<OrderId> = None;

    for &i in &order {
        let r = &raw[i];
        let reuse_allowed = just_deleted.take() == Some(r.id);
        let origin = Origin {
            raw_timestamp: r.timestamp,
            line: r.line,
        };
        let mut emit =
            |instruction: Instruction, priority_from: Option<usize>, p: &mut PreparedBook| {
                out.push((instruction, priority_from));
                p.origins.push(origin);
                out.len() - 1
            };
        let unknown = |what: &str| format!("{what} of id {} that was never placed", r.id);
        match r.kind {
            RawKind::Delete => {
                if !issued.contains(&r.id) {
                    if strict {
                        return Err(preprocess_error(r.line, unknown("DELETE")));
                    }
                    prepared.warnings.push(Warning {
                        line: r.line,
                        message: unknown("DELETE"),
                    });
                }
                let step = emit(
                    Instruction::Del {
                        id: r.id,
                        timestamp: 0,
                    },
                    None,
                    &mut prepared,
                );
                prepared.trade_steps.insert(r.timestamp, step);
                placed.remove(&r.id);
                just_deleted = Some(r.id);
            }
            RawKind::UpdateBuy | RawKind::UpdateSell => {
                if !issued.contains(&r.id) {
                    if strict {
                        return Err(preprocess_error(r.line, unknown("UPDATE")));
                    }
                    prepared.warnings.push(Warning {
                        line: r.line,
                        message: unknown("UPDATE"),
                    });
                }
                let del = emit(
                    Instruction::Del {
                        id: r.id,
                        timestamp: 0,
                    },
                    None,
                    &mut prepared,
                );
                if let Some(untraded_qty) = r.untraded_qty {
                    prepared.untraded_checks.push(UntradedCheck {
                        step: del,
                        id: r.id,
                        untraded_qty,
                        line: r.line,
                    });
                }
                let new = raw_order(r, 0)?;
                let retained = placed.get(&r.id).and_then(|p| {
                    (p.buy == r.kind.is_buy() && p.price == new.price() && new.qty() < p.qty)
                        .then_some(p.priority)
                });
                let step = emit(instruction_for(r.kind, new), retained, &mut prepared);
                prepared.trade_steps.insert(r.timestamp, step);
                issued.insert(r.id);
                placed.insert(
                    r.id,
                    Placed {
                        buy: r.kind.is_buy(),
                        qty: new.qty(),
                        price: new.price(),
                        priority: retained.unwrap_or(step),
                    },
                );
            }
            RawKind::IocBuy | RawKind::IocSell => {
                let o = raw_order(r, 0)?;
                let step = emit(instruction_for(r.kind, o), None, &mut prepared);
                emit(
                    Instruction::Del {
                        id: r.id,
                        timestamp: 0,
                    },
                    None,
                    &mut prepared,
                );
                prepared.trade_steps.insert(r.timestamp, step);
                if !reuse_allowed {
                    note_reuse(&mut prepared, &issued, r);
                }
                issued.insert(r.id);
                placed.remove(&r.id);
            }
            RawKind::Buy
            | RawKind::Sell
            | RawKind::MarketBuy
            | RawKind::MarketSell
            | RawKind::StopBuy
            | RawKind::StopSell => {
                let o = raw_order(r, 0)?;
                let step = emit(instruction_for(r.kind, o), None, &mut prepared);
                prepared.trade_steps.insert(r.timestamp, step);
                if !reuse_allowed {
                    note_reuse(&mut prepared, &issued, r);
                }
                issued.insert(r.id);
                placed.insert(
                    r.id,
                    Placed {
                        buy: r.kind.is_buy(),
                        qty: o.qty(),
                        price: o.price(),
                        priority: step,
                    },
                );
            }
        }
    }

    assert!(
        out.len() <= 2 * raw.len(),
        "preprocessing produced {} primitives from {} rows",
        out.len(),
        raw.len()
    );
    prepared.book = out
        .iter()
        .enumerate()
        .map(|(i, (instruction, priority_from))| {
            let ts = priority_from.unwrap_or(i) as Timestamp + 1;
            instruction.with_timestamp(ts)
        })
        .collect();
    Ok(prepared)
}

fn note_reuse(prepared: &mut PreparedBook, issued: &HashSet<OrderId>, r: &RawInstruction) {
    if issued.contains(&r.id) {
        prepared.warnings.push(Warning {
            line: r.line,
            message: format!("id {} was already used by an earlier order", r.id),
        });
    }
}

/// Splits trade records into one transaction list per step of `prepared`.
pub fn group_trades_by_step(
    records: &[TradeRecord],
    prepared: &PreparedBook,
) -> Result<Vec<Vec<Transaction>>, LogError> {
    let mut steps = vec![Vec::new(); prepared.book.len()];
    for r in records {
        let step = *prepared
            .trade_steps
            .get(&r.step_timestamp)
            .ok_or(LogError::OrphanTrade {
                line: r.line,
                step_timestamp: r.step_timestamp,
            })?;
        let t = Transaction::new(r.bid_id, r.ask_id, r.qty).map_err(|e| LogError::Preprocess {
            line: r.line,
            message: e.to_string(),
        })?;
        steps[step].push(t);
    }
    Ok(steps)
}
