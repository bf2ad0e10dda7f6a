//! Continuous double auction: a price-time priority matching engine, the
//! properties it must satisfy, independent oracles, log formats and a
//! trade-log checker.

pub mod checker;
pub mod domain;
pub mod engine;
pub mod logio;
pub mod oracle;
pub mod properties;

pub use checker::{check_logs, check_prepared, CheckOptions, CheckReport, Verdict};
pub use domain::{
    canonical_form, DomainError, Instruction, Order, OrderBook, OrderDomain, OrderId, Price,
    Quantity, Timestamp, Transaction,
};
pub use engine::{
    iterated, process_instruction, run_book, EngineError, IllegalInput, RestingBook, StepOutput,
};
pub use properties::{check_step, is_structured, Property, PropertyReport};
