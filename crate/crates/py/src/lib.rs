//! Python bindings for the matching engine, the property checks, the
//! oracles and the trade-log checker.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cda_core::checker::{self, CheckOptions};
use cda_core::domain::{self, Instruction, Order, OrderDomain, Transaction};
use cda_core::engine::{self, StepOutput};
use cda_core::logio;
use cda_core::oracle::{self, GenParams};
use cda_core::properties;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Order", module = "cda", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyOrder(Order);

#[pymethods]
impl PyOrder {
    #[new]
    fn new(id: u64, timestamp: u64, qty: u64, price: u64) -> PyResult<Self> {
        Order::new(id, timestamp, qty, price)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn id(&self) -> u64 {
        self.0.id()
    }

    #[getter]
    fn timestamp(&self) -> u64 {
        self.0.timestamp()
    }

    #[getter]
    fn qty(&self) -> u64 {
        self.0.qty()
    }

    #[getter]
    fn price(&self) -> u64 {
        self.0.price()
    }

    fn __repr__(&self) -> String {
        let o = &self.0;
        format!(
            "Order(id={}, timestamp={}, qty={}, price={})",
            o.id(),
            o.timestamp(),
            o.qty(),
            o.price()
        )
    }
}

#[pyclass(
    name = "Transaction",
    module = "cda",
    frozen,
    eq,
    hash,
    ord,
    skip_from_py_object
)]
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PyTransaction(Transaction);

#[pymethods]
impl PyTransaction {
    #[new]
    fn new(bid_id: u64, ask_id: u64, qty: u64) -> PyResult<Self> {
        Transaction::new(bid_id, ask_id, qty)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn bid_id(&self) -> u64 {
        self.0.bid_id()
    }

    #[getter]
    fn ask_id(&self) -> u64 {
        self.0.ask_id()
    }

    #[getter]
    fn qty(&self) -> u64 {
        self.0.qty()
    }

    fn __repr__(&self) -> String {
        format!(
            "Transaction(bid_id={}, ask_id={}, qty={})",
            self.0.bid_id(),
            self.0.ask_id(),
            self.0.qty()
        )
    }
}

/// A buy, sell or delete instruction. Build one with `Instruction.buy`,
/// `Instruction.sell` or `Instruction.delete`.
#[pyclass(name = "Instruction", module = "cda", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyInstruction(Instruction);

#[pymethods]
impl PyInstruction {
    #[staticmethod]
    fn buy(order: PyRef<'_, PyOrder>) -> Self {
        Self(Instruction::Buy(order.0))
    }

    #[staticmethod]
    fn sell(order: PyRef<'_, PyOrder>) -> Self {
        Self(Instruction::Sell(order.0))
    }

    #[staticmethod]
    fn delete(id: u64, timestamp: u64) -> Self {
        Self(Instruction::Del { id, timestamp })
    }

    /// "buy", "sell" or "del".
    #[getter]
    fn kind(&self) -> &'static str {
        match self.0 {
            Instruction::Buy(_) => "buy",
            Instruction::Sell(_) => "sell",
            Instruction::Del { .. } => "del",
        }
    }

    #[getter]
    fn id(&self) -> u64 {
        self.0.id()
    }

    #[getter]
    fn timestamp(&self) -> u64 {
        self.0.timestamp()
    }

    #[getter]
    fn order(&self) -> Option<PyOrder> {
        self.0.order().copied().map(PyOrder)
    }

    fn __repr__(&self) -> String {
        format!("Instruction({})", self.0)
    }
}

#[pyclass(name = "StepOutput", module = "cda", frozen)]
struct PyStepOutput(StepOutput);

#[pymethods]
impl PyStepOutput {
    #[getter]
    fn resident_bids(&self) -> Vec<PyOrder> {
        orders_out(&self.0.resident_bids)
    }

    #[getter]
    fn resident_asks(&self) -> Vec<PyOrder> {
        orders_out(&self.0.resident_asks)
    }

    #[getter]
    fn matching(&self) -> Vec<PyTransaction> {
        transactions_out(&self.0.matching)
    }

    fn __repr__(&self) -> String {
        format!(
            "StepOutput({} bids, {} asks, {} transactions)",
            self.0.resident_bids.len(),
            self.0.resident_asks.len(),
            self.0.matching.len()
        )
    }
}

/// Result of `check_logs`. `verdict` is "match", "mismatch" or
/// "input_error"; `to_json()` gives the full report.
#[pyclass(name = "CheckReport", module = "cda", frozen)]
struct PyCheckReport(checker::CheckReport);

#[pymethods]
impl PyCheckReport {
    #[getter]
    fn verdict(&self) -> String {
        self.0.verdict.to_string()
    }

    #[getter]
    fn exit_code(&self) -> i32 {
        self.0.exit_code()
    }

    /// `(index, timestamp)` of the first mismatching step.
    #[getter]
    fn mismatch_step(&self) -> Option<(usize, u64)> {
        self.0.mismatch_step.map(|s| (s.index, s.timestamp))
    }

    #[getter]
    fn expected(&self) -> Vec<PyTransaction> {
        transactions_out(&self.0.expected)
    }

    #[getter]
    fn actual(&self) -> Vec<PyTransaction> {
        transactions_out(&self.0.actual)
    }

    /// `(bid_id, ask_id, expected, actual, delta)` per differing pair.
    #[getter]
    fn diff(&self) -> Vec<(u64, u64, u64, u64, i128)> {
        self.0
            .diff
            .iter()
            .map(|d| (d.bid_id, d.ask_id, d.expected, d.actual, d.delta))
            .collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    #[getter]
    fn input_error(&self) -> Option<String> {
        self.0.input_error.as_ref().map(|p| p.reason.clone())
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("report serializes")
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("CheckReport(verdict={:?})", self.0.verdict.to_string())
    }
}

fn orders_in(orders: &[PyRef<'_, PyOrder>]) -> Vec<Order> {
    orders.iter().map(|o| o.0).collect()
}

fn orders_out(orders: &[Order]) -> Vec<PyOrder> {
    orders.iter().copied().map(PyOrder).collect()
}

fn transactions_in(m: &[PyRef<'_, PyTransaction>]) -> Vec<Transaction> {
    m.iter().map(|t| t.0).collect()
}

fn transactions_out(m: &[Transaction]) -> Vec<PyTransaction> {
    m.iter().copied().map(PyTransaction).collect()
}

fn book_in(book: &[PyRef<'_, PyInstruction>]) -> Vec<Instruction> {
    book.iter().map(|i| i.0).collect()
}

/// One step of the reference process. Raises ValueError on illegal input.
#[pyfunction]
fn process_instruction(
    bids: Vec<PyRef<'_, PyOrder>>,
    asks: Vec<PyRef<'_, PyOrder>>,
    instruction: PyRef<'_, PyInstruction>,
) -> PyResult<PyStepOutput> {
    engine::process_instruction(&orders_in(&bids), &orders_in(&asks), &instruction.0)
        .map(PyStepOutput)
        .map_err(value_error)
}

/// Every step's output on a structured book.
#[pyfunction]
fn run_book(book: Vec<PyRef<'_, PyInstruction>>) -> PyResult<Vec<PyStepOutput>> {
    let steps = engine::run_book(&book_in(&book)).map_err(value_error)?;
    Ok(steps.into_iter().map(PyStepOutput).collect())
}

/// Output after the first `k` instructions (empty for k == 0 or k > len).
#[pyfunction]
fn iterated(book: Vec<PyRef<'_, PyInstruction>>, k: usize) -> PyResult<PyStepOutput> {
    engine::iterated(&book_in(&book), k)
        .map(PyStepOutput)
        .map_err(value_error)
}

#[pyfunction]
fn canonical_form(m: Vec<PyRef<'_, PyTransaction>>) -> PyResult<Vec<PyTransaction>> {
    domain::canonical_form(&transactions_in(&m))
        .map(|c| transactions_out(&c))
        .map_err(value_error)
}

/// Largest matching volume over a small order domain, by exhaustive search.
#[pyfunction]
fn max_matching_volume(
    bids: Vec<PyRef<'_, PyOrder>>,
    asks: Vec<PyRef<'_, PyOrder>>,
) -> PyResult<u64> {
    oracle::max_matching_volume(&OrderDomain::new(orders_in(&bids), orders_in(&asks)))
        .map_err(value_error)
}

/// Property violations of one step as `(property, witness)` pairs; empty
/// when all three properties hold.
#[pyfunction]
fn check_step(
    bids: Vec<PyRef<'_, PyOrder>>,
    asks: Vec<PyRef<'_, PyOrder>>,
    instruction: PyRef<'_, PyInstruction>,
    output: PyRef<'_, PyStepOutput>,
) -> PyResult<Vec<(String, String)>> {
    let report = properties::check_step(
        &orders_in(&bids),
        &orders_in(&asks),
        &instruction.0,
        &output.0,
    )
    .map_err(value_error)?;
    Ok(report
        .violations
        .into_iter()
        .map(|v| (v.property.to_string(), v.witness))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (seed, n, max_price=50, max_qty=100, del_prob=0.2, buy_prob=0.4, reuse_prob=0.05))]
fn generate_book(
    seed: u64,
    n: usize,
    max_price: u64,
    max_qty: u64,
    del_prob: f64,
    buy_prob: f64,
    reuse_prob: f64,
) -> PyResult<Vec<PyInstruction>> {
    let params = GenParams {
        seed,
        num_instructions: n,
        max_price,
        max_qty,
        del_probability: del_prob,
        buy_probability: buy_prob,
        reuse_probability: reuse_prob,
    };
    let book = oracle::generate_book(&params).map_err(value_error)?;
    Ok(book.into_iter().map(PyInstruction).collect())
}

/// Compares per-step logged matchings against the engine's replay.
#[pyfunction]
#[pyo3(signature = (book, trades, require_structured=true, max_steps=None, all_mismatches=false))]
fn check_logs(
    book: Vec<PyRef<'_, PyInstruction>>,
    trades: Vec<Vec<PyRef<'_, PyTransaction>>>,
    require_structured: bool,
    max_steps: Option<usize>,
    all_mismatches: bool,
) -> PyCheckReport {
    let trades: Vec<Vec<Transaction>> = trades.iter().map(|m| transactions_in(m)).collect();
    let options = CheckOptions {
        require_structured,
        max_steps,
        all_mismatches,
    };
    PyCheckReport(checker::check_logs(&book_in(&book), &trades, options))
}

/// Checks CSV order-book and trade-book text. Exchange instruction types
/// are preprocessed unless `raw` is set.
#[pyfunction]
#[pyo3(signature = (orders, trades, raw=false, strict=false))]
fn check_csv(orders: &str, trades: &str, raw: bool, strict: bool) -> PyCheckReport {
    let run = || -> Result<checker::CheckReport, logio::LogError> {
        let rows = logio::parse_order_book(orders.as_bytes(), false)?;
        let prepared = if raw {
            logio::primitives_only(&rows)?
        } else {
            logio::preprocess(&rows, strict)?
        };
        let records = logio::parse_trade_book(trades.as_bytes(), false)?;
        let steps = logio::group_trades_by_step(&records, &prepared)?;
        let options = CheckOptions {
            require_structured: raw,
            ..CheckOptions::default()
        };
        Ok(checker::check_prepared(&prepared, &steps, options))
    };
    PyCheckReport(run().unwrap_or_else(|e| checker::CheckReport::input_error(e.to_string())))
}

/// Primitive instructions parsed from order-book CSV text after
/// preprocessing.
#[pyfunction]
#[pyo3(signature = (text, strict=false))]
fn parse_order_book(text: &str, strict: bool) -> PyResult<Vec<PyInstruction>> {
    let rows = logio::parse_order_book(text.as_bytes(), false).map_err(value_error)?;
    let prepared = logio::preprocess(&rows, strict).map_err(value_error)?;
    Ok(prepared.book.into_iter().map(PyInstruction).collect())
}

/// `(step_timestamp, Transaction)` pairs from trade-book CSV text.
#[pyfunction]
fn parse_trade_book(text: &str) -> PyResult<Vec<(u64, PyTransaction)>> {
    let records = logio::parse_trade_book(text.as_bytes(), false).map_err(value_error)?;
    records
        .into_iter()
        .map(|r| {
            Transaction::new(r.bid_id, r.ask_id, r.qty)
                .map(|t| (r.step_timestamp, PyTransaction(t)))
                .map_err(value_error)
        })
        .collect()
}

#[pymodule]
fn cda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOrder>()?;
    m.add_class::<PyTransaction>()?;
    m.add_class::<PyInstruction>()?;
    m.add_class::<PyStepOutput>()?;
    m.add_class::<PyCheckReport>()?;
    m.add_function(wrap_pyfunction!(process_instruction, m)?)?;
    m.add_function(wrap_pyfunction!(run_book, m)?)?;
    m.add_function(wrap_pyfunction!(iterated, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_form, m)?)?;
    m.add_function(wrap_pyfunction!(max_matching_volume, m)?)?;
    m.add_function(wrap_pyfunction!(check_step, m)?)?;
    m.add_function(wrap_pyfunction!(generate_book, m)?)?;
    m.add_function(wrap_pyfunction!(check_logs, m)?)?;
    m.add_function(wrap_pyfunction!(check_csv, m)?)?;
    m.add_function(wrap_pyfunction!(parse_order_book, m)?)?;
    m.add_function(wrap_pyfunction!(parse_trade_book, m)?)?;
    Ok(())
}
