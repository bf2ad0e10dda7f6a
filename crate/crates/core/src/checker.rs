//! Replays an order book through the reference engine and compares each
//! step's matching against a logged trade book.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_form, Instruction, OrderId, Quantity, Timestamp, Transaction};
use crate::engine::RestingBook;
use crate::logio::{PreparedBook, UntradedCheck, Warning};
use crate::properties::is_structured;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
    InputError,
}

impl Verdict {
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Match => 0,
            Verdict::Mismatch => 1,
            Verdict::InputError => 2,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Match => "match",
            Verdict::Mismatch => "mismatch",
            Verdict::InputError => "input_error",
        })
    }
}

/// A step by position in the replayed book and by the timestamp it had in
/// the order-book file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRef {
    pub index: usize,
    pub timestamp: Timestamp,
}

/// `delta = expected - actual` for one (bid, ask) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDelta {
    pub bid_id: OrderId,
    pub ask_id: OrderId,
    pub expected: Quantity,
    pub actual: Quantity,
    pub delta: i128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMismatch {
    pub step: StepRef,
    pub expected: Vec<Transaction>,
    pub actual: Vec<Transaction>,
    pub diff: Vec<PairDelta>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputProblem {
    pub step: Option<StepRef>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub instructions_processed: usize,
    pub total_volume: Quantity,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    pub mismatch_step: Option<StepRef>,
    pub expected: Vec<Transaction>,
    pub actual: Vec<Transaction>,
    pub diff: Vec<PairDelta>,
    pub input_error: Option<InputProblem>,
    /// Mismatches after the first one, collected only on request. Later
    /// steps replay on the engine's own residents, so these may be knock-on
    /// effects of the first.
    pub cascade: Vec<StepMismatch>,
    pub warnings: Vec<String>,
    pub stats: Stats,
}

impl CheckReport {
    /// A report for input that could not be read or prepared.
    pub fn input_error(reason: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::InputError,
            mismatch_step: None,
            expected: Vec::new(),
            actual: Vec::new(),
            diff: Vec::new(),
            input_error: Some(InputProblem {
                step: None,
                reason: reason.into(),
            }),
            cascade: Vec::new(),
            warnings: Vec::new(),
            stats: Stats {
                instructions_processed: 0,
                total_volume: 0,
                elapsed_ms: 0.0,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        match self.verdict {
            Verdict::Match => writeln!(
                f,
                "MATCH: {} instructions, volume {}",
                self.stats.instructions_processed, self.stats.total_volume
            )?,
            Verdict::Mismatch => {
                let step = self.mismatch_step.expect("mismatch has a step");
                writeln!(
                    f,
                    "MISMATCH at step {} (timestamp {})",
                    step.index, step.timestamp
                )?;
                write_diff(f, &self.diff)?;
                for later in &self.cascade {
                    writeln!(
                        f,
                        "  later mismatch at step {} (timestamp {})",
                        later.step.index, later.step.timestamp
                    )?;
                }
            }
            Verdict::InputError => {
                let problem = self.input_error.as_ref().expect("input error has a reason");
                match problem.step {
                    Some(s) => writeln!(
                        f,
                        "INPUT ERROR at step {} (timestamp {}): {}",
                        s.index, s.timestamp, problem.reason
                    )?,
                    None => writeln!(f, "INPUT ERROR: {}", problem.reason)?,
                }
            }
        }
        Ok(())
    }
}

fn write_diff(f: &mut fmt::Formatter<'_>, diff: &[PairDelta]) -> fmt::Result {
    for d in diff {
        writeln!(
            f,
            "  bid {} ask {}: expected {} actual {} (delta {:+})",
            d.bid_id, d.ask_id, d.expected, d.actual, d.delta
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Reject books with non-increasing timestamps or early id reuse up
    /// front instead of relying on per-step legality.
    pub require_structured: bool,
    /// Stop after this many steps (a prefix check).
    pub max_steps: Option<usize>,
    /// Keep comparing after the first mismatch.
    pub all_mismatches: bool,
}

/// Per-pair differences between two canonical matchings, in pair order.
pub fn pair_deltas(expected: &[Transaction], actual: &[Transaction]) -> Vec<PairDelta> {
    let mut pairs: BTreeMap<(OrderId, OrderId), (Quantity, Quantity)> = BTreeMap::new();
    for t in expected {
        pairs.entry(t.pair()).or_default().0 += t.qty();
    }
    for t in actual {
        pairs.entry(t.pair()).or_default().1 += t.qty();
    }
    pairs
        .into_iter()
        .filter(|(_, (e, a))| e != a)
        .map(|((bid_id, ask_id), (expected, actual))| PairDelta {
            bid_id,
            ask_id,
            expected,
            actual,
            delta: i128::from(expected) - i128::from(actual),
        })
        .collect()
}

/// Checks a primitive book against per-step logged matchings, labelling
/// steps with their own timestamps.
pub fn check_logs(
    book: &[Instruction],
    trades: &[Vec<Transaction>],
    options: CheckOptions,
) -> CheckReport {
    let timestamps: Vec<Timestamp> = book.iter().map(Instruction::timestamp).collect();
    run_check(book, &timestamps, trades, &[], Vec::new(), options)
}

/// Checks a prepared book, labelling steps with source timestamps and
/// verifying logged untraded quantities.
pub fn check_prepared(
    prepared: &PreparedBook,
    trades: &[Vec<Transaction>],
    options: CheckOptions,
) -> CheckReport {
    let warnings = prepared.warnings.iter().map(Warning::to_string).collect();
    run_check(
        &prepared.book,
        &prepared.step_timestamps(),
        trades,
        &prepared.untraded_checks,
        warnings,
        options,
    )
}

fn run_check(
    book: &[Instruction],
    step_timestamps: &[Timestamp],
    trades: &[Vec<Transaction>],
    untraded_checks: &[UntradedCheck],
    warnings: Vec<String>,
    options: CheckOptions,
) -> CheckReport {
    let started = Instant::now();
    let mut report = CheckReport::input_error("");
    report.verdict = Verdict::Match;
    report.input_error = None;
    report.warnings = warnings;

    let fail = |mut report: CheckReport, step: Option<StepRef>, reason: String| {
        report.verdict = Verdict::InputError;
        report.input_error = Some(InputProblem { step, reason });
        report.stats.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        report
    };

    if trades.len() != book.len() {
        let reason = format!(
            "trade log covers {} steps but the book has {}",
            trades.len(),
            book.len()
        );
        return fail(report, None, reason);
    }
    if options.require_structured {
        if let Err(v) = is_structured(book) {
            let step = StepRef {
                index: v.index,
                timestamp: step_timestamps[v.index],
            };
            return fail(report, Some(step), v.to_string());
        }
    }

    let limit = options.max_steps.map_or(book.len(), |n| n.min(book.len()));
    let mut checks = untraded_checks.iter().peekable();
    let mut resting = RestingBook::new();
    for (index, instruction) in book[..limit].iter().enumerate() {
        let step = StepRef {
            index,
            timestamp: step_timestamps[index],
        };
        while let Some(check) = checks.next_if(|c| c.step == index) {
            let resting_qty = resting.get(check.id).map_or(0, |o| o.qty());
            if resting_qty != check.untraded_qty {
                report.warnings.push(format!(
                    "line {}: update of id {} logs untraded qty {} but {} was resting",
                    check.line, check.id, check.untraded_qty, resting_qty
                ));
            }
        }
        let engine = match resting.apply(instruction) {
            Ok(m) => m,
            Err(e) => return fail(report, Some(step), format!("illegal input: {e}")),
        };
        for t in &engine {
            report.stats.total_volume = report.stats.total_volume.saturating_add(t.qty());
        }
        report.stats.instructions_processed = index + 1;
        let expected = canonical_form(&engine).expect("engine matchings do not overflow");
        let actual = match canonical_form(&trades[index]) {
            Ok(a) => a,
            Err(e) => return fail(report, Some(step), format!("trade log: {e}")),
        };
        if expected == actual {
            continue;
        }
        let diff = pair_deltas(&expected, &actual);
        if report.verdict == Verdict::Match {
            report.verdict = Verdict::Mismatch;
            report.mismatch_step = Some(step);
            report.expected = expected;
            report.actual = actual;
            report.diff = diff;
            if !options.all_mismatches {
                break;
            }
        } else {
            report.cascade.push(StepMismatch {
                step,
                expected,
                actual,
                diff,
            });
        }
    }
    report.stats.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Order;

    fn buy(id: u64, ts: u64, qty: u64, price: u64) -> Instruction {
        Instruction::Buy(Order::new(id, ts, qty, price).unwrap())
    }

    fn sell(id: u64, ts: u64, qty: u64, price: u64) -> Instruction {
        Instruction::Sell(Order::new(id, ts, qty, price).unwrap())
    }

    fn t(b: u64, a: u64, q: u64) -> Transaction {
        Transaction::new(b, a, q).unwrap()
    }

    fn book() -> Vec<Instruction> {
        vec![buy(1, 1, 5, 10), buy(2, 2, 3, 11), sell(3, 3, 6, 9)]
    }

    #[test]
    fn matching_logs() {
        let trades = vec![vec![], vec![], vec![t(1, 3, 3), t(2, 3, 3)]];
        let r = check_logs(&book(), &trades, CheckOptions::default());
        assert_eq!(r.verdict, Verdict::Match);
        assert_eq!(r.stats.instructions_processed, 3);
        assert_eq!(r.stats.total_volume, 6);
        // order of records within a step is irrelevant
        let shuffled = vec![vec![], vec![], vec![t(1, 3, 1), t(2, 3, 3), t(1, 3, 2)]];
        assert_eq!(
            check_logs(&book(), &shuffled, CheckOptions::default()).verdict,
            Verdict::Match
        );
    }

    #[test]
    fn reports_first_mismatch() {
        let trades = vec![vec![], vec![], vec![t(1, 3, 4), t(2, 3, 3)]];
        let r = check_logs(&book(), &trades, CheckOptions::default());
        assert_eq!(r.verdict, Verdict::Mismatch);
        assert_eq!(
            r.mismatch_step,
            Some(StepRef {
                index: 2,
                timestamp: 3
            })
        );
        assert_eq!(
            r.diff,
            vec![PairDelta {
                bid_id: 1,
                ask_id: 3,
                expected: 3,
                actual: 4,
                delta: -1
            }]
        );
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn trades_at_the_wrong_step() {
        let trades = vec![vec![t(1, 3, 3)], vec![], vec![t(2, 3, 3)]];
        let r = check_logs(&book(), &trades, CheckOptions::default());
        assert_eq!(r.mismatch_step.unwrap().index, 0);
        let all = check_logs(
            &book(),
            &trades,
            CheckOptions {
                all_mismatches: true,
                ..Default::default()
            },
        );
        assert_eq!(all.cascade.len(), 1);
        assert_eq!(all.cascade[0].step.index, 2);
    }

    #[test]
    fn input_errors() {
        let r = check_logs(&book(), &[vec![]], CheckOptions::default());
        assert_eq!(r.verdict, Verdict::InputError);
        let dup = vec![buy(1, 1, 1, 5), buy(1, 2, 1, 5)];
        let r = check_logs(&dup, &[vec![], vec![]], CheckOptions::default());
        assert_eq!(r.input_error.unwrap().step.unwrap().index, 1);
        let unordered = vec![buy(1, 2, 1, 5), buy(2, 1, 1, 4)];
        let trades = vec![vec![], vec![]];
        assert_eq!(
            check_logs(&unordered, &trades, CheckOptions::default()).verdict,
            Verdict::Match
        );
        let strict = CheckOptions {
            require_structured: true,
            ..Default::default()
        };
        assert_eq!(
            check_logs(&unordered, &trades, strict).verdict,
            Verdict::InputError
        );
    }

    #[test]
    fn prefix_check() {
        let trades = vec![vec![], vec![], vec![t(9, 9, 9)]];
        let options = CheckOptions {
            max_steps: Some(2),
            ..Default::default()
        };
        let r = check_logs(&book(), &trades, options);
        assert_eq!(r.verdict, Verdict::Match);
        assert_eq!(r.stats.instructions_processed, 2);
    }

    #[test]
    fn report_serializes() {
        let trades = vec![vec![], vec![], vec![t(1, 3, 4), t(2, 3, 3)]];
        let r = check_logs(&book(), &trades, CheckOptions::default());
        let text = format!("{r}");
        assert!(text.contains("MISMATCH at step 2 (timestamp 3)"));
        assert!(text.contains("delta -1"));
    }
}
