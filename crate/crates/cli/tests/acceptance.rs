//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cda_core::domain::{canonical_form, same_orders, vol, Instruction, Order};
use cda_core::engine::{absorb, process_instruction, run_book, run_book_with};
use cda_core::logio::{
    parse_order_book, parse_trade_book, preprocess, primitives_only, trade_records,
    write_instructions, write_order_book, write_trade_book, RawInstruction, RawKind,
};
use cda_core::oracle::{
    generate_book, max_matching_volume, random_legal_input, rng, AltProcess, GenParams,
    LegalInputBounds, Mutation, Rng64,
};
use cda_core::properties::{check_step, is_structured, StructureReason};
use rand::Rng;

const BIN: &str = env!("CARGO_BIN_EXE_cda-check");

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn three_properties() -> Outcome {
    const INPUTS: usize = 10_000;
    const LIMIT_S: f64 = 30.0;
    let bounds = LegalInputBounds {
        max_residents_per_side: 50,
        max_qty: 100,
        max_price: 50,
    };
    let started = Instant::now();
    let mut rng = rng(1);
    let mut violations = 0;
    for _ in 0..INPUTS {
        let (bids, asks, instruction) = random_legal_input(&mut rng, &bounds);
        let ok = process_instruction(&bids, &asks, &instruction)
            .ok()
            .and_then(|out| check_step(&bids, &asks, &instruction, &out).ok())
            .is_some_and(|r| r.holds());
        if !ok {
            violations += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        violations == 0 && within(elapsed, LIMIT_S),
        format!(
            "{INPUTS} legal inputs, {violations} violations, {elapsed:.2?} (limit {LIMIT_S} s)"
        ),
    )
}

fn maximum_matching() -> Outcome {
    const INPUTS: usize = 2_000;
    const LIMIT_S: f64 = 60.0;
    // five residents plus the incoming order keeps each side within six
    let bounds = LegalInputBounds {
        max_residents_per_side: 5,
        max_qty: 10,
        max_price: 10,
    };
    let started = Instant::now();
    let mut rng = rng(2);
    let (mut unequal, mut traded) = (0, 0);
    for _ in 0..INPUTS {
        let (bids, asks, instruction) = random_legal_input(&mut rng, &bounds);
        let absorbed = absorb(&bids, &asks, &instruction);
        let engine = process_instruction(&bids, &asks, &instruction)
            .ok()
            .and_then(|out| vol(&out.matching).ok());
        let best = max_matching_volume(&absorbed).ok();
        if engine.is_some_and(|v| v > 0) {
            traded += 1;
        }
        if engine.is_none() || engine != best {
            unequal += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        unequal == 0 && within(elapsed, LIMIT_S),
        format!(
            "{INPUTS} inputs ({traded} with trades), {unequal} volume differences, {elapsed:.2?} (limit {LIMIT_S} s)"
        ),
    )
}

fn global_uniqueness() -> Outcome {
    const BOOKS: usize = 200;
    const LIMIT_S: f64 = 60.0;
    let started = Instant::now();
    let mut sizes = rng(3);
    let (mut steps, mut disagreements, mut errors) = (0, 0, 0);
    for seed in 0..BOOKS as u64 {
        let params = GenParams {
            seed,
            num_instructions: sizes.random_range(500..=2000),
            ..GenParams::default()
        };
        let book = generate_book(&params).expect("valid params");
        let (Ok(reference), Ok(alt)) = (run_book(&book), run_book_with(&AltProcess, &book)) else {
            errors += 1;
            continue;
        };
        for (r, a) in reference.iter().zip(&alt) {
            steps += 1;
            let same = same_orders(&r.resident_bids, &a.resident_bids)
                && same_orders(&r.resident_asks, &a.resident_asks)
                && canonical_form(&r.matching).ok() == canonical_form(&a.matching).ok();
            if !same {
                disagreements += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        disagreements == 0 && errors == 0 && within(elapsed, LIMIT_S),
        format!(
            "{BOOKS} books, {steps} steps, {disagreements} disagreements, {errors} replay errors, {elapsed:.2?} (limit {LIMIT_S} s)"
        ),
    )
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn mismatch_index(json: &str) -> Option<usize> {
    let report: serde_json::Value = serde_json::from_str(json).ok()?;
    report["mismatch_step"]["index"]
        .as_u64()
        .map(|i| i as usize)
}

fn mutation_detection(dir: &Path) -> Outcome {
    const PAIRS_PER_KIND: usize = 100;
    let orders = dir.join("orders.csv");
    let trades = dir.join("trades.csv");
    let (o, t) = (orders.to_str().unwrap(), trades.to_str().unwrap());
    let mut misses = Vec::new();
    let mut false_positives = 0;
    let mut clean = 0;
    let mut detected = 0;
    for kind in Mutation::ALL {
        let mut pairs = 0;
        let mut seed = 0u64;
        while pairs < PAIRS_PER_KIND && seed < 10 * PAIRS_PER_KIND as u64 {
            seed += 1;
            let s = seed.to_string();
            let base = [
                "gen",
                "--seed",
                &s,
                "--n",
                "300",
                "--max-price",
                "20",
                "--max-qty",
                "20",
            ];
            let (code, _) = run(&[&base[..], &["--out-orders", o, "--out-trades", t]].concat());
            assert_eq!(code, 0, "gen failed");
            if kind == Mutation::ALL[0] {
                clean += 1;
                if run(&["check", "--orders", o, "--trades", t]).0 != 0 {
                    false_positives += 1;
                }
            }
            let args = [
                &base[..],
                &[
                    "--out-orders",
                    o,
                    "--out-trades",
                    t,
                    "--mutate",
                    kind.name(),
                ],
            ]
            .concat();
            let (code, stdout) = run(&args);
            if code != 0 {
                // nothing of this kind to mutate in this book
                continue;
            }
            pairs += 1;
            let step: usize = stdout
                .split_whitespace()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .expect("gen reports the mutated step");
            let (code, json) = run(&["check", "--json", "--orders", o, "--trades", t]);
            match mismatch_index(&json) {
                Some(found) if code == 1 && found <= step => detected += 1,
                found => misses.push(format!(
                    "{} seed {seed}: exit {code}, step {found:?} vs {step}",
                    kind.name()
                )),
            }
        }
        if pairs < PAIRS_PER_KIND {
            misses.push(format!("{}: only {pairs} mutatable pairs", kind.name()));
        }
    }
    let mut detail = format!(
        "{detected} mutated pairs detected over {} kinds, {} misses, {false_positives}/{clean} false positives",
        Mutation::ALL.len(),
        misses.len()
    );
    if let Some(first) = misses.first() {
        detail.push_str(&format!("; first miss: {first}"));
    }
    outcome(misses.is_empty() && false_positives == 0, detail)
}

fn demonstration(dir: &Path) -> Outcome {
    // The exchange placed sell 2 and then deleted it before buy 3 arrived,
    // so it logged no trade. The order book lists the delete first.
    let orders = dir.join("demo_orders.csv");
    let trades = dir.join("demo_trades.csv");
    fs::write(
        &orders,
        "BUY,1,1,5,10\nDELETE,2,2,,\nSELL,2,3,5,12\nBUY,3,4,5,12\n",
    )
    .unwrap();
    fs::write(&trades, "").unwrap();
    let (o, t) = (orders.to_str().unwrap(), trades.to_str().unwrap());
    let (default_code, json) = run(&["check", "--json", "--orders", o, "--trades", t]);
    let step = mismatch_index(&json);
    let (strict_code, _) = run(&["check", "--strict", "--orders", o, "--trades", t]);
    let (raw_code, _) = run(&["check", "--raw", "--orders", o, "--trades", t]);
    outcome(
        default_code == 1 && step == Some(3) && strict_code == 2 && raw_code == 1,
        format!(
            "delete-before-insert: exit {default_code} at step {step:?}, --strict exit {strict_code}, --raw exit {raw_code}"
        ),
    )
}

fn performance(dir: &Path) -> Outcome {
    const LIMIT_S: f64 = 2.0;
    const TARGET_S: f64 = 1.0;
    let orders = dir.join("big_orders.csv");
    let trades = dir.join("big_trades.csv");
    let (o, t) = (orders.to_str().unwrap(), trades.to_str().unwrap());
    let (code, _) = run(&[
        "gen",
        "--seed",
        "16000",
        "--n",
        "16000",
        "--out-orders",
        o,
        "--out-trades",
        t,
    ]);
    assert_eq!(code, 0);
    let started = Instant::now();
    let (code, _) = run(&["check", "--orders", o, "--trades", t]);
    let elapsed = started.elapsed();
    outcome(
        code == 0 && within(elapsed, LIMIT_S),
        format!(
            "16000 instructions checked in {elapsed:.2?}, exit {code} (ceiling {LIMIT_S} s, target {TARGET_S} s {})",
            if within(elapsed, TARGET_S) { "met" } else { "missed" }
        ),
    )
}

/// A random exchange stream using every supported instruction kind.
fn exchange_stream(rng: &mut Rng64, n: usize) -> Vec<RawInstruction> {
    const KINDS: [RawKind; 11] = [
        RawKind::Buy,
        RawKind::Sell,
        RawKind::Delete,
        RawKind::UpdateBuy,
        RawKind::UpdateSell,
        RawKind::MarketBuy,
        RawKind::MarketSell,
        RawKind::IocBuy,
        RawKind::IocSell,
        RawKind::StopBuy,
        RawKind::StopSell,
    ];
    let mut ts = 0;
    (0..n)
        .map(|i| {
            let kind = KINDS[rng.random_range(0..KINDS.len())];
            ts += rng.random_range(1..5);
            let qty = rng.random_range(1..50);
            let price = rng.random_range(1..30);
            RawInstruction {
                kind,
                id: rng.random_range(1..=n as u64 / 3 + 1),
                timestamp: ts,
                qty: (kind != RawKind::Delete).then_some(qty),
                price: (!matches!(
                    kind,
                    RawKind::Delete | RawKind::MarketBuy | RawKind::MarketSell
                ))
                .then_some(price),
                trigger_timestamp: matches!(kind, RawKind::StopBuy | RawKind::StopSell)
                    .then(|| ts + rng.random_range(0..20)),
                untraded_qty: matches!(kind, RawKind::UpdateBuy | RawKind::UpdateSell)
                    .then(|| rng.random_range(0..50)),
                line: i as u64 + 1,
            }
        })
        .collect()
}

fn retime(ins: &Instruction, ts: u64) -> Instruction {
    let order = |o: &Order| Order::new(o.id(), ts, o.qty(), o.price()).unwrap();
    match ins {
        Instruction::Buy(o) => Instruction::Buy(order(o)),
        Instruction::Sell(o) => Instruction::Sell(order(o)),
        Instruction::Del { id, .. } => Instruction::Del {
            id: *id,
            timestamp: ts,
        },
    }
}

fn round_trip_and_structure() -> Outcome {
    const FIXTURES: u64 = 100;
    let mut failures = Vec::new();
    let mut corruptions = 0;
    let mut max_ratio: f64 = 0.0;
    let mut rng = rng(7);
    for seed in 0..FIXTURES {
        let book = generate_book(&GenParams {
            seed,
            num_instructions: 500,
            ..GenParams::default()
        })
        .unwrap();

        // byte-exact order and trade books
        let mut orders = Vec::new();
        write_instructions(&mut orders, &book).unwrap();
        let rows = parse_order_book(orders.as_slice(), false).unwrap();
        let mut again = Vec::new();
        write_order_book(&mut again, &rows).unwrap();
        let back = primitives_only(&rows).unwrap().book;
        if again != orders || back != book {
            failures.push(format!("seed {seed}: order book round trip"));
        }
        let steps: Vec<_> = run_book(&book)
            .unwrap()
            .into_iter()
            .map(|s| canonical_form(&s.matching).unwrap())
            .collect();
        let stamps: Vec<u64> = book.iter().map(Instruction::timestamp).collect();
        let mut trades = Vec::new();
        write_trade_book(&mut trades, &trade_records(&steps, &stamps)).unwrap();
        let mut trades_again = Vec::new();
        write_trade_book(
            &mut trades_again,
            &parse_trade_book(trades.as_slice(), false).unwrap(),
        )
        .unwrap();
        if trades_again != trades {
            failures.push(format!("seed {seed}: trade book round trip"));
        }

        // structured-book acceptance and targeted corruptions
        if is_structured(&book).is_err() {
            failures.push(format!("seed {seed}: generated book rejected"));
        }
        let i = rng.random_range(0..book.len() - 1);
        let mut swapped = book.clone();
        swapped[i] = retime(&book[i], book[i + 1].timestamp());
        swapped[i + 1] = retime(&book[i + 1], book[i].timestamp());
        corruptions += 1;
        if !is_structured(&swapped).is_err_and(|v| v.reason == StructureReason::Timestamps) {
            failures.push(format!("seed {seed}: timestamp swap accepted"));
        }
        let first = book.iter().find_map(Instruction::order).unwrap().id();
        let last = book.iter().rposition(|ins| ins.order().is_some()).unwrap();
        let follows_delete = matches!(book[last - 1], Instruction::Del { id, .. } if id == first);
        if !follows_delete && book[last].id() != first {
            let mut duplicated = book.clone();
            let o = book[last].order().unwrap();
            let copy = Order::new(first, o.timestamp(), o.qty(), o.price()).unwrap();
            duplicated[last] = match book[last] {
                Instruction::Buy(_) => Instruction::Buy(copy),
                _ => Instruction::Sell(copy),
            };
            corruptions += 1;
            if !is_structured(&duplicated).is_err_and(|v| v.reason == StructureReason::ReusedId) {
                failures.push(format!("seed {seed}: duplicate id accepted"));
            }
        }

        // exchange streams at most double in length
        let raw = exchange_stream(&mut rng, 300);
        match preprocess(&raw, false) {
            Ok(p) => max_ratio = max_ratio.max(p.book.len() as f64 / raw.len() as f64),
            Err(e) => failures.push(format!("seed {seed}: preprocess failed: {e}")),
        }
    }
    let mut detail = format!(
        "{FIXTURES} fixtures round-tripped, {corruptions} corruptions, max preprocess ratio {max_ratio:.2}, {} failures",
        failures.len()
    );
    if let Some(first) = failures.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    outcome(failures.is_empty() && max_ratio <= 2.0, detail)
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: [Criterion; 7] = [
        ("three properties", Box::new(three_properties)),
        ("maximum matching", Box::new(maximum_matching)),
        ("global uniqueness", Box::new(global_uniqueness)),
        (
            "mutation detection",
            Box::new(|| mutation_detection(dir.path())),
        ),
        (
            "demonstration analogue",
            Box::new(|| demonstration(dir.path())),
        ),
        ("performance", Box::new(|| performance(dir.path()))),
        (
            "round trip and structure",
            Box::new(round_trip_and_structure),
        ),
    ];
    let mut failed = 0;
    for (n, (name, criterion)) in criteria.iter().enumerate() {
        let result = criterion();
        let mark = if result.passed { "PASS" } else { "FAIL" };
        println!("{mark} [{}] {name}: {}", n + 1, result.detail);
        if !result.passed {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
