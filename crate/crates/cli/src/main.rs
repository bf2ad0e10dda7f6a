use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cda_core::checker::{check_prepared, CheckOptions, CheckReport};
use cda_core::domain::{canonical_form, same_orders, vol, Instruction, Transaction};
use cda_core::engine::{absorb, run_book, run_book_with, Replay};
use cda_core::logio::{
    group_trades_by_step, parse_order_book, parse_trade_book, preprocess, primitives_only,
    trade_records, write_instructions, write_trade_book, PreparedBook, RawInstruction,
};
use cda_core::oracle::{
    generate_book, max_matching_volume, mutate_trade_log, AltProcess, GenParams, Mutation,
    MAX_ORACLE_ORDERS_PER_SIDE, MAX_ORACLE_QTY,
};
use cda_core::properties::{check_step, is_structured};
use cda_core::Verdict;

const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cda-check",
    version,
    about = "Replay order books through a price-time priority engine and audit trade logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare trade books against the engine's replay of their order books
    Check(CheckArgs),
    /// Replay an order book and write the trades it produces
    Replay(ReplayArgs),
    /// Generate a random order book and its trade book
    Gen(GenArgs),
    /// Generate a book and cross-check the engine against the oracles
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct Mode {
    /// Take the order book as BUY/SELL/DELETE rows with their own timestamps
    #[arg(long, conflicts_with = "preprocess")]
    raw: bool,
    /// Rewrite exchange instruction types into primitives (default)
    #[arg(long)]
    preprocess: bool,
    /// Treat updates and deletes of never-placed ids as errors
    #[arg(long)]
    strict: bool,
    /// Report every malformed line instead of stopping at the first
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Order book CSV; repeat together with --trades to check several instruments
    #[arg(long = "orders", required = true)]
    orders: Vec<PathBuf>,
    /// Trade book CSV paired with the --orders at the same position
    #[arg(long = "trades", required = true)]
    trades: Vec<PathBuf>,
    #[command(flatten)]
    mode: Mode,
    /// Print the report as JSON
    #[arg(long)]
    json: bool,
    /// Only check the first N steps
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
    /// Keep going after the first mismatch (later ones may be knock-on effects)
    #[arg(long)]
    all_mismatches: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    orders: PathBuf,
    /// Where to write the trade book (standard output if omitted)
    #[arg(long, value_name = "FILE")]
    emit_trades: Option<PathBuf>,
    /// Also print the final resting orders
    #[arg(long)]
    emit_residents: bool,
    #[command(flatten)]
    mode: Mode,
}

#[derive(Args)]
struct GenParamArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of instructions
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    max_price: u64,
    #[arg(long, default_value_t = 100)]
    max_qty: u64,
    #[arg(long, default_value_t = 0.2)]
    del_prob: f64,
    #[arg(long, default_value_t = 0.4)]
    buy_prob: f64,
    /// Chance that an order re-uses the id deleted just before it
    #[arg(long, default_value_t = 0.05)]
    reuse_prob: f64,
}

impl GenParamArgs {
    fn params(&self) -> GenParams {
        GenParams {
            seed: self.seed,
            num_instructions: self.n,
            max_price: self.max_price,
            max_qty: self.max_qty,
            del_probability: self.del_prob,
            buy_probability: self.buy_prob,
            reuse_probability: self.reuse_prob,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    params: GenParamArgs,
    #[arg(long, value_name = "FILE")]
    out_orders: PathBuf,
    #[arg(long, value_name = "FILE")]
    out_trades: PathBuf,
    /// Corrupt the trade book: drop, qty-plus, qty-minus, swap-bids or move
    #[arg(long, value_name = "KIND", value_parser = parse_mutation)]
    mutate: Option<Mutation>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[command(flatten)]
    params: GenParamArgs,
}

fn parse_mutation(s: &str) -> Result<Mutation, String> {
    Mutation::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Mutation::ALL.iter().map(Mutation::name).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check(args) => check(&args),
        Command::Replay(args) => replay(&args),
        Command::Gen(args) => generate(&args),
        Command::Selfcheck(args) => selfcheck(&args),
    };
    ExitCode::from(code)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_orders(path: &Path, lenient: bool) -> anyhow::Result<Vec<RawInstruction>> {
    parse_order_book(open(path)?, lenient).with_context(|| path.display().to_string())
}

fn prepare(path: &Path, mode: &Mode) -> anyhow::Result<PreparedBook> {
    let raw = read_orders(path, mode.lenient)?;
    let prepared = if mode.raw {
        primitives_only(&raw)
    } else {
        preprocess(&raw, mode.strict)
    };
    prepared.with_context(|| path.display().to_string())
}

fn input_failure(e: anyhow::Error) -> u8 {
    eprintln!("error: {e:#}");
    EXIT_INPUT
}

fn check(args: &CheckArgs) -> u8 {
    if args.orders.len() != args.trades.len() {
        eprintln!(
            "error: {} --orders but {} --trades; give them in pairs",
            args.orders.len(),
            args.trades.len()
        );
        return EXIT_INPUT;
    }
    let pairs: Vec<(&PathBuf, &PathBuf)> = args.orders.iter().zip(&args.trades).collect();
    let results: Vec<Option<CheckReport>> = std::thread::scope(|scope| {
        let workers: Vec<_> = pairs
            .iter()
            .map(|(orders, trades)| scope.spawn(move || check_pair(orders, trades, args)))
            .collect();
        workers.into_iter().map(|w| w.join().ok()).collect()
    });

    let mut code = 0;
    let mut json = Vec::new();
    for ((orders, trades), result) in pairs.iter().zip(results) {
        let Some(report) = result else {
            eprintln!(
                "error: internal failure while checking {}",
                orders.display()
            );
            code = code.max(EXIT_INTERNAL);
            continue;
        };
        code = code.max(report.exit_code() as u8);
        if args.json {
            json.push(serde_json::json!({
                "orders": orders,
                "trades": trades,
                "report": report,
            }));
        } else {
            if pairs.len() > 1 {
                println!("== {} / {}", orders.display(), trades.display());
            }
            print!("{report}");
        }
    }
    if args.json {
        let value = match json.len() {
            1 => json.remove(0)["report"].take(),
            _ => serde_json::Value::Array(json),
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("report serializes")
        );
    }
    code
}

fn check_pair(orders: &Path, trades: &Path, args: &CheckArgs) -> CheckReport {
    let prepared = match prepare(orders, &args.mode) {
        Ok(p) => p,
        Err(e) => return CheckReport::input_error(format!("{e:#}")),
    };
    let steps = open(trades)
        .and_then(|r| Ok(parse_trade_book(r, args.mode.lenient)?))
        .and_then(|records| Ok(group_trades_by_step(&records, &prepared)?))
        .with_context(|| trades.display().to_string());
    let steps = match steps {
        Ok(s) => s,
        Err(e) => return CheckReport::input_error(format!("{e:#}")),
    };
    let options = CheckOptions {
        require_structured: args.mode.raw,
        max_steps: args.max_steps,
        all_mismatches: args.all_mismatches,
    };
    check_prepared(&prepared, &steps, options)
}

/// Replays a prepared book, stopping at the first illegal step.
fn replay_steps(
    prepared: &PreparedBook,
    literal: bool,
) -> anyhow::Result<(Vec<Vec<Transaction>>, Replay<'_>)> {
    if literal {
        if let Err(v) = is_structured(&prepared.book) {
            bail!("line {}: {v}", prepared.origins[v.index].line);
        }
    }
    let mut replay = Replay::new(&prepared.book);
    let mut steps = Vec::with_capacity(prepared.book.len());
    for step in replay.by_ref() {
        match step {
            Ok(m) => steps.push(canonical_form(&m).expect("engine matchings do not overflow")),
            Err(e) => {
                let line = prepared.origins[steps.len()].line;
                bail!("line {line}: {e}");
            }
        }
    }
    Ok((steps, replay))
}

fn replay(args: &ReplayArgs) -> u8 {
    let run = || -> anyhow::Result<()> {
        let prepared = prepare(&args.orders, &args.mode)?;
        for w in &prepared.warnings {
            eprintln!("warning: {w}");
        }
        let (steps, replay) = replay_steps(&prepared, args.mode.raw)?;
        let records = trade_records(&steps, &prepared.step_timestamps());
        match &args.emit_trades {
            Some(path) => {
                let mut out = create(path)?;
                write_trade_book(&mut out, &records)?;
                out.flush()?;
            }
            None => write_trade_book(io::stdout().lock(), &records)?,
        }
        if args.emit_residents {
            let residents: Vec<Instruction> = replay
                .book()
                .bids()
                .map(|o| Instruction::Buy(*o))
                .chain(replay.book().asks().map(|o| Instruction::Sell(*o)))
                .collect();
            if args.emit_trades.is_some() {
                write_instructions(io::stdout().lock(), &residents)?;
            } else {
                write_instructions(io::stderr().lock(), &residents)?;
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => 0,
        Err(e) => input_failure(e),
    }
}

fn generate(args: &GenArgs) -> u8 {
    let run = || -> anyhow::Result<()> {
        let book = generate_book(&args.params.params())?;
        let steps = engine_log(&book)?;
        let stamps: Vec<u64> = book.iter().map(Instruction::timestamp).collect();
        let steps = match args.mutate {
            Some(kind) => {
                let (mutated, step) = mutate_trade_log(&steps, kind, args.params.seed)?;
                println!("mutated step {step} (timestamp {})", stamps[step]);
                mutated
            }
            None => steps,
        };
        let mut orders = create(&args.out_orders)?;
        write_instructions(&mut orders, &book)?;
        orders.flush()?;
        let mut trades = create(&args.out_trades)?;
        write_trade_book(&mut trades, &trade_records(&steps, &stamps))?;
        trades.flush()?;
        Ok(())
    };
    match run() {
        Ok(()) => 0,
        Err(e) => input_failure(e),
    }
}

fn engine_log(book: &[Instruction]) -> anyhow::Result<Vec<Vec<Transaction>>> {
    let prepared = PreparedBook {
        book: book.to_vec(),
        ..Default::default()
    };
    Ok(replay_steps(&prepared, true)?.0)
}

/// Tallies of one self-check run.
#[derive(Default)]
struct Tally {
    steps: usize,
    oracle_steps: usize,
    failures: Vec<String>,
}

impl Tally {
    fn fail(&mut self, message: String) {
        if self.failures.len() < 20 {
            eprintln!("FAIL {message}");
        }
        self.failures.push(message);
    }
}

fn selfcheck(args: &SelfcheckArgs) -> u8 {
    let params = args.params.params();
    let book = match generate_book(&params) {
        Ok(b) => b,
        Err(e) => return input_failure(e.into()),
    };
    let mut tally = Tally::default();
    if let Err(v) = is_structured(&book) {
        tally.fail(format!("generated book is not structured: {v}"));
    }
    let (reference, alt) = match (run_book(&book), run_book_with(&AltProcess, &book)) {
        (Ok(r), Ok(a)) => (r, a),
        (r, a) => {
            eprintln!("FAIL replay error: {:?} / {:?}", r.err(), a.err());
            return EXIT_INTERNAL;
        }
    };
    let empty = Default::default();
    for (k, instruction) in book.iter().enumerate() {
        tally.steps += 1;
        let prev: &cda_core::StepOutput = if k == 0 { &empty } else { &reference[k - 1] };
        let (r, a) = (&reference[k], &alt[k]);
        let same = same_orders(&r.resident_bids, &a.resident_bids)
            && same_orders(&r.resident_asks, &a.resident_asks)
            && canonical_form(&r.matching).ok() == canonical_form(&a.matching).ok();
        if !same {
            tally.fail(format!("step {k}: engine and alternative process disagree"));
        }
        for (name, out) in [("engine", r), ("alternative", a)] {
            match check_step(&prev.resident_bids, &prev.resident_asks, instruction, out) {
                Ok(report) if report.holds() => {}
                Ok(report) => tally.fail(format!("step {k}: {name} {report}")),
                Err(e) => tally.fail(format!("step {k}: {name} {e}")),
            }
        }
        let absorbed = absorb(&prev.resident_bids, &prev.resident_asks, instruction);
        let small = absorbed.bids.len() <= MAX_ORACLE_ORDERS_PER_SIDE
            && absorbed.asks.len() <= MAX_ORACLE_ORDERS_PER_SIDE
            && absorbed.orders().all(|o| o.qty() <= MAX_ORACLE_QTY);
        if small {
            tally.oracle_steps += 1;
            match (vol(&r.matching), max_matching_volume(&absorbed)) {
                (Ok(v), Ok(best)) if v == best => {}
                (v, best) => tally.fail(format!("step {k}: volume {v:?} but maximum {best:?}")),
            }
        }
    }

    let log: Vec<Vec<Transaction>> = reference
        .iter()
        .map(|s| canonical_form(&s.matching).expect("engine matchings do not overflow"))
        .collect();
    let report = cda_core::check_logs(&book, &log, CheckOptions::default());
    if report.verdict != Verdict::Match {
        tally.fail(format!("engine log does not check clean:\n{report}"));
    }
    let mut mutations = 0;
    for kind in Mutation::ALL {
        let Ok((mutated, step)) = mutate_trade_log(&log, kind, params.seed) else {
            continue;
        };
        mutations += 1;
        let report = cda_core::check_logs(&book, &mutated, CheckOptions::default());
        let caught = report.verdict == Verdict::Mismatch
            && report.mismatch_step.is_some_and(|s| s.index <= step);
        if !caught {
            tally.fail(format!(
                "{} mutation at step {step} not detected",
                kind.name()
            ));
        }
    }

    println!(
        "seed {}: {} steps, {} against the volume oracle, {} mutations, {} failures",
        params.seed,
        tally.steps,
        tally.oracle_steps,
        mutations,
        tally.failures.len()
    );
    if tally.failures.is_empty() {
        0
    } else {
        EXIT_INTERNAL
    }
}
