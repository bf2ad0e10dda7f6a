use std::collections::HashMap;

use cda_core::domain::{
    canonical_form, is_matching, more_competitive_ask, more_competitive_bid, multiset_diff,
    qty_ask, qty_bid, traded_bids, vol, Instruction, Order, OrderDomain, Transaction,
};
use cda_core::engine::{
    absorb, iterated, process_instruction, run_book, run_book_with, ReferenceProcess,
};
use cda_core::oracle::{
    alt_process, generate_book, max_matching_volume, random_legal_input, rng, AltProcess,
    GenParams, LegalInputBounds,
};
use cda_core::properties::{
    check_conservation, check_positive_spread, check_step, is_structured, StructureReason,
};
use proptest::prelude::*;

fn orders(max_len: usize) -> impl Strategy<Value = Vec<Order>> {
    prop::collection::vec((1u64..20, 0u64..20), 0..max_len).prop_flat_map(|fields| {
        let n = fields.len() as u64;
        Just((1..=n).collect::<Vec<u64>>())
            .prop_shuffle()
            .prop_map(move |stamps| {
                fields
                    .iter()
                    .zip(stamps)
                    .enumerate()
                    .map(|(i, (&(qty, price), ts))| {
                        Order::new(i as u64 + 1, ts, qty, price).unwrap()
                    })
                    .collect()
            })
    })
}

fn transactions() -> impl Strategy<Value = Vec<Transaction>> {
    prop::collection::vec((1u64..6, 1u64..6, 1u64..10), 0..12).prop_map(|v| {
        v.into_iter()
            .map(|(b, a, q)| Transaction::new(b, a, q).unwrap())
            .collect()
    })
}

fn small_book(seed: u64, n: usize) -> Vec<Instruction> {
    generate_book(&GenParams {
        seed,
        num_instructions: n,
        max_price: 10,
        max_qty: 10,
        ..GenParams::default()
    })
    .unwrap()
}

fn retime(ins: &Instruction, ts: u64) -> Instruction {
    match ins {
        Instruction::Buy(o) => {
            Instruction::Buy(Order::new(o.id(), ts, o.qty(), o.price()).unwrap())
        }
        Instruction::Sell(o) => {
            Instruction::Sell(Order::new(o.id(), ts, o.qty(), o.price()).unwrap())
        }
        Instruction::Del { id, .. } => Instruction::Del {
            id: *id,
            timestamp: ts,
        },
    }
}

fn pair_totals(m: &[Transaction]) -> HashMap<(u64, u64), u64> {
    let mut totals = HashMap::new();
    for t in m {
        *totals.entry(t.pair()).or_insert(0) += t.qty();
    }
    totals
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn competitiveness_is_strict_total_order(set in orders(8)) {
        for rel in [more_competitive_bid as fn(&Order, &Order) -> bool, more_competitive_ask] {
            for a in &set {
                prop_assert!(!rel(a, a));
                for b in &set {
                    if a.id() != b.id() {
                        prop_assert!(rel(a, b) != rel(b, a));
                    }
                    for c in &set {
                        if rel(a, b) && rel(b, c) {
                            prop_assert!(rel(a, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn volume_identities(m in transactions()) {
        let total = vol(&m).unwrap();
        let mut bid_ids: Vec<u64> = m.iter().map(|t| t.bid_id()).collect();
        bid_ids.sort_unstable();
        bid_ids.dedup();
        let mut ask_ids: Vec<u64> = m.iter().map(|t| t.ask_id()).collect();
        ask_ids.sort_unstable();
        ask_ids.dedup();
        prop_assert_eq!(total, bid_ids.iter().map(|&id| qty_bid(&m, id).unwrap()).sum::<u64>());
        prop_assert_eq!(total, ask_ids.iter().map(|&id| qty_ask(&m, id).unwrap()).sum::<u64>());
    }

    #[test]
    fn canonical_form_laws(m in transactions()) {
        let c = canonical_form(&m).unwrap();
        prop_assert_eq!(&canonical_form(&c).unwrap(), &c);
        prop_assert_eq!(vol(&c).unwrap(), vol(&m).unwrap());
        prop_assert_eq!(pair_totals(&c), pair_totals(&m));
        prop_assert!(c.windows(2).all(|w| w[0].pair() < w[1].pair()));
    }

    #[test]
    fn canonical_form_keeps_matchings(bids in orders(5), asks in orders(5), m in transactions()) {
        let asks: Vec<Order> = asks
            .iter()
            .map(|a| Order::new(a.id(), a.timestamp() + 100, a.qty(), a.price()).unwrap())
            .collect();
        let d = OrderDomain::new(bids, asks);
        if is_matching(&m, &d) {
            prop_assert!(is_matching(&canonical_form(&m).unwrap(), &d));
        }
    }

    #[test]
    fn residual_orders_are_well_formed(seed in any::<u64>()) {
        let bounds = LegalInputBounds { max_residents_per_side: 8, max_qty: 10, max_price: 10 };
        let (bids, asks, instruction) = random_legal_input(&mut rng(seed), &bounds);
        let absorbed = absorb(&bids, &asks, &instruction);
        let out = process_instruction(&bids, &asks, &instruction).unwrap();
        let traded = traded_bids(&out.matching, &absorbed.bids).unwrap();
        let rest = multiset_diff(&absorbed.bids, &traded).unwrap();
        for survivor in &rest {
            prop_assert!(survivor.qty() > 0);
            let original = absorbed.find_bid(survivor.id()).unwrap();
            prop_assert!(survivor.same_identity(original));
            prop_assert_eq!(survivor.price(), original.price());
        }
    }

    #[test]
    fn process_instruction_has_the_three_properties(seed in any::<u64>()) {
        let bounds = LegalInputBounds { max_residents_per_side: 10, max_qty: 20, max_price: 20 };
        let (bids, asks, instruction) = random_legal_input(&mut rng(seed), &bounds);
        let out = process_instruction(&bids, &asks, &instruction).unwrap();
        let report = check_step(&bids, &asks, &instruction, &out).unwrap();
        prop_assert!(report.holds(), "{}", report);
        let alt = alt_process(&bids, &asks, &instruction).unwrap();
        prop_assert!(check_step(&bids, &asks, &instruction, &alt).unwrap().holds());
    }

    #[test]
    fn engine_volume_is_maximal(seed in any::<u64>()) {
        let bounds = LegalInputBounds { max_residents_per_side: 3, max_qty: 5, max_price: 8 };
        let (bids, asks, instruction) = random_legal_input(&mut rng(seed), &bounds);
        let out = process_instruction(&bids, &asks, &instruction).unwrap();
        let absorbed = absorb(&bids, &asks, &instruction);
        prop_assert!(check_positive_spread(&out.resident_bids, &out.resident_asks).holds());
        prop_assert!(check_conservation(
            &absorbed.bids, &absorbed.asks, &out.resident_bids, &out.resident_asks, &out.matching
        ).holds());
        prop_assert_eq!(vol(&out.matching).unwrap(), max_matching_volume(&absorbed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn run_book_agrees_with_iterated(seed in any::<u64>()) {
        let book = small_book(seed, 40);
        let steps = run_book(&book).unwrap();
        prop_assert_eq!(iterated(&book, 0).unwrap(), Default::default());
        prop_assert_eq!(iterated(&book, book.len() + 1).unwrap(), Default::default());
        for (k, step) in steps.iter().enumerate() {
            prop_assert_eq!(step, &iterated(&book, k + 1).unwrap());
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let book = small_book(seed, 200);
        prop_assert_eq!(&book, &small_book(seed, 200));
        prop_assert_eq!(run_book(&book).unwrap(), run_book(&book).unwrap());
    }

    #[test]
    fn alternative_process_agrees(seed in any::<u64>()) {
        let book = small_book(seed, 200);
        let reference = run_book_with(&ReferenceProcess, &book).unwrap();
        let alt = run_book_with(&AltProcess, &book).unwrap();
        for (r, a) in reference.iter().zip(&alt) {
            prop_assert!(cda_core::domain::same_orders(&r.resident_bids, &a.resident_bids));
            prop_assert!(cda_core::domain::same_orders(&r.resident_asks, &a.resident_asks));
            prop_assert_eq!(canonical_form(&r.matching).unwrap(), canonical_form(&a.matching).unwrap());
        }
    }

    #[test]
    fn generated_books_are_structured(seed in any::<u64>(), n in 2usize..300) {
        let book = small_book(seed, n);
        prop_assert!(is_structured(&book).is_ok());

        let mut swapped = book.clone();
        let i = (seed as usize) % (n - 1);
        let (a, b) = (swapped[i].timestamp(), swapped[i + 1].timestamp());
        swapped[i] = retime(&swapped[i], b);
        swapped[i + 1] = retime(&swapped[i + 1], a);
        let v = is_structured(&swapped).unwrap_err();
        prop_assert_eq!(v.reason, StructureReason::Timestamps);

        // an order re-using an earlier id without a delete right before it
        let j = book.iter().position(|ins| ins.order().is_some()).unwrap();
        let mut dup = book.clone();
        let victim = dup.iter().rposition(|ins| ins.order().is_some()).unwrap();
        if victim > j + 1 || (victim == j + 1 && !matches!(dup[j], Instruction::Del { .. })) {
            let o = dup[victim].order().unwrap();
            let copy = Order::new(book[j].id(), o.timestamp(), o.qty(), o.price()).unwrap();
            dup[victim] = match dup[victim] {
                Instruction::Buy(_) => Instruction::Buy(copy),
                _ => Instruction::Sell(copy),
            };
            if !matches!(dup[victim - 1], Instruction::Del { id, .. } if id == copy.id()) {
                prop_assert!(is_structured(&dup).is_err());
            }
        }
    }
}
