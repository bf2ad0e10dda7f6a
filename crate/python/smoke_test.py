"""Smoke test for the `cda` extension module.

Build the module first, e.g.

    cargo build -p cda-py --release --features extension-module
    cp target/release/libcda.so python/cda.so

or `pip install maturin && maturin develop -m crates/py/Cargo.toml`.
"""

import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cda  # noqa: E402


def main():
    buy = cda.Instruction.buy(cda.Order(1, 1, 5, 10))
    sell = cda.Instruction.sell(cda.Order(2, 2, 3, 8))
    steps = cda.run_book([buy, sell])
    assert steps[1].matching == [cda.Transaction(1, 2, 3)]
    assert steps[1].resident_bids == [cda.Order(1, 1, 2, 10)]
    assert steps[1].resident_asks == []
    assert cda.iterated([buy, sell], 0).matching == []

    out = cda.process_instruction([cda.Order(1, 1, 5, 10)], [], sell)
    assert cda.check_step([cda.Order(1, 1, 5, 10)], [], sell, out) == []

    try:
        cda.process_instruction([cda.Order(1, 1, 5, 10)], [cda.Order(2, 2, 1, 9)], sell)
    except ValueError as e:
        assert "tradable" in str(e), e
    else:
        raise AssertionError("illegal input accepted")

    merged = cda.canonical_form([cda.Transaction(2, 1, 1), cda.Transaction(1, 3, 2), cda.Transaction(1, 3, 1)])
    assert merged == [cda.Transaction(1, 3, 3), cda.Transaction(2, 1, 1)]

    bids = [cda.Order(1, 1, 2, 10), cda.Order(2, 2, 4, 9)]
    asks = [cda.Order(3, 3, 5, 9)]
    assert cda.max_matching_volume(bids, asks) == 5

    book = cda.generate_book(seed=7, n=500)
    assert book == cda.generate_book(seed=7, n=500)
    log = [s.matching for s in cda.run_book(book)]
    report = cda.check_logs(book, log)
    assert report.verdict == "match", str(report)

    step = next(k for k, m in enumerate(log) if m)
    t = log[step][0]
    log[step] = [cda.Transaction(t.bid_id, t.ask_id, t.qty + 1)] + log[step][1:]
    report = cda.check_logs(book, log)
    assert report.verdict == "mismatch"
    assert report.mismatch_step[0] == step
    assert report.diff[0][4] == -1
    assert json.loads(report.to_json())["verdict"] == "mismatch"

    orders = "BUY,1,1,5,10\nDELETE,2,2,,\nSELL,2,3,5,12\nBUY,3,4,5,12\n"
    assert cda.check_csv(orders, "").exit_code == 1
    assert cda.check_csv(orders, "", strict=True).verdict == "input_error"
    assert cda.check_csv(orders, "4,3,2,5\n").verdict == "match"
    assert len(cda.parse_order_book("MARKET_SELL,2,2,3,\nIOC_BUY,3,3,4,9\n")) == 3
    assert cda.parse_trade_book("100,1,2,3\n") == [(100, cda.Transaction(1, 2, 3))]

    print("python smoke test passed")


if __name__ == "__main__":
    main()
