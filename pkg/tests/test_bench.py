from veriledger.bench import CONTRACT, PAYMENT, bench, format_table


def test_rows_cover_grid():
    rows = bench(block_sizes=(1, 4), accounts=(20, 40), runs=2, min_txs=4, senders=4)
    assert [(r.block_size, r.accounts) for r in rows] == [(1, 20), (4, 20), (1, 40), (4, 40)]
    assert all(r.kind == PAYMENT and r.runs == 2 and r.mean_tps > 0 and r.std_tps >= 0 for r in rows)
    assert "tx/s mean" in format_table(rows)


def test_contract_workload_executes_token_transfers():
    from veriledger.bench import _Workload
    from veriledger.vm import OK

    w = _Workload(30, CONTRACT, 0, 4)
    txs = w.signed(6)
    w.time_blocks([txs])
    blk = w.world.operator.store.get(len(w.world.operator.store))
    assert [r.status for r in blk.rcps] == [OK] * 6
