"""Throughput harness: time block production over pre-signed transactions.

Each measurement times only ``Operator.run_block`` (partial-state extraction,
enclave execution with signature recovery and integrity checks, header and
history updates, sealing). Anchoring on chain is not timed; the enclave is
flushed after every block as if each sync were confirmed at once.
Transactions are signed beforehand by a pool of sender accounts; the rest of
the state is filler accounts so the trie has the requested size. Recipients are drawn from existing accounts, so the state does
not grow while measuring.
"""

from __future__ import annotations

import gc
import math
import random
import statistics
import time
from dataclasses import asdict, dataclass

from .client import Client
from .operator import OperatorConfig
from .vm import contract_address, token_code, token_init_call, token_transfer_call
from .world import World, filler_ids

PAYMENT = "payment"
CONTRACT = "contract"
KINDS = (PAYMENT, CONTRACT)

DEFAULT_BLOCK_SIZES = (1, 10, 100, 1000)
DEFAULT_ACCOUNTS = (1000, 10000)


@dataclass(frozen=True)
class BenchRow:
    block_size: int
    accounts: int
    kind: str
    runs: int
    txs_per_run: int
    mean_tps: float
    std_tps: float

    def to_dict(self) -> dict:
        return asdict(self)


class _Workload:
    """A world of ``accounts`` accounts and a generator of signed transactions."""

    def __init__(self, accounts: int, kind: str, seed: int, senders: int):
        if kind not in KINDS:
            raise ValueError(f"unknown tx kind {kind!r}")
        senders = min(senders, accounts)
        huge = 10**12
        cfg = OperatorConfig(fl_vm_txs=huge, fl_vm_time=float(huge), fl_pb_blocks=huge, fl_pb_time=float(huge))
        self.world = World(
            seed=f"bench/{seed}/{accounts}/{kind}",
            clients=senders,
            balance=10**15,
            filler=accounts - senders,
            config=cfg,
        )
        self.kind = kind
        self.rng = random.Random(f"{seed}/{accounts}/{kind}")
        self.senders: list[Client] = self.world.clients
        self.fillers = filler_ids(accounts - senders)
        self.token = None
        if kind == CONTRACT:
            self._setup_token()

    def _setup_token(self) -> None:
        op = self.world.operator
        owner = self.senders[0]
        deploy = owner.deploy(token_code())
        self.token = contract_address(owner.public, deploy.nonce)
        op.recv_tx(deploy)
        op.recv_tx(owner.call(self.token, token_init_call(10**30)))
        for c in self.senders[1:]:
            op.recv_tx(owner.call(self.token, token_transfer_call(c.id, 10**20)))
        op.run_block()

    def _recipient(self) -> bytes:
        if self.kind == CONTRACT or not self.fillers:
            return self.rng.choice(self.senders).id
        return self.rng.choice(self.fillers)

    def signed(self, n: int) -> list:
        txs = []
        for _ in range(n):
            c = self.rng.choice(self.senders)
            if self.kind == PAYMENT:
                txs.append(c.transfer(self._recipient(), 1))
            else:
                txs.append(c.call(self.token, token_transfer_call(self._recipient(), 1)))
        return txs

    def time_blocks(self, blocks: list[list]) -> float:
        op = self.world.operator
        elapsed = 0.0
        gc.collect()
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            for txs in blocks:
                op.txs_u = list(txs)
                t0 = time.perf_counter()
                op.run_block()
                elapsed += time.perf_counter() - t0
                # Stand-in for prompt anchoring: keeps the sealed state bounded.
                op.enclave.flush()
        finally:
            if was_enabled:
                gc.enable()
        return elapsed


def _row(block_size: int, workload: _Workload, rates: list[float], n_blocks: int) -> BenchRow:
    std = statistics.stdev(rates) if len(rates) > 1 else 0.0
    return BenchRow(
        block_size,
        len(workload.fillers) + len(workload.senders),
        workload.kind,
        len(rates),
        block_size * n_blocks,
        statistics.fmean(rates),
        std,
    )


def _one_run(block_size: int, workload: _Workload, n_blocks: int) -> float:
    blocks = [workload.signed(block_size) for _ in range(n_blocks)]
    return block_size * n_blocks / workload.time_blocks(blocks)


def measure(
    block_size: int,
    workload: _Workload,
    runs: int = 10,
    min_txs: int = 200,
) -> BenchRow:
    """Mean and std of tx/s over ``runs`` runs of ``ceil(min_txs / block_size)`` blocks."""
    n_blocks = max(1, math.ceil(min_txs / block_size))
    rates = [_one_run(block_size, workload, n_blocks) for _ in range(runs)]
    return _row(block_size, workload, rates, n_blocks)


def bench(
    block_sizes=DEFAULT_BLOCK_SIZES,
    accounts=DEFAULT_ACCOUNTS,
    kind: str = PAYMENT,
    runs: int = 10,
    min_txs: int = 200,
    senders: int = 64,
    seed: int = 0,
    warmup: bool = True,
) -> list[BenchRow]:
    """Runs for different state sizes are interleaved so slow drift of the
    machine (frequency scaling, other load) does not bias the comparison."""
    workloads = [_Workload(n, kind, seed, senders) for n in accounts]
    if warmup:
        for w in workloads:
            w.time_blocks([w.signed(min(block_sizes))])
    rows = {}
    for b in block_sizes:
        n_blocks = max(1, math.ceil(min_txs / b))
        rates: list[list[float]] = [[] for _ in workloads]
        for _ in range(runs):
            for i, w in enumerate(workloads):
                rates[i].append(_one_run(b, w, n_blocks))
        for n, w, r in zip(accounts, workloads, rates):
            rows[(n, b)] = _row(b, w, r, n_blocks)
    return [rows[(n, b)] for n in accounts for b in block_sizes]


def format_table(rows: list[BenchRow]) -> str:
    head = f"{'block':>6} {'accounts':>9} {'kind':>9} {'runs':>5} {'txs/run':>8} {'tx/s mean':>10} {'std':>8}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.block_size:>6} {r.accounts:>9} {r.kind:>9} {r.runs:>5} {r.txs_per_run:>8} {r.mean_tps:>10.1f} {r.std_tps:>8.1f}"
        )
    return "\n".join(lines)
