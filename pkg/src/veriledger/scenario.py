"""JSON scenario runner.

A scenario file is a JSON object::

    {
      "name": "happy-path",
      "seed": 7,
      "config": {"clients": 2, "balance": 1000, "filler": 0, "delay": 0,
                 "fl_vm_txs": 2, "fl_vm_time": 1.0, "fl_pb_blocks": 5, "fl_pb_time": 10.0},
      "steps": [ {"op": "transfer", "from": 0, "to": 1, "amount": 5, "label": "t1"}, ... ]
    }

Step operations (``client``/``from``/``to`` are client indices):

    transfer {from, to, amount, label?}       deploy {from, contract: token|counter, label?}
    call {from, target: label, token_init | token_transfer: [to, amount] | counter, label?}
    block                                     sync
    advance {seconds}                         chain_tick {n}
    censor {client, on}                       deadbeat {on}
    ticket {client, expiry}                   events
    escalate_tx {client, tx: label, as}       escalate_garbage {client, as, query?}
    escalate_read_tx {client, tx, block?, as} escalate_read_as {client, account | absent, as}
    kill_enclave                              restore {expect: ok | abort}
    tamper {block, byte}
    assert {check, ...}

Assertion checks: ``receipt`` {tx, expect}, ``resolution`` {req, status},
``pending`` {req}, ``attest`` {client, expect}, ``anchored`` (contract root
equals the ledger root), ``keys`` {count}, ``balance`` {client, value},
``root_version`` {value}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .chain import jsonable
from .client import ClientError
from .crypto import digest
from .operator import OperatorConfig, RestoreError
from .vm import (
    contract_address,
    counter_code,
    token_code,
    token_init_call,
    token_transfer_call,
)
from .world import World


class ScenarioError(Exception):
    pass


def parse_scenario(text: str) -> dict:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(spec, dict) or not isinstance(spec.get("steps"), list):
        raise ScenarioError("line 1: scenario must be an object with a 'steps' list")
    return spec


def load_scenario(path: str | Path) -> dict:
    return parse_scenario(Path(path).read_text())


def bundled_names() -> list[str]:
    root = resources.files("veriledger") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled(name: str) -> dict:
    text = (resources.files("veriledger") / "scenarios" / f"{name}.json").read_text()
    return parse_scenario(text)


@dataclass
class _Run:
    world: World
    txs: dict = field(default_factory=dict)
    reqs: dict = field(default_factory=dict)
    contracts: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    log: list = field(default_factory=list)


def _client(run: _Run, step: dict, key: str = "client"):
    try:
        return run.world.clients[step[key]]
    except (KeyError, IndexError, TypeError) as exc:
        raise ScenarioError(f"unknown client {step.get(key)!r}") from exc


def _tx(run: _Run, label: str):
    if label not in run.txs:
        raise ScenarioError(f"unknown transaction label {label!r}")
    return run.txs[label]


def _req(run: _Run, label: str) -> int:
    if label not in run.reqs:
        raise ScenarioError(f"unknown request label {label!r}")
    return run.reqs[label]


def _step(run: _Run, step: dict) -> Any:
    w = run.world
    op = w.operator
    kind = step.get("op")
    if kind == "transfer":
        c = _client(run, step, "from")
        tx = c.transfer(w.clients[step["to"]].id, step["amount"])
        run.txs[step.get("label", f"tx{len(run.txs)}")] = tx
        return {"accepted": c.submit(tx), "tx": tx.hash()}
    if kind == "deploy":
        c = _client(run, step, "from")
        code = {"token": token_code, "counter": counter_code}[step["contract"]]()
        tx = c.deploy(code)
        label = step.get("label", f"tx{len(run.txs)}")
        run.txs[label] = tx
        run.contracts[label] = contract_address(c.public, tx.nonce)
        return {"accepted": c.submit(tx), "address": run.contracts[label]}
    if kind == "call":
        c = _client(run, step, "from")
        target = run.contracts.get(step["target"])
        if target is None:
            raise ScenarioError(f"unknown contract label {step['target']!r}")
        if "token_init" in step:
            data = token_init_call(step["token_init"])
        elif "token_transfer" in step:
            to, amount = step["token_transfer"]
            data = token_transfer_call(w.clients[to].id, amount)
        else:
            data = b""
        tx = c.call(target, data)
        run.txs[step.get("label", f"tx{len(run.txs)}")] = tx
        return {"accepted": c.submit(tx)}
    if kind == "block":
        blk = op.run_block(force=True)
        return {"block": blk.hdr.id, "txs": len(blk.txs)}
    if kind == "sync":
        return {"accepted": op.sync(), "version": op.lroot_pb.version}
    if kind == "advance":
        w.advance(step["seconds"])
        return {"now": w.clock.now()}
    if kind == "chain_tick":
        w.chain.tick(step.get("n", 1))
        op.tick()
        return {"height": w.chain.height}
    if kind == "censor":
        c = _client(run, step)
        if step.get("on", True):
            op.censored_clients.add(c.public)
        else:
            op.censored_clients.discard(c.public)
        return {}
    if kind == "deadbeat":
        op.deadbeat = bool(step.get("on", True))
        return {}
    if kind == "ticket":
        _client(run, step).request_ticket(step["expiry"])
        return {}
    if kind == "events":
        op.tick()
        return {}
    if kind == "escalate_tx":
        idx = _client(run, step).escalate_tx(_tx(run, step["tx"]))
        run.reqs[step["as"]] = idx
        return {"idx": idx}
    if kind == "escalate_garbage":
        blob = digest(b"garbage" + str(step["as"]).encode()) * 3
        idx = _client(run, step).escalate_raw(blob, query=step.get("query", False))
        run.reqs[step["as"]] = idx
        return {"idx": idx}
    if kind == "escalate_read_tx":
        c = _client(run, step)
        tx = _tx(run, step["tx"])
        block = step.get("block")
        if block is None:
            block = op.tx_index.get(tx.hash(), 0)
        idx = c.escalate_qry(c.read_tx_query(tx.hash(), block))
        run.reqs[step["as"]] = idx
        return {"idx": idx, "block": block}
    if kind == "escalate_read_as":
        c = _client(run, step)
        if step.get("account") == "absent":
            aid = digest(b"absent account")
        else:
            aid = w.clients[step["account"]].id
        idx = c.escalate_qry(c.read_as_query(aid))
        run.reqs[step["as"]] = idx
        return {"idx": idx}
    if kind == "kill_enclave":
        w.kill_enclave()
        return {}
    if kind == "restore":
        expect = step.get("expect", "ok")
        try:
            w.restore()
            outcome = "ok"
        except RestoreError as exc:
            outcome = "abort"
            run.log.append(f"restore aborted: {exc}")
        _check(run, "restore", outcome == expect, {"expected": expect, "got": outcome})
        return {"outcome": outcome}
    if kind == "tamper":
        op.store.tamper(step["block"], step["byte"])
        return {}
    if kind == "assert":
        return _assert(run, step)
    raise ScenarioError(f"unknown op {kind!r}")


def _check(run: _Run, check: str, passed: bool, detail: dict) -> dict:
    entry = {"check": check, "passed": bool(passed), "detail": detail}
    run.assertions.append(entry)
    return entry


def _assert(run: _Run, step: dict) -> dict:
    w = run.world
    check = step.get("check")
    if check == "receipt":
        tx = _tx(run, step["tx"])
        try:
            ok = w.clients[0].verify_receipt(w.operator.serve_receipt(tx.hash()), tx)
        except Exception:
            ok = False
        expect = step.get("expect", True)
        return _check(run, check, ok == expect, {"tx": step["tx"], "verified": ok, "expected": expect})
    if check in ("resolution", "pending"):
        idx = _req(run, step["req"])
        res = w.clients[0].check_resolution(idx)
        want = step.get("status", "PENDING") if check == "resolution" else "PENDING"
        return _check(run, check, res.status == want and (res.pending or res.verified), {"req": step["req"], "status": res.status, "expected": want})
    if check == "attest":
        ok = _client(run, step).attest()
        expect = step.get("expect", True)
        return _check(run, check, ok == expect, {"attested": ok, "expected": expect})
    if check == "anchored":
        c = w.contract.lroot_pb
        return _check(run, check, c == w.operator.lroot_cur, {"contract_version": c.version, "ledger_version": w.operator.lroot_cur.version})
    if check == "keys":
        n = len(w.contract.pk_pb)
        return _check(run, check, n == step["count"], {"keys": n, "expected": step["count"]})
    if check == "balance":
        acct, _ = w.operator.get_account(_client(run, step).id)
        bal = acct.balance if acct else 0
        return _check(run, check, bal == step["value"], {"balance": bal, "expected": step["value"]})
    if check == "root_version":
        v = w.contract.lroot_pb.version
        return _check(run, check, v == step["value"], {"version": v, "expected": step["value"]})
    raise ScenarioError(f"unknown check {check!r}")


def run_scenario(spec: dict, seed: int | None = None) -> dict:
    cfg = dict(spec.get("config", {}))
    op_cfg = OperatorConfig(
        fl_vm_txs=cfg.pop("fl_vm_txs", 100),
        fl_vm_time=cfg.pop("fl_vm_time", 1.0),
        fl_pb_blocks=cfg.pop("fl_pb_blocks", 5),
        fl_pb_time=cfg.pop("fl_pb_time", 10.0),
    )
    use_seed = spec.get("seed", 0) if seed is None else seed
    try:
        world = World(seed=use_seed, config=op_cfg, **cfg)
    except TypeError as exc:
        raise ScenarioError(f"bad config: {exc}") from exc
    run = _Run(world)
    steps = []
    for i, step in enumerate(spec["steps"]):
        if not isinstance(step, dict):
            raise ScenarioError(f"step {i}: not an object")
        try:
            result = _step(run, step)
        except ScenarioError as exc:
            raise ScenarioError(f"step {i} ({step.get('op')}): {exc}") from exc
        except (KeyError, TypeError, ValueError, ClientError) as exc:
            raise ScenarioError(f"step {i} ({step.get('op')}): {type(exc).__name__}: {exc}") from exc
        steps.append({"index": i, "op": step.get("op"), "result": result})
    op = world.operator
    report = {
        "name": spec.get("name", "scenario"),
        "seed": use_seed,
        "passed": all(a["passed"] for a in run.assertions),
        "assertions": run.assertions,
        "steps": steps,
        "final": {
            "contract_root": world.contract.lroot_pb,
            "lroot_pb": op.lroot_pb,
            "lroot_cur": op.lroot_cur,
            "state_root": op.state.root,
            "blocks": len(op.store),
            "enclave_keys": len(world.contract.pk_pb),
        },
        "faults": op.faults,
        "log": run.log,
        "events": [
            {"height": e.height, "seq": e.seq, "topic": e.topic, "payload": e.payload}
            for e in world.chain.events
        ],
    }
    return jsonable(report)


def report_bytes(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, indent=2).encode()


def summarize(report: dict) -> str:
    lines = [f"scenario {report['name']} (seed {report['seed']}): {'PASS' if report['passed'] else 'FAIL'}"]
    for a in report["assertions"]:
        lines.append(f"  [{'ok' if a['passed'] else 'FAIL'}] {a['check']} {json.dumps(a['detail'], sort_keys=True)}")
    f = report["final"]
    lines.append(f"  contract root v{f['contract_root'][0]} {f['contract_root'][1][:16]}  ledger v{f['lroot_cur'][0]}  blocks {f['blocks']}")
    return "\n".join(lines)


def run_suite(seed: int | None = None) -> dict:
    return {name: run_scenario(bundled(name), seed) for name in bundled_names()}
