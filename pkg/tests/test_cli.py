import json

import pytest

from veriledger.cli import main
from veriledger.demos import censor_demo, failover_demo, tamper_demo


def test_init(tmp_path, capsys):
    out = tmp_path / "init.json"
    assert main(["init", "--seed", "3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["result"]["attested"] == [True, True]
    assert "deployed ledger contract" in capsys.readouterr().out


def test_run_scenario_by_name_and_file(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["run-scenario", "tamper", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["passed"]
    f = tmp_path / "s.json"
    f.write_text(json.dumps({"name": "mini", "steps": [{"op": "assert", "check": "root_version", "value": 1}]}))
    assert main(["run-scenario", str(f)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_run_scenario_errors(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text('{"steps": [\n  {"op": }\n]}')
    assert main(["run-scenario", str(f)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["run-scenario", "no-such-thing"]) == 2


def test_bench_small(tmp_path, capsys):
    out = tmp_path / "b.json"
    args = ["bench", "--block-sizes", "1,5", "--accounts", "50", "--kind", "contract", "--runs", "2", "--min-txs", "5", "--out", str(out)]
    assert main(args) == 0
    rows = json.loads(out.read_text())
    assert [(r["block_size"], r["accounts"], r["kind"]) for r in rows] == [(1, 50, "contract"), (5, 50, "contract")]
    assert all(r["mean_tps"] > 0 for r in rows)


def test_bench_rejects_bad_sizes():
    with pytest.raises(SystemExit):
        main(["bench", "--block-sizes", "0,x"])


@pytest.mark.parametrize("cmd", ["censor-demo", "tamper-demo", "failover-demo"])
def test_demo_commands(cmd, capsys):
    assert main([cmd, "--seed", "1"]) == 0
    assert capsys.readouterr().out.strip()


def test_demo_outcomes():
    assert censor_demo(2)[1]["tx_status"] == "INCLUDED"
    assert tamper_demo(2)[1]["detected"]
    r = failover_demo(2)[1]
    assert r["restored"] and r["roots_match"] and r["keys_after"] == r["keys_before"] + 1


def test_module_entry_point():
    import subprocess
    import sys

    p = subprocess.run([sys.executable, "-m", "veriledger", "--help"], capture_output=True, text=True)
    assert p.returncode == 0 and "run-scenario" in p.stdout
