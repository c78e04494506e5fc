from __future__ import annotations

import io
import json
import math

import pytest

from treegibbs import cli


def _write(tmp_path, model, run=None, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps({"model": model, "run": run or {}}))
    return str(p)


def _run(argv):
    out = io.StringIO()
    code = cli.main(argv, stdout=out)
    return code, out.getvalue()


def test_chain_info_potts_p1(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 2.0})
    code, out = _run(["chain-info", cfg])
    assert code == 0
    rec = json.loads(out)
    assert rec["chain"]["p1"] == pytest.approx(1 / (math.exp(2) + 1), abs=1e-12)
    assert rec["schema"] == cli.SCHEMA and rec["build"].startswith("0.1.0+")
    assert rec["config"]["model"]["beta"] == 2.0


def test_chain_info_clock_uniform_marginal(tmp_path):
    cfg = _write(tmp_path, {"q": 4, "d": 2, "beta": 1.0, "clock_flag": True,
                            "pair_energy": [[0, 1, 2, 1], [1, 0, 1, 2], [2, 1, 0, 1], [1, 2, 1, 0]]})
    code, out = _run(["chain-info", cfg])
    assert code == 0
    assert json.loads(out)["chain"]["marginal"] == pytest.approx([0.25] * 4)


def test_flag_overrides_config(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 2.0})
    code, out = _run(["chain-info", cfg, "--beta", "3.0"])
    assert json.loads(out)["chain"]["p1"] == pytest.approx(1 / (math.exp(3) + 1))


def test_malformed_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["chain-info", str(p)]) == 2
    assert "malformed" in capsys.readouterr().err
    assert cli.main(["chain-info", str(tmp_path / "missing.json")]) == 2
    bad_model = _write(tmp_path, {"q": 2, "d": 2, "beta": -1.0}, name="neg.json")
    assert cli.main(["chain-info", bad_model]) == 2


def test_seed_is_mandatory(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 2.0}, {"N": 1000, "depths": [2]})
    assert cli.main(["estimate", "qea", cfg]) == 2


def test_guard_exit_3(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 3, "beta": 2.0}, {"N": 1000, "seed": 1, "L": 12})
    assert cli.main(["estimate", "bad-rate", cfg]) == 3


def test_numerical_failure_exit_4(tmp_path):
    beta = 2 * math.atanh(0.5)
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": beta, "field": [0.0, 0.01]})
    assert cli.main(["chain-info", cfg]) == 4


def test_bounds_command(tmp_path):
    cfg = _write(tmp_path, {"q": 3, "d": 2, "beta": 16.0})
    code, out = _run(["bounds", cfg])
    rec = json.loads(out)
    assert code == 0 and rec["bounds"]["delta0"] == pytest.approx(0.25)
    assert "eigen" in rec


def test_qea_one_record_per_depth_and_deterministic(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 2.0}, {"N": 1000, "seed": 3, "depths": [1, 2, 3]})
    code, a = _run(["estimate", "qea", cfg])
    assert code == 0
    lines = a.strip().split("\n")
    assert [json.loads(x)["n"] for x in lines] == [1, 2, 3]
    assert "delta" in json.loads(lines[1])["report"]
    _, b = _run(["estimate", "qea", cfg])
    _, c = _run(["estimate", "qea", cfg, "--workers", "2"])
    assert a == b == c


def test_overlap_csv_columns(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 3.0}, {"N": 1000, "seed": 4, "depths": [6]})
    assert cli.main(["estimate", "overlap", cfg]) == 0
    header = (tmp_path / "out" / "overlap.csv").read_text().split("\n")[0].split(",")
    assert {"matched", "mismatched", "gap"} <= set(header)
    rec = json.loads((tmp_path / "out" / "overlap.jsonl").read_text())
    assert rec["estimator"] == "overlap"


def test_cov_decay_and_bad_rate_records(tmp_path):
    cfg = _write(tmp_path, {"q": 2, "d": 2, "beta": 2.5},
                 {"N": 1000, "seed": 5, "L": 2, "distances": [1, 2, 6], "output": str(tmp_path / "c.jsonl")})
    assert cli.main(["estimate", "cov-decay", cfg]) == 0
    rec = json.loads((tmp_path / "c.jsonl").read_text())
    assert rec["report"]["distances"] == [1, 2, 6] and rec["config"]["run"]["L"] == 2
    assert (tmp_path / "c.csv").exists()
    code, out = _run(["estimate", "bad-rate", cfg, "--L-values", "1,2", "--output", str(tmp_path / "b.jsonl")])
    assert code == 0
    rec = json.loads((tmp_path / "b.jsonl").read_text())
    assert rec["report"]["L"] == 2 and rec["config"]["run"]["seed"] == 5


def test_verify_quick_passes():
    code, out = _run(["verify", "--quick"])
    assert code == 0
    assert "tol=" in out and out.strip().endswith("cases passed")


def test_unknown_subcommand_exit_2():
    assert cli.main(["nope"]) == 2
