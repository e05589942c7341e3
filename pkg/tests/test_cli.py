import csv
import json

import pytest
import yaml

from chanceplan.cli import main, parser
from chanceplan.scenarios import make_highway


def test_every_command_is_registered():
    sub = parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"risk-bench", "grad-check", "plan", "highway", "left-turn", "tube-build", "tube-validate"}


def test_risk_bench_writes_tables(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"benchmark": {"n": 2, "mc_samples": 10_000}}))
    assert main(["risk-bench", "--config", str(cfg), "--kinds", "gaussian", "--grid-k", "8",
                 "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "tightness_cases.csv")))
    assert len(rows) == 2
    assert (tmp_path / "tightness_summary.csv").exists()
    assert (tmp_path / "relaxation.svg").read_text().startswith("<?xml")
    assert "kind=gaussian" in capsys.readouterr().out


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grad_check": {"n": 5}}))
    main(["grad-check", "--config", str(cfg), "--n", "1", "--kinds", "beta", "--out", str(tmp_path)])
    rows = list(csv.DictReader(open(tmp_path / "grad_check_cases.csv")))
    assert len(rows) == 1


def test_plan_from_scenario_file(tmp_path):
    s = make_highway(1)
    s.save(tmp_path / "s.json")
    main(["plan", "--scenario", str(tmp_path / "s.json"), "--eps", "0.05", "--no-time-limit", "--out", str(tmp_path)])
    res = json.loads((tmp_path / "plan.json").read_text())
    assert res["status"] in ("feasible", "infeasible", "timeout")
    if res["status"] == "feasible":
        assert res["certified_risk"] <= 0.05
        assert (tmp_path / "plan.svg").exists()


def test_unknown_command_fails():
    with pytest.raises(SystemExit):
        main(["drive"])
