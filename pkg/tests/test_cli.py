import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from mvtreat import io
from mvtreat.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_algebra_builtin(tmp_path, capsys):
    assert main(["algebra", "--builtin", "two_way_flows", "--out", str(tmp_path)]) == 0
    report = io.read_json(tmp_path / "algebra.json")
    assert report["partition"] == "rules partition {0,1}^J"
    assert len(report["treatments"]) == 3
    assert "index" in capsys.readouterr().out


def test_algebra_parse_error_reports_position(capsys):
    assert main(["algebra", "--expr", "A AND (B", "--labels", "A,B"]) == 3
    assert "position 8" in capsys.readouterr().err


def test_algebra_partition_violation(tmp_path, capsys):
    cfg = {"model": {"labels": ["S1", "S2"], "names": ["a", "b"],
                     "rules": [{"table": [1, 1, 1, 0]}, {"table": [0, 1, 1, 1]}]}}
    assert main(["algebra", "--config", write_config(tmp_path / "m.yaml", cfg)]) == 3
    assert "vertex (1, 0): rules sum to 2" in capsys.readouterr().out


@pytest.mark.parametrize("cfg, argv, message", [
    ({"dgp": "double_hurdle", "run": {"n": 10}}, [], "seed is mandatory"),
    ({"dgp": "double_hurdle", "run": {"n": 0, "seed": 0}}, [], "run.n"),
    ({"dgp": "nonexistent", "run": {"n": 10, "seed": 0}}, [], "nonexistent"),
    ({"run": {"n": 10, "seed": 0}}, [], "dgp block"),
])
def test_simulate_input_errors(tmp_path, capsys, cfg, argv, message):
    path = write_config(tmp_path / "c.yaml", cfg)
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o"), *argv]) == 3
    assert message in capsys.readouterr().err


def test_usage_errors_are_input_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["estimate", "--mode", "bogus"])
    assert e.value.code == 3


def test_simulate_is_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {"dgp": "two_way_flows", "run": {"n": 2000, "seed": 4}})
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("sample.csv", "simulate.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert io.verify_manifest(tmp_path / "a") == []
    man = io.read_json(tmp_path / "a" / io.MANIFEST)
    assert set(man["files"]) == {"sample.csv", "simulate.json"}


def test_estimate_oracle(tmp_path):
    assert main(["estimate", "--config", str(CONFIGS / "two_way_oracle.yaml"), "--out", str(tmp_path)]) == 0
    report = io.read_json(tmp_path / "estimate.json")
    assert report["rmse_mte1_0_vs_truth"] < 1e-5
    assert report["rmse_mte2_0_vs_truth"] < 1e-5
    assert report["specification_test"]["passed"]
    cols, _ = io.read_table(tmp_path / "estimate.csv")
    assert len(cols["q1"]) == 13 * 13


def test_identify_two_way_oracle(tmp_path):
    assert main(["identify-q", "--config", str(CONFIGS / "two_way_oracle.yaml"),
                 "--out", str(tmp_path)]) == 0
    report = io.read_json(tmp_path / "identify.json")
    assert max(report["sup_error_vs_truth"]) < 1e-9


def test_aggregate_prte_and_bounds(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {"dgp": "double_hurdle", "run": {"seed": 0},
                                              "aggregate": {"estimand": "prte", "shift": 0.1}})
    assert main(["aggregate", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    prte = io.read_json(tmp_path / "p" / "prte.json")
    assert prte["delta_treatment"] > 0 and prte["delta_outcome"] > 0
    assert main(["aggregate", "--config", str(CONFIGS / "bounds_truncated.yaml"),
                 "--out", str(tmp_path / "b")]) == 0
    b = io.read_json(tmp_path / "b" / "bounds.json")
    assert b["lo"] <= 0.5 <= b["hi"]


def test_verify_refuses_sample_without_latent_block(tmp_path, capsys):
    cfg = write_config(tmp_path / "s.yaml", {"dgp": "double_hurdle",
                                              "run": {"n": 500, "seed": 0, "latent": False}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    v = write_config(tmp_path / "v.yaml", {"dgp": "double_hurdle", "run": {"seed": 0},
                                            "sample": str(tmp_path / "s" / "sample.csv")})
    assert main(["verify", "--config", v]) == 3
    assert "latent" in capsys.readouterr().err


def test_corrupted_labels_reject_specification(tmp_path):
    code = main(["estimate", "--config", str(CONFIGS / "two_way_corrupted.yaml"), "--out", str(tmp_path)])
    assert code == 2
    report = json.loads((tmp_path / "estimate.json").read_text())
    assert not report["specification_test"]["passed"]
    assert np.isfinite(report["specification_test"]["statistic"])
