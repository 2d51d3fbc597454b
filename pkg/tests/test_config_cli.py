"""Scenario configuration and the command line runner."""
from __future__ import annotations

import csv
import hashlib

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from contobs.cli import fmt, main
from contobs.config import KINDS, config_from_dict, default_config, dump_config, load_config
from contobs.errors import ConfigError


@pytest.mark.parametrize("kind", KINDS)
def test_defaults_validate_and_round_trip(kind):
    cfg = default_config(kind)
    if kind == "custom":
        cfg.ensemble = {"lam": [[1.0]], "mu": [[1.0]], "w": [[0.0]], "theta": [[0.0]],
                        "q": [0.5], "r": [0.5], "f": [1.0]}
    cfg.validate()
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


@given(M=st.integers(0, 6), dM=st.integers(0, 6), N_x=st.integers(0, 30), T=st.floats(0.1, 50),
       w=st.floats(1e-3, 1e6), kind=st.sampled_from(["academic", "aortic-flow", "aortic-pressure"]))
def test_config_round_trip(M, dM, N_x, T, w, kind):
    data = {"scenario": kind, "fit": {"M": M + dM, "M_y": M}, "spectral": {"N_x": N_x},
            "simulate": {"T": T}, "gains": {"state_weight": w}}
    cfg = config_from_dict(data)
    assert config_from_dict(yaml.safe_load(dump_config(cfg))) == cfg
    assert cfg.fit.M == M + dM and cfg.simulate.T == T


def test_partial_config_keeps_scenario_defaults():
    cfg = config_from_dict({"scenario": "aortic-flow", "simulate": {"T": 2.0}})
    assert cfg.simulate.T == 2.0 and cfg.simulate.initial.plant == "exponential"
    assert cfg.measurement.g == [1.0, 2.0, 4.0, 3.0]


@pytest.mark.parametrize("data,match", [
    ({"fit": {"M": -1}}, "fit.M"),
    ({"fit": {"M": 1, "M_y": 2}}, "M_y"),
    ({"spectral": {"N_x": 2.5}}, "N_x"),
    ({"simulate": {"T": 0}}, "T must be positive"),
    ({"bogus": 1}, "unknown key"),
    ({"fit": {"order": 3}}, "unknown key"),
    ({"schema_version": 2}, "schema_version"),
    ({"scenario": "nope"}, "scenario"),
    ({"simulate": {"initial": {"plant": "gauss"}}}, "initial.plant"),
])
def test_invalid_configs_are_rejected(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("fit: [1, 2\n")
    with pytest.raises(ConfigError, match="malformed YAML"):
        load_config(p)


def test_fmt_uses_twelve_digits():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(2.0) == "2"


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_exit_code_for_malformed_config(tmp_path, capsys):
    code = main(["fit", "--config", str(_write(tmp_path, {"fit": {"M": -2}})),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_for_undetectable_pair(tmp_path, capsys):
    cfg = _write(tmp_path, {"measurement": {"g": [0.0] * 10}})
    code = main(["gains", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 3
    assert "detectability fails at s =" in capsys.readouterr().err


def test_exit_code_for_unreachable_fit_thresholds(tmp_path):
    cfg = _write(tmp_path, {"fit": {"M": 2, "M_y": 1, "adaptive": True, "thresholds": 1e-9}})
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 4


def _digests(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_fit_outputs_and_manifest(tmp_path, capsys):
    out = tmp_path / "fit"
    assert main(["fit", "--out", str(out)]) == 0
    assert "thresholds" in capsys.readouterr().out
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    on_disk = _digests(out)
    assert set(man["files"]) == set(on_disk) - {"manifest.yaml"}
    for name, digest in man["files"].items():
        assert on_disk[name] == digest
    with open(out / "residuals.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["parameter", "residual", "l2_error", "gap", "threshold"]
    coeff = yaml.safe_load((out / "coefficients.yaml").read_text())
    c0, c1 = coeff["params"]["Q"]["coeffs"]         # c0 + c1 (2y - 1) = 0.109 + 0.882 y
    assert 2 * c1 == pytest.approx(0.882, abs=1e-3) and c0 - c1 == pytest.approx(0.109, abs=1e-3)
    assert set(man) >= {"config", "versions", "timings_s", "summary", "files"}


def test_gains_outputs(tmp_path):
    out = tmp_path / "g"
    assert main(["gains", "--out", str(out), "--quiet"]) == 0
    gains = yaml.safe_load((out / "gains.yaml").read_text())
    assert {"observer", "injection"} <= set(gains)
    with open(out / "gamma2_at_zero.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "y" and len(rows) == 22


def test_simulation_is_deterministic(tmp_path):
    cfg = _write(tmp_path, {"simulate": {"T": 1.0}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a), "--quiet"]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b), "--quiet"]) == 0
    da, db = _digests(a), _digests(b)
    da.pop("manifest.yaml"), db.pop("manifest.yaml")   # holds wall-clock timings
    assert da == db
    assert {"timeseries.csv", "estimate.svg", "error_log.svg", "config.yaml"} <= set(da)
    with open(a / "timeseries.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "CX", "CXhat", "err", "Y", "Yhat"] and len(rows) == 102


def test_certify_stage_writes_verdict(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["certify", "--out", str(out)]) == 0
    rep = yaml.safe_load((out / "certificate.yaml").read_text())
    assert rep["condition_met"] is False           # recorded verdict for the academic data
    assert "certify: condition not met" in capsys.readouterr().out


def test_show_config_round_trips(capsys):
    assert main(["show-config", "--scenario", "aortic-pressure"]) == 0
    text = capsys.readouterr().out
    assert config_from_dict(yaml.safe_load(text)) == default_config("aortic-pressure")
