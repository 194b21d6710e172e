import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from impuritylab.cli import fmt, main, parse_config, validate
from impuritylab.errors import ConfigError


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_minimal_monitored_defaults():
    cfg = validate("monitored", {"L": 100, "p_m": 0.5, "steps": 50, "samples": 10, "seed": 1})
    assert cfg.params["dt"] == 0.5 and cfg.params["m"] == 5 and cfg.params["placement"] == "boundary"
    assert cfg.seed == 1 and cfg.workers == 1


def test_range_error_names_field():
    with pytest.raises(ConfigError) as info:
        validate("monitored", {"L": 100, "p_m": 1.5, "steps": 50, "samples": 10})
    assert any(e.startswith("p_m:") for e in info.value.errors)


def test_unknown_key_suggestion():
    with pytest.raises(ConfigError) as info:
        validate("monitored", {"L": 100, "p_M": 0.5, "steps": 50, "samples": 10})
    msgs = " ".join(info.value.errors)
    assert "p_M" in msgs and "'p_m'" in msgs


def test_all_errors_collected():
    with pytest.raises(ConfigError) as info:
        validate("monitored", {"L": 1, "p_m": -1, "steps": "x", "samples": 0, "colour": 3})
    assert len(info.value.errors) == 5


def test_overrides_and_flags(tmp_path):
    path = write_config(tmp_path, {"L": 50, "p_m": 0.2, "steps": 5, "samples": 2})
    cfg = parse_config("monitored", path, ["p_m=0.7", "placement=bulk"], seed=9, workers="auto")
    assert cfg.params["p_m"] == 0.7 and cfg.params["placement"] == "bulk"
    assert cfg.seed == 9 and cfg.workers >= 1


def test_kind_mismatch(tmp_path):
    path = write_config(tmp_path, {"kind": "renewal", "p_m": 0.5})
    with pytest.raises(ConfigError):
        parse_config("monitored", path)


def test_number_formatting():
    assert fmt(5e-5) == "5e-05"
    assert fmt(-3.2e-7) == "-3.2e-07"
    assert fmt(0.25) == "0.25"
    assert fmt(3) == "3" and fmt(True) == "1"
    assert fmt(float("nan")) == "nan"
    for x in np.random.default_rng(0).normal(size=50) * 10.0 ** np.arange(-25, 25):
        s = fmt(x)
        assert float(s) == x and "," not in s
        if abs(x) < 1e-4:
            assert "e" in s


GOLDEN = {"L": 20, "p_m": 0.5, "steps": 10, "samples": 5, "seed": 7}


def test_golden_monitored_run(tmp_path):
    path = write_config(tmp_path, GOLDEN)
    assert main(["monitored", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "monitored.csv")
    assert rows[0] == ["step", "t", "N_mean", "N_stderr", "Nimp_mean", "Nimp_stderr"]
    assert len(rows) == 11
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 11))
    assert float(rows[1][1]) == 0.5


def test_workers_byte_identical(tmp_path):
    path = write_config(tmp_path, {**GOLDEN, "checkpoints": [5, 10]})
    main(["monitored", "--config", str(path), "--workers", "1", "--out", str(tmp_path / "a")])
    main(["monitored", "--config", str(path), "--workers", "8", "--out", str(tmp_path / "b")])
    for name in ("monitored.csv", "distribution_t2.5.csv", "distribution_t5.0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_round_trip(tmp_path):
    path = write_config(tmp_path, GOLDEN)
    out = tmp_path / "o"
    main(["monitored", "--config", str(path), "--out", str(out)])
    manifests = list(out.glob("manifest*.json"))
    assert len(manifests) == 1
    m = json.loads(manifests[0].read_text())
    assert m["config"]["seed"] == 7 and m["exit_code"] == 0
    assert m["started"] <= m["finished"]
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_fcs_check_passes(tmp_path, capsys):
    assert main(["fcs-check", "--set", "samples=5", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out
    assert "max deviation" in line and "PASS" in line
    assert json.loads((tmp_path / "fcs_check.json").read_text())["max_deviation"] < 1e-10


def test_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {"L": 20, "p_m": 1.5, "p_M": 0.1, "steps": 3, "samples": 1})
    assert main(["monitored", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and len(err["errors"]) == 2


def test_resource_error_exit_code(tmp_path, capsys):
    assert main(["operator", "--set", "L=14", "--set", "t_max=1", "--out", str(tmp_path)]) == 3
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["error"] == "ResourceError"
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_code"] == 3


def test_renewal_and_entropy_outputs(tmp_path):
    assert main(["renewal", "--set", "p_m=0.5", "--out", str(tmp_path / "r")]) == 0
    fit = json.loads((tmp_path / "r" / "fit.json").read_text())
    assert fit["exponent"] == pytest.approx(-3, abs=0.2)
    assert read_csv(tmp_path / "r" / "renewal.csv")[0] == ["t", "A_abs2", "envelope"]
    assert main(["entropy-estimate", "--set", "xi=log", "--set", "n_points=5", "--out", str(tmp_path / "e")]) == 0
    rows = read_csv(tmp_path / "e" / "entropy.csv")
    assert rows[0] == ["t", "S_conf"] and len(rows) == 6


def test_operator_and_return_prob_outputs(tmp_path):
    assert main(["operator", "--set", "L=6", "--set", "t_max=1", "--set", "delta=0.3",
                 "--out", str(tmp_path / "op")]) == 0
    rows = read_csv(tmp_path / "op" / "operator.csv")
    assert rows[0] == ["t", "w", "w_I", "w_eta", "w_plus", "w_minus", "op_entropy"] and len(rows) == 12
    assert float(rows[1][2]) + float(rows[1][3]) + float(rows[1][4]) + float(rows[1][5]) == pytest.approx(1)
    assert main(["return-prob", "--set", "L=200", "--set", "t_max=60", "--set", "fit_window=[5, 60]",
                 "--out", str(tmp_path / "rp")]) == 0
    fit = json.loads((tmp_path / "rp" / "fit.json").read_text())
    assert fit["exponent"] == pytest.approx(-3, abs=0.3)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "impuritylab.cli", "renewal", "--set", "p_m=0.5",
                           "--set", "t_max=50", "--set", "fit_window=[5, 40]", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "manifest.json").exists()
