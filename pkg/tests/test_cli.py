import copy
import csv
import json
import math
import subprocess
import sys

import pytest

from frechetkit.cli import SUITES, dumps_report, load_config, main, run_suites, validate_config
from frechetkit.errors import ConfigError


@pytest.fixture(scope="module")
def cfg():
    return load_config(None)


def _write(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_default_config_is_valid(cfg):
    validate_config(cfg)
    assert set(cfg["suites"]) == set(SUITES)


def test_verify_metric_exit_zero(tmp_path):
    assert main(["verify-metric", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == 1 and report["passed"]
    checks = report["suites"]["verify-metric"]["checks"]
    assert all(c["passed"] for c in checks.values())


def test_missing_alphas_is_exit_two_with_pointer(tmp_path, cfg, capsys):
    bad = copy.deepcopy(cfg)
    sid = next(iter(bad["spaces"]))
    del bad["spaces"][sid]["alphas"]
    assert main(["verify-metric", "--config", _write(tmp_path, bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert f"/spaces/{sid}/alphas" in err
    with pytest.raises(ConfigError) as exc:
        validate_config(bad)
    assert exc.value.pointer == f"/spaces/{sid}/alphas"


def test_unresolved_reference_is_config_error(tmp_path, cfg):
    bad = copy.deepcopy(cfg)
    bad["metric"]["space"] = "nowhere"
    assert main(["verify-metric", "--config", _write(tmp_path, bad), "--out", str(tmp_path)]) == 2


def test_unreadable_config_is_exit_two(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["verify-metric", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert main(["verify-metric", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2


def test_failing_suite_is_exit_one(tmp_path, cfg):
    bad = copy.deepcopy(cfg)
    bad["atlas"]["jets"]["expected"]["w"] = [7.0]
    assert main(["verify-atlas", "--config", _write(tmp_path, bad), "--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["suites"]["verify-atlas"]["status"] == "fail" and not report["passed"]


def test_skipped_suite_is_reported(tmp_path, cfg):
    partial = copy.deepcopy(cfg)
    del partial["ode"]
    report = run_suites(partial, ["ode-roundtrip", "split-roundtrip"], 1, tmp_path)
    assert report["suites"]["ode-roundtrip"]["status"] == "skipped"
    assert report["suites"]["split-roundtrip"]["status"] == "pass"
    assert main(["ode-roundtrip", "--config", _write(tmp_path, partial), "--out", str(tmp_path)]) == 2


def test_integrate_csv_within_certificate(tmp_path):
    assert main(["integrate", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "integrate_certificate.json").read_text())
    with open(tmp_path / "integrate.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1"]
    err = max(abs(float(x) - math.exp(float(t))) for t, x in rows[1:])
    bound = cert["certified_bound"][-1] + cert["quadrature_error_estimate"]
    assert err <= bound and cert["bounds_sound"]


def test_seed_override_changes_report(tmp_path, cfg):
    a = dumps_report(run_suites(cfg, ["verify-metric"], 1, tmp_path))
    b = dumps_report(run_suites(cfg, ["verify-metric"], 2, tmp_path))
    assert json.loads(a)["seed"] == 1 and json.loads(b)["seed"] == 2


def test_full_run_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "frechetkit.cli", "all", "--out", str(out)],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]
