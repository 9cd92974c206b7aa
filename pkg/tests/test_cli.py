import hashlib
import json

import pytest
import yaml
from click.testing import CliRunner

from shsnet.cli import main
from shsnet.config import paper_scenario_path


def _run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _scenario(tmp_path, edit):
    doc = yaml.safe_load(paper_scenario_path().read_text())
    edit(doc)
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_check_reports_matching_finding(tmp_path):
    res = _run("check", "--out", tmp_path / "a", "--samples", 500)
    assert res.exit_code == 2, res.output
    assert "finding: mode 2" in res.output
    res = _run("check", "--out", tmp_path / "b", "--samples", 500, "--allow-paper-discrepancy")
    assert res.exit_code == 0, res.output
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    for name, digest in man["files"].items():
        assert hashlib.sha256((tmp_path / "b" / name).read_bytes()).hexdigest() == digest
    assert man["findings"] and not man["hard_failures"]


def test_check_fails_on_wrong_gain(tmp_path):
    p = _scenario(tmp_path, lambda d: d["interface"].update(chi=0.3))
    res = _run("check", p, "--out", tmp_path / "o", "--samples", 500)
    assert res.exit_code == 1, res.output
    assert "FAIL" in res.output


def test_missing_section_message(tmp_path):
    p = _scenario(tmp_path, lambda d: d.pop("topology"))
    res = _run("check", p, "--out", tmp_path / "o")
    assert res.exit_code == 1
    assert "section 'topology'" in res.output


def test_simulate_deterministic(tmp_path):
    digests = []
    for k in range(2):
        res = _run("simulate", "--out", tmp_path / str(k), "--seed", 7, "--horizon", 0.2)
        assert res.exit_code == 0, res.output
        digests.append(json.loads((tmp_path / str(k) / "manifest.json").read_text())["files"])
    assert digests[0] == digests[1] and set(digests[0]) == {"concrete.csv", "abstract.csv", "switching.csv"}


def test_bound_exit_codes(tmp_path):
    res = _run("bound", "--out", tmp_path / "a", "--runs", 4, "--horizon", 0.05)
    assert res.exit_code == 0, res.output
    header = (tmp_path / "a" / "error_bound.csv").read_text().splitlines()[0]
    assert header == "time,mean,se,bound"
    res = _run("bound", "--out", tmp_path / "b", "--runs", 4, "--horizon", 0.05, "--bound-scale", 1e-3)
    assert res.exit_code == 1
    assert "above the bound" in res.output


def test_closedloop_zero_horizon(tmp_path):
    res = _run("closedloop", "--out", tmp_path, "--horizon", 0)
    assert res.exit_code == 0, res.output
    for name in ("concrete.csv", "abstract.csv", "reduced.csv", "visits.csv"):
        assert len((tmp_path / name).read_text().splitlines()) == 1


def test_unknown_file_rejected(tmp_path):
    res = _run("check", tmp_path / "nope.yaml")
    assert res.exit_code == 2 and "does not exist" in res.output
