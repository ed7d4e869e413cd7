import csv
import json
import os

import pytest

from atsbsde import cli
from atsbsde.config import load_config

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = """
[problem]
preset = cubic_damped_cap
T = 0.5
c = {c}

[grid]
kind = {kind}
n = 8
"""


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_grid_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL.format(c=3.6, kind="ats_comparison"))
    out = tmp_path / "o"
    assert cli.main(["grid", "--config", cfg, "--out", str(out)]) == 0
    rows = _rows(out / "grid.csv")
    assert rows[0] == ["i", "t_i", "h_i", "active_clause"]
    assert float(rows[-1][1]) == 0.5
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"grid.csv", "grid_diagnostics.csv"}
    assert man["versions"]["kernels"] in ("compiled", "python")


def test_stability_exit_codes(tmp_path):
    ok = _write(tmp_path, SMALL.format(c=6, kind="ats_comparison"), "a.ini")
    assert cli.main(["stability", "--config", ok, "--out", str(tmp_path / "a")]) == 0
    bad = os.path.join(CONFIGS, "cubic_damped_uniform.ini")
    assert cli.main(["stability", "--config", bad, "--out", str(tmp_path / "b")]) == 1
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["summary"]["passed"] is False


def test_config_errors(tmp_path, capsys):
    no_t = _write(tmp_path, "[problem]\npreset = cubic_damped_cap\nc = 4\n[grid]\nkind = uniform\nn = 5\n", "t.ini")
    assert cli.main(["grid", "--config", no_t, "--out", str(tmp_path / "x")]) == 2
    assert "'T'" in capsys.readouterr().err
    no_c = _write(tmp_path, "[problem]\npreset = cubic_damped_cap\nT = 1\n[grid]\nkind = uniform\nn = 5\n", "c.ini")
    assert cli.main(["grid", "--config", no_c, "--out", str(tmp_path / "y")]) == 2
    assert "3.6" in capsys.readouterr().err
    wrong = _write(tmp_path, SMALL.format(c=4, kind="uniform") + "[scheme]\nkind = explicit_ats\n", "w.ini")
    assert cli.main(["solve", "--config", wrong, "--out", str(tmp_path / "z")]) == 2
    assert cli.main(["grid", "--out", str(tmp_path / "q")]) == 2


def test_validate(tmp_path):
    cfg = _write(tmp_path, SMALL.format(c=4, kind="ats_1d") + "[validate]\nsamples = 500\n")
    assert cli.main(["validate", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    names = [r[0] for r in _rows(tmp_path / "v" / "validate.csv")[1:]]
    assert len(names) == len(set(names)) > 0


@pytest.mark.parametrize("sub", ["solve", "compare"])
def test_byte_identical_reruns(tmp_path, sub):
    cfg = _write(tmp_path, SMALL.format(c=4, kind="ats_1d") + "[output]\ndump = full\n")
    outs = []
    for tag in ("r1", "r2"):
        assert cli.main([sub, "--config", cfg, "--out", str(tmp_path / tag)]) == 0
        outs.append(json.loads((tmp_path / tag / "manifest.json").read_text())["outputs"])
    assert outs[0] == outs[1]


def test_convergence_threads_identical(tmp_path):
    text = SMALL.format(c=3.6, kind="ats_1d") + \
        "[convergence]\nn_list = 4,8\nreference = fine_grid\nn_ref = 16\nslope_window = -10,10\n"
    cfg = _write(tmp_path, text)
    a = cli.run(cfg, "convergence", str(tmp_path / "t1"), threads=1)[1]
    b = cli.run(cfg, "convergence", str(tmp_path / "t2"), threads=2)[1]
    assert a["outputs"] == b["outputs"]


def test_resolved_config_roundtrip(tmp_path):
    cfg = _write(tmp_path, SMALL.format(c=4, kind="ats_1d"))
    _, man = cli.run(cfg, "grid", str(tmp_path / "g"), seed=11)
    again = load_config(path=str(tmp_path / "g" / "resolved.ini"))
    assert again.digest() == man["config_hash"]
    assert man["seed"] == 11


def test_env_overrides(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL.format(c=4, kind="ats_1d"))
    out = tmp_path / "env"
    monkeypatch.setenv("ATSBSDE_CONFIG", cfg)
    monkeypatch.setenv("ATSBSDE_OUT", str(out))
    monkeypatch.setenv("ATSBSDE_SEED", "5")
    assert cli.main(["grid"]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5


@pytest.mark.parametrize("name", ["cubic_damped.ini", "pure_cubic.ini", "truncation.ini"])
def test_shipped_configs_load(name):
    cfg = load_config(path=os.path.join(CONFIGS, name))
    assert cfg.problem.T > 0
