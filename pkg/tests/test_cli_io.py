import json
import math
import subprocess
import sys

import numpy as np
import pytest

from stretchpoly.cli import config_from_args, main
from stretchpoly.environment import Environment
from stretchpoly.io import atomic_write_text, csv_text, dumps, loads, plot_data_text, to_jsonable


def _run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def test_renewal_free_lambda(tmp_path):
    code, out = _run(tmp_path, "renewal", "--dims", "2", "--h", "1.0", "--beta", "0", "--nmax", "10")
    assert code == 0
    doc = json.loads(out.read_text())
    lam0 = math.log((math.cosh(1) + 1) / 2)
    assert abs(doc["data"]["lambda"] - lam0) <= doc["data"]["truncation_bound"]
    assert doc["config"]["n_max"] == 10


def test_enumerate_verify_renewal(tmp_path):
    code, out = _run(tmp_path, "enumerate", "--dims", "2", "--n", "6", "--beta", "0.7",
                     "--law", "twopoint:v0=0,v1=1,p=0.5", "--verify-renewal")
    assert code == 0
    assert json.loads(out.read_text())["data"]["residual"] <= 1e-12


def test_invalid_delta_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "enumerate", "--dims", "2", "--n", "3", "--delta", "0.9")
    assert code == 2
    assert "delta" in capsys.readouterr().err


def test_capacity_exit_code(tmp_path, capsys):
    code, out = _run(tmp_path, "enumerate", "--dims", "2", "--n", "11")
    assert code == 3
    assert not out.exists()
    err = capsys.readouterr().err
    assert "n_max" in err and "10" in err


def test_bad_law_exit_code(tmp_path):
    assert _run(tmp_path, "dp", "--law", "gauss:s=1")[0] == 2


def test_json_is_deterministic(tmp_path):
    argv = ["mc-annealed", "--dims", "2", "--n", "10", "--n-env", "5", "--beta", "0.5", "--seed", "3"]
    _, a = _run(tmp_path, *argv)
    first = a.read_bytes()
    _run(tmp_path, *argv)
    assert a.read_bytes() == first
    assert dumps(loads(first.decode())).encode() == first


def test_plot_file_sorted(tmp_path):
    _, out = _run(tmp_path, "mc-annealed", "--dims", "2", "--n", "8", "--n-env", "3", "--beta", "0.5",
                  "--format", "csv", name="mc.csv")
    plot = tmp_path / "mc.csv.plot.csv"
    rows = [line.split(",") for line in plot.read_text().splitlines() if not line.startswith("#")][1:]
    xs = [float(r[0]) for r in rows]
    assert xs == sorted(xs) and len(xs) == 9
    assert out.read_text().startswith("# schema=")


def test_gen_env_round_trip(tmp_path):
    code, out = _run(tmp_path, "gen-env", "--dims", "2", "--radius", "3", "--law", "bernoulli:p=0.2",
                     "--seed", "9", "--format", "csv", name="env.txt")
    assert code == 0
    env = Environment.load(out)
    assert env.radius == 3 and env.seed == 9
    code, res = _run(tmp_path, "dp", "--dims", "2", "--n", "3", "--env", str(out), "--beta", "1")
    assert code == 0


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"beta": 0.4, "n": 5}))
    c = config_from_args(["dp", "--config", str(cfg), "--n", "7"])
    assert c.beta == 0.4 and c.n == 7 and c.dims == 2


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"betta": 0.4}))
    assert main(["dp", "--config", str(cfg)]) == 2


def test_replica_and_mixingale_commands(tmp_path):
    code, out = _run(tmp_path, "replica", "--cases", "40", "--beta", "1", "--law", "bernoulli:p=0.2")
    assert code == 0
    assert sum(json.loads(out.read_text())["data"]["violations"].values()) == 0
    code, out = _run(tmp_path, "mixingale", "--ell", "3", "--kmax", "5", "--M", "3", "--beta", "1",
                     "--law", "bernoulli:p=0.2", "--nmax", "6", name="mix.json")
    assert code == 0
    fwd = json.loads(out.read_text())["data"]["forward"]
    assert all(a >= b for a, b in zip(fwd, fwd[1:]))


def test_clt_annealed_command(tmp_path):
    code, out = _run(tmp_path, "clt", "--mode", "annealed", "--beta", "0.3", "--n", "25,100", "--nmax", "8")
    assert code == 0
    dev = np.array(json.loads(out.read_text())["data"]["deviation"])
    assert np.all(dev[:, 1] < dev[:, 0])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "stretchpoly", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_to_jsonable_types():
    obj = {"a": np.arange(3), "b": np.float64(1.5), "c": 1 + 2j, "d": np.bool_(True), 3: (np.int32(4),)}
    assert to_jsonable(obj) == {"a": [0, 1, 2], "b": 1.5, "c": {"re": 1.0, "im": 2.0}, "d": True, "3": [4]}


def test_csv_cells_and_comments():
    text = csv_text(["x", "y"], [[1, math.inf], [2, 0.1]], comments=["hello"])
    assert text == "# hello\nx,y\n1,inf\n2,0.1\n"


def test_plot_data_sorted():
    text = plot_data_text([3, 1, 2], [30, 10, 20])
    assert text.splitlines()[1:] == ["1.0,10.0,0.0", "2.0,20.0,0.0", "3.0,30.0,0.0"]


def test_atomic_write_creates_dirs(tmp_path):
    p = tmp_path / "a" / "b.txt"
    atomic_write_text(p, "x")
    assert p.read_text() == "x"
    assert [q.name for q in p.parent.iterdir()] == ["b.txt"]
