import csv
import json

import numpy as np
import pytest

from equistop import cli, problem_from_config, solve_standard
from equistop.repro import TARGETS

OPT_CFG = {"r": 0.5, "model": {"kind": "wiener", "domain": [-3.0, 3.0]},
           "reward": {"kind": "optimistic_call_put", "c": 1.0},
           "grid": {"lo": -3.0, "hi": 3.0, "n": 301}}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_chain_four_state(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"builtin": "four_state", "sets": [[0, 3], [0, 1, 2, 3]]})
    code, io = run(["chain", "--config", cfg, "--enumerate", "--mixed", "0.2", "0.6"], capsys)
    assert code == 0
    out = json.loads(io.out)
    assert out["pure_equilibria"] == []
    assert [s["passed"] for s in out["sets"]] == [False, False]
    assert out["mixed"]["passed"]
    assert out["mixed"]["values"]["a"] == pytest.approx(1.0, abs=1e-12)


def test_chain_failed_mixed_exits_one(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"builtin": "four_state"})
    code, io = run(["chain", "--config", cfg, "--mixed", "0", "0"], capsys)
    assert code == 1 and not json.loads(io.out)["mixed"]["passed"]


def test_chain_walk_sets(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"builtin": "absorbed_walk", "n": 21,
                                      "sets": [[0, 20], [0, 10, 20]]})
    code, io = run(["chain", "--config", cfg, "--tol", "1e-9"], capsys)
    assert code == 0
    assert [s["passed"] for s in json.loads(io.out)["sets"]] == [True, False]


def test_solve_writes_csv_matching_library(tmp_path, capsys):
    cfg = write(tmp_path / "p.json", OPT_CFG)
    out = tmp_path / "sol.csv"
    code, _ = run(["solve", "--config", cfg, "--agent", "1.0", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 301
    prob = problem_from_config(OPT_CFG)
    sol = solve_standard(prob.chain, prob.reward, 1.0)
    np.testing.assert_allclose([float(r["value"]) for r in rows], sol.value, rtol=1e-11)
    assert [int(r["stop"]) for r in rows] == sol.stopset.mask.astype(int).tolist()


def test_solve_with_constraint(tmp_path, capsys):
    cfg = write(tmp_path / "p.json", OPT_CFG)
    mask = tmp_path / "mask.csv"
    mask.write_text("x,stop\n" + "".join(f"{i},1\n" for i in range(301)))
    code, io = run(["solve", "--config", cfg, "--agent", "1.0", "--constraint", str(mask)],
                   capsys)
    assert code == 0
    rows = list(csv.DictReader(io.out.splitlines()))
    assert all(r["stop"] == "1" for r in rows)
    bad = tmp_path / "short.csv"
    bad.write_text("1\n0\n")
    code, io = run(["solve", "--config", cfg, "--agent", "1.0", "--constraint", str(bad)],
                   capsys)
    assert code == 2 and "constraint mask" in io.err


def test_iterate_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path / "p.json", OPT_CFG)
    out = tmp_path / "it"
    code, io = run(["iterate", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    status = json.loads(io.out)
    assert status["status"] == "certified (terminated)"
    report = json.loads((out / "report.json").read_text())
    assert report["certified"]
    rows = list(csv.DictReader((out / "iterations.csv").open()))
    first = [r for r in rows if r["iteration"] == "1"]
    assert any(abs(float(r["lo"]) - 1.0) <= 0.03 for r in first)


def test_one_sided(tmp_path, capsys):
    cfg = write(tmp_path / "rep.json", {"kind": "exp_affine", "r": 2.0, "K0": 2.0,
                                        "kappa": 1.0, "y_range": [-3.0, 3.0], "n_table": 7})
    out = tmp_path / "os"
    code, io = run(["one-sided", "--config", cfg, "--bracket", "-5", "5", "--out", str(out)],
                   capsys)
    assert code == 0
    res = json.loads(io.out)
    assert abs(res["x_star"] - np.log(2.0)) <= 1e-10 and res["checks"]["passed"]
    rows = list(csv.DictReader((out / "x_star_table.csv").open()))
    assert len(rows) == 7
    for r in rows:
        assert float(r["x_star_y"]) == pytest.approx(np.log(4.0) - float(r["y"]), abs=1e-9)


def test_verify_vi_pass_and_fail(tmp_path, capsys):
    good = write(tmp_path / "g.json", {"kind": "habit", "a": 0.7, "r": 0.1, "k": 0.5,
                                       "sigma": 1.0, "g": "arccot"})
    code, io = run(["verify-vi", "--config", good, "--h-fd", "1e-3"], capsys)
    assert code == 0 and json.loads(io.out)["passed"]
    bad = write(tmp_path / "b.json", {"kind": "optimistic", "c": 1.0, "x_star": 1.0})
    code, io = run(["verify-vi", "--config", bad], capsys)
    assert code == 1 and not json.loads(io.out)["passed"]


def test_mc_check(tmp_path, capsys):
    cfg = write(tmp_path / "o.json", {"kind": "optimistic", "c": 1.0})
    code, io = run(["mc-check", "--config", cfg, "--x0=-0.5,0,0.5", "--paths", "5000",
                    "--seed", "1"], capsys)
    assert code == 0
    rep = json.loads(io.out)
    assert rep["passed"] and [p["x0"] for p in rep["points"]] == [-0.5, 0.0, 0.5]


def test_errors_exit_two(tmp_path, capsys):
    code, io = run(["solve", "--config", str(tmp_path / "missing.json"), "--agent", "0"],
                   capsys)
    assert code == 2 and "error" in io.err
    cfg = write(tmp_path / "bad.json", {"r": 0.5, "model": {"kind": "levy", "domain": [0, 1]},
                                        "reward": {"kind": "table"}})
    code, _ = run(["iterate", "--config", cfg, "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    cfg = write(tmp_path / "cand.json", {"kind": "unknown"})
    code, _ = run(["verify-vi", "--config", cfg, "--grid", "0", "1", "11"], capsys)
    assert code == 2


def test_unknown_target_rejected(capsys):
    with pytest.raises(SystemExit):
        cli.main(["repro", "nope"])


@pytest.mark.parametrize("target", [t for t in TARGETS if t != "fig1"])
def test_repro_targets_are_deterministic(target, tmp_path, capsys):
    code, io = run(["repro", target, "--out", str(tmp_path / "a")], capsys)
    assert code == 0, io.out
    code, _ = run(["repro", target, "--out", str(tmp_path / "b")], capsys)
    assert code == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert f"{target}.manifest.json" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / f"{target}.manifest.json").read_text())
    assert manifest["target"] == target and all(manifest["checks"].values())
    assert set(manifest["files"]) == set(files) - {f"{target}.manifest.json"}


def test_repro_example26_log(tmp_path, capsys):
    code, io = run(["repro", "example26", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "pure equilibria: none; mixed (1/5, 3/5): PASS, values (1, 1)" in io.out


def test_repro_fig1(tmp_path, capsys):
    code, io = run(["repro", "fig1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "certified (terminated)" in io.out
    manifest = json.loads((tmp_path / "fig1.manifest.json").read_text())
    assert all(manifest["checks"].values())
