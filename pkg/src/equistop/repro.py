"""End-to-end reproduction targets with CSV/JSON artifacts and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from .chain import (MixedProfile, chain_value, check_pure_equilibrium,
                    enumerate_pure_equilibria, mixed_value, verify_mixed_equilibrium)
from .forward import iterate, threshold_limit_oracle, threshold_sequence_oracle
from .model import DiffusionModel, Grid, StoppingSet, make_chain_from_diffusion
from .onesided import MaxRepresentation, dominance_gap, equilibrium_threshold, threshold_for_agent
from .problems import A, B, absorbed_walk, four_state_chain, habit_g, optimistic_call_put
from ._version import __version__
from .vi import HabitParams, habit_threshold, habit_value


CONFIGS = {
    "example26": {"chain": "four_state", "mixed": [0.2, 0.6], "n_check": 101},
    "example25": {"n": 101, "domain": [0.0, 1.0]},
    "fig1": {"c": 1.0, "domain": [-4.0, 4.0], "h": 1e-3, "x_range": [-2.0, 2.0],
             "x_step": 0.01, "max_iters": 200},
    "fig2": {"a": 0.7, "r": 0.1, "k": 0.5, "sigma": 1.0, "x_max": 7.2, "x_step": 0.01},
    "one_sided_call": {"r": 2.0, "K0": 2.0, "kappa": 1.0, "bracket": [-5.0, 5.0],
                       "y_range": [-3.0, 3.0], "n_table": 61},
}
TARGETS = tuple(CONFIGS)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _frac(v: float) -> str:
    """Short rational form when ``v`` is one to rounding, else ``%g``."""
    fr = Fraction(v).limit_denominator(100)
    return str(fr) if abs(float(fr) - v) <= 1e-12 else f"{v:g}"


def _example26(cfg, log):
    chain, reward = four_state_chain()
    n = chain.n
    sets = {"{d1,d2,a,b}": [0, 1, 2, 3], "{d1,d2,a}": [0, 1, 3],
            "{d1,d2,b}": [0, 2, 3], "{d1,d2}": [0, 3]}
    verdicts = {}
    for name, idx in sets.items():
        rep = check_pure_equilibrium(chain, StoppingSet.from_indices(n, idx), reward)
        verdicts[name] = {"passed": rep.passed, "cond1_violation": rep.cond1_violation,
                          "cond2_violation": rep.cond2_violation}
    pure = enumerate_pure_equilibria(chain, reward)
    v_a = float(chain_value(chain, StoppingSet.from_indices(n, [0, 2, 3]), reward, A)[1])
    v_b = float(chain_value(chain, StoppingSet.from_indices(n, [0, 3]), reward, B)[2])
    p, q = cfg["mixed"]
    prof = MixedProfile(p, q)
    ok, gain = verify_mixed_equilibrium(prof, cfg["n_check"])
    va, vb = mixed_value(prof, "a"), mixed_value(prof, "b")
    sweep = max(abs(mixed_value(MixedProfile(float(t), q), "a") - 1.0)
                for t in np.linspace(0, 1, cfg["n_check"]))
    report = {
        "pure_sets": verdicts,
        "pure_equilibria": [s.indices.tolist() for s in pure],
        "continue_value_agent_a": v_a,
        "deviation_value_agent_b": v_b,
        "V00": {"a": mixed_value(MixedProfile(0, 0), "a"), "b": mixed_value(MixedProfile(0, 0), "b")},
        "mixed": {"p": p, "q": q, "passed": bool(ok), "max_gain": gain,
                  "values": {"a": va, "b": vb}, "sweep_max_dev": sweep},
    }
    checks = {
        "values_3/2_4/3": abs(v_a - 1.5) <= 1e-12 and abs(v_b - 4 / 3) <= 1e-12,
        "no_pure": not pure,
        "mixed": bool(ok) and abs(va - 1) <= 1e-12 and abs(vb - 1) <= 1e-12 and sweep <= 1e-12,
    }
    log(f"pure equilibria: {'none' if not pure else len(pure)}; "
        f"mixed ({_frac(p)}, {_frac(q)}): {'PASS' if ok else 'FAIL'}, "
        f"values ({_frac(va)}, {_frac(vb)})")
    return {"example26.json": _dumps(report)}, checks


def _example25(cfg, log):
    n = cfg["n"]
    chain, reward = absorbed_walk(n, *cfg["domain"])
    ends = StoppingSet.from_indices(n, [0, n - 1])
    full = StoppingSet.full(n)
    reps = {name: check_pure_equilibrium(chain, S, reward) for name, S in
            (("ends", ends), ("all", full))}
    x = chain.states
    target_ends = np.ones(n)
    target_all = np.where((x == x[0]) | (x == x[-1]), 1.0, 0.0)
    checks = {
        "ends_passes": reps["ends"].passed,
        "all_passes": reps["all"].passed,
        "J_ends": bool(np.max(np.abs(reps["ends"].J - target_ends)) <= 1e-12),
        "J_all": bool(np.max(np.abs(reps["all"].J - target_all)) <= 1e-12),
    }
    rows = [(float(x[i]), float(reps["ends"].J[i]), float(reps["all"].J[i])) for i in range(n)]
    summary = {name: rep.to_dict(x) for name, rep in reps.items()}
    for name, rep in reps.items():
        log(f"S = {name}: {'PASS' if rep.passed else 'FAIL'} "
            f"(cond1 {rep.cond1_violation:.3g}, cond2 {rep.cond2_violation:.3g}, tol {rep.tol:.3g})")
    return {"example25.csv": _csv(["x", "J_ends", "J_all"], rows),
            "example25.json": _dumps(summary)}, checks


def _fig1(cfg, log):
    c = cfg["c"]
    lo, hi = cfg["domain"]
    grid = Grid.from_step(lo, hi, cfg["h"])
    chain = make_chain_from_diffusion(DiffusionModel.wiener((lo, hi), sigma=1.0), grid)
    reward = optimistic_call_put(c)
    res = iterate(chain, reward, max_iters=cfg["max_iters"], strict=False)
    x = chain.states
    S = res.S_hat.mask
    pos = x[S & (x > 0)]
    x_grid = float(pos.min())
    x_oracle = threshold_limit_oracle(c)
    diag = res.v_inf.diag()
    Fd = reward.diagonal(x)
    xr0, xr1 = cfg["x_range"]
    m = int(round((xr1 - xr0) / cfg["x_step"]))
    rows = []
    for j in range(m + 1):
        i = int(round((xr0 + j * cfg["x_step"] - lo) / grid.h))
        rows.append((round(float(x[i]), 10), float(diag[i]), float(Fd[i])))
    log(f"x* (oracle) = {x_oracle:.6f}")
    log(f"x* (grid, h = {grid.h:g}) = {x_grid:.6f}; status: {res.status}; "
        f"iterations: {len(res.S_sequence)}")
    seq = threshold_sequence_oracle(len(res.S_sequence), c)
    summary = {"x_star_oracle": x_oracle, "x_star_grid": x_grid, "status": res.status,
               "iterations": len(res.S_sequence), "threshold_sequence_oracle": seq,
               "grid_thresholds": [float(x[Sn.mask & (x > 0)].min()) for Sn in res.S_sequence]}
    checks = {"oracle_in_range": 0.9570 <= x_oracle <= 0.9580,
              "grid_threshold": abs(x_grid - 0.9575) <= 5e-3,
              "certified": res.certified}
    return {"fig1.csv": _csv(["x", "v_inf_diag", "F_diag"], rows),
            "fig1.json": _dumps(summary)}, checks


def _fig2(cfg, log):
    p0 = HabitParams.named(cfg["a"], cfg["r"], cfg["k"], cfg["sigma"], "zero")
    p1 = HabitParams.named(cfg["a"], cfg["r"], cfg["k"], cfg["sigma"], "arccot")
    x0 = habit_threshold(p0.a, p0.r, p0.k, p0.sigma, p0.g)
    x1 = habit_threshold(p1.a, p1.r, p1.k, p1.sigma, p1.g)
    m = int(round(cfg["x_max"] / cfg["x_step"]))
    xs = np.arange(1, m + 1) * cfg["x_step"]
    g = habit_g("arccot")
    rows = []
    for x in xs:
        x = float(x)
        rows.append((round(x, 10), float(habit_value(x, x, x1, p1)),
                     float(1 - np.exp(-p1.a * (x + g(x) - p1.k))),
                     float(habit_value(x, x, x0, p0)), float(1 - np.exp(-p0.a * (x - p0.k))),
                     float(g(x))))
    log(f"threshold without habit = {x0:.6f}; with habit = {x1:.6f}; gamma = {p0.gamma:.8f}")
    checks = {"no_habit": 1.3402 <= x0 <= 1.3422, "habit": 3.3514 <= x1 <= 3.3534}
    summary = {"x_star_nohabit": x0, "x_star_habit": x1, "gamma": p0.gamma}
    return {"fig2.csv": _csv(["x", "J_habit", "F_habit", "J_nohabit", "F_nohabit", "g"], rows),
            "fig2.json": _dumps(summary)}, checks


def _one_sided_call(cfg, log):
    K0, kappa = cfg["K0"], cfg["kappa"]

    def K(y):
        return K0 * np.exp(-kappa * np.asarray(y, dtype=float))

    rep = MaxRepresentation.exp_affine(K, cfg["r"])
    x_star = equilibrium_threshold(rep, cfg["bracket"], cfg["y_range"])
    ys = np.linspace(*cfg["y_range"], cfg["n_table"])
    rows = [(float(y), threshold_for_agent(rep, float(y), cfg["bracket"])) for y in ys]
    relation = abs(x_star - float(np.log(K(x_star) / rep.a_const)))
    dom = dominance_gap(rep, x_star, np.linspace(cfg["y_range"][0], x_star, 200))
    log(f"fixed point x* = {x_star:.12f} (a = {rep.a_const:g}); "
        f"|x* - log(K(x*)/a)| = {relation:.2e}")
    checks = {"relation": relation <= 1e-10, "dominance": dom <= 1e-12}
    summary = {"x_star": x_star, "a": rep.a_const, "relation_error": relation,
               "dominance_gap": dom}
    return {"one_sided_call.csv": _csv(["y", "x_star_y"], rows),
            "one_sided_call.json": _dumps(summary)}, checks


_RUNNERS: dict[str, Callable] = {
    "example26": _example26, "example25": _example25, "fig1": _fig1, "fig2": _fig2,
    "one_sided_call": _one_sided_call,
}


def run_target(target: str, out_dir, seed: int = 0, log=print) -> int:
    """Run one target, write its artifacts and manifest; return the exit code."""
    if target not in _RUNNERS:
        raise ValueError(f"unknown target {target!r}; choose from {', '.join(TARGETS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = CONFIGS[target]
    files, checks = _RUNNERS[target](cfg, log)
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "target": target,
        "seed": int(seed),
        "config": cfg,
        "config_sha256": hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "versions": {"equistop": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "files": {name: hashlib.sha256(text.encode()).hexdigest()
                  for name, text in sorted(files.items())},
        "checks": {k: bool(v) for k, v in checks.items()},
    }
    (out / f"{target}.manifest.json").write_text(_dumps(manifest))
    failed = [k for k, v in checks.items() if not v]
    for k in failed:
        log(f"FAILED check: {k}")
    return 1 if failed else 0
