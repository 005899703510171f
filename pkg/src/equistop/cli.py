"""Command-line entry point: ``equistop <command> ...``.

Reports go to stdout as JSON with sorted keys; tables go to CSV files (or
stdout when no output path is given). Library errors exit with status 2, a
failed check with status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import repro
from .chain import (MixedProfile, check_pure_equilibrium, enumerate_pure_equilibria,
                    mixed_value, verify_mixed_equilibrium)
from .errors import EquistopError, NotCertified
from .forward import iterate
from .model import Grid, StoppingSet
from .montecarlo import mc_equilibrium_check
from .onesided import (MaxRepresentation, dominance_gap, equilibrium_threshold,
                       threshold_for_agent)
from .problems import absorbed_walk, four_state_chain, problem_from_config
from .solver import solve_standard
from .vi import HabitParams, check_vi, habit_candidate, optimistic_candidate

# grids used to locate the continuation set when none is given
DEFAULT_GRIDS = {"optimistic": (-2.0, 2.0, 1001), "habit": (0.01, 7.2, 720)}


def _load(path) -> dict:
    return json.loads(Path(path).read_text())


def _plain(o):
    # numpy scalars and arrays
    return o.tolist() if hasattr(o, "tolist") else str(o)


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=_plain) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _write_csv(header, rows, out=None) -> None:
    fh = sys.stdout if out is None else open(out, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    finally:
        if out is not None:
            fh.close()


def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def _chain_problem(cfg: dict):
    """``(chain, reward)`` from a config; ``builtin`` names a worked example."""
    builtin = cfg.get("builtin")
    if builtin == "four_state":
        return four_state_chain()
    if builtin == "absorbed_walk":
        return absorbed_walk(int(cfg.get("n", 101)), *cfg.get("domain", (0.0, 1.0)))
    prob = problem_from_config(cfg)
    return prob.chain, prob.reward


def candidate_from_config(cfg: dict):
    """Closed-form candidate named by ``kind`` (``optimistic`` or ``habit``)."""
    kind = cfg.get("kind")
    if kind == "optimistic":
        return optimistic_candidate(float(cfg.get("c", 1.0)), cfg.get("x_star"))
    if kind == "habit":
        params = HabitParams.named(cfg["a"], cfg["r"], cfg["k"], cfg["sigma"],
                                   cfg.get("g", "zero"))
        return habit_candidate(params, cfg.get("x_star"))
    raise EquistopError(f"unknown candidate kind {kind!r}")


def representation_from_config(cfg: dict) -> MaxRepresentation:
    """Exp-affine representation with strike ``K(y) = K0 exp(-kappa y)``."""
    if cfg.get("kind", "exp_affine") != "exp_affine":
        raise EquistopError(f"unknown representation kind {cfg.get('kind')!r}")
    K0, kappa = float(cfg["K0"]), float(cfg.get("kappa", 0.0))
    return MaxRepresentation.exp_affine(lambda y: K0 * np.exp(-kappa * np.asarray(y, dtype=float)),
                                        float(cfg["r"]))


def cmd_chain(args) -> int:
    cfg = _load(args.config)
    chain, reward = _chain_problem(cfg)
    labels = chain.states
    out = {"states": [float(v) for v in labels]}
    ok = True
    sets = cfg.get("sets", [])
    out["sets"] = []
    for idx in sets:
        rep = check_pure_equilibrium(chain, StoppingSet.from_indices(chain.n, idx), reward,
                                     args.tol)
        d = rep.to_dict(labels)
        d["indices"] = [int(i) for i in idx]
        out["sets"].append(d)
    if args.enumerate:
        found = enumerate_pure_equilibria(chain, reward, args.tol)
        out["pure_equilibria"] = [S.indices.tolist() for S in found]
    if args.mixed is not None:
        prof = MixedProfile(*args.mixed)
        passed, gain = verify_mixed_equilibrium(prof)
        out["mixed"] = {"p": prof.p, "q": prof.q, "passed": bool(passed), "max_gain": gain,
                        "values": {"a": mixed_value(prof, "a"), "b": mixed_value(prof, "b")}}
        ok = ok and passed
    _emit(out)
    return 0 if ok else 1


def _read_mask(path, n: int) -> StoppingSet:
    vals = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                vals.append(int(float(row[-1])))
            except ValueError:
                continue  # header
    if len(vals) != n:
        raise EquistopError(f"constraint mask has {len(vals)} entries, chain has {n} states")
    return StoppingSet(np.asarray(vals, dtype=bool))


def cmd_solve(args) -> int:
    prob = problem_from_config(_load(args.config))
    chain = prob.chain
    constraint = None if args.constraint is None else _read_mask(args.constraint, chain.n)
    sol = solve_standard(chain, prob.reward, args.agent, constraint)
    rows = [(float(x), float(v), int(s)) for x, v, s in
            zip(chain.states, sol.value, sol.stopset.mask)]
    _write_csv(["x", "value", "stop"], rows, args.out)
    return 0


def cmd_iterate(args) -> int:
    prob = problem_from_config(_load(args.config))
    chain = prob.chain
    status = 0
    try:
        res = iterate(chain, prob.reward, max_iters=args.max_iters, strict=False)
    except NotCertified as exc:  # pragma: no cover - strict is off
        res = exc.result
    if not res.certified:
        status = 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, ivs in enumerate(res.diagnostics["intervals"], start=1):
        for lo, hi in ivs:
            rows.append((n, float(lo), float(hi)))
    _write_csv(["iteration", "lo", "hi"], rows, out / "iterations.csv")
    report = res.report.to_dict(chain.states)
    report.update({"certified": res.certified, "failed_assumption": res.failed_assumption,
                   "checks": res.diagnostics["checks"],
                   "intervals": [[float(lo), float(hi)] for lo, hi in res.S_hat.intervals(chain.states)]})
    _emit(report, out / "report.json")
    _emit({"status": res.status, "iterations": len(res.S_sequence), "out": str(out)})
    return status


def cmd_one_sided(args) -> int:
    cfg = _load(args.config)
    rep = representation_from_config(cfg)
    bracket = tuple(args.bracket)
    y_range = tuple(cfg.get("y_range", bracket))
    x_star = equilibrium_threshold(rep, bracket, y_range)
    ys = np.linspace(*y_range, int(cfg.get("n_table", 61)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "x_star_table.csv"
    _write_csv(["y", "x_star_y"], [(float(y), threshold_for_agent(rep, float(y), bracket))
                                   for y in ys], table)
    K = rep.strike
    relation = abs(x_star - float(np.log(K(x_star) / rep.a_const)))
    dom = dominance_gap(rep, x_star, np.linspace(y_range[0], x_star, 200))
    checks = {"relation_error": relation, "dominance_gap": dom,
              "passed": bool(relation <= 1e-10 and dom <= 1e-12)}
    _emit({"x_star": x_star, "checks": checks, "value_table": str(table)})
    return 0 if checks["passed"] else 1


def _grid_arg(values, kind):
    if values is None:
        lo, hi, n = DEFAULT_GRIDS[kind]
    else:
        lo, hi, n = values
    return Grid(float(lo), float(hi), int(n))


def cmd_verify_vi(args) -> int:
    cfg = _load(args.config)
    cand = candidate_from_config(cfg)
    grid = _grid_arg(args.grid, cfg["kind"])
    rep = check_vi(cand, grid, args.h_fd)
    _emit(rep.to_dict())
    return 0 if rep.passed else 1


def cmd_mc_check(args) -> int:
    cfg = _load(args.config)
    cand = candidate_from_config(cfg)
    grid = _grid_arg(args.grid, cfg["kind"])
    rep = mc_equilibrium_check(cand, cand.model, cand.reward, _floats(args.x0),
                               _floats(args.h), args.paths, args.seed, grid)
    _emit(rep.to_dict())
    return 0 if rep.passed else 1


def cmd_repro(args) -> int:
    return repro.run_target(args.target, args.out, args.seed,
                            log=lambda msg: print(msg, flush=True))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="equistop",
                                 description="Equilibrium stopping for time-inconsistent problems")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chain", help="check stopping sets on a finite chain")
    p.add_argument("--config", required=True)
    p.add_argument("--enumerate", action="store_true")
    p.add_argument("--mixed", nargs=2, type=float, metavar=("P", "Q"))
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("solve", help="solve one agent's stopping problem")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", type=float, required=True)
    p.add_argument("--constraint", default=None, help="CSV of 0/1 forced-stop flags")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("iterate", help="forward iteration toward an equilibrium")
    p.add_argument("--config", required=True)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--out", default="iterate_out")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("one-sided", help="fixed-point threshold of a one-sided problem")
    p.add_argument("--config", required=True)
    p.add_argument("--bracket", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    p.add_argument("--out", default="one_sided_out")
    p.set_defaults(func=cmd_one_sided)

    p = sub.add_parser("verify-vi", help="check a closed-form candidate against the VI system")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", nargs=3, default=None, metavar=("LO", "HI", "N"))
    p.add_argument("--h-fd", type=float, default=None)
    p.set_defaults(func=cmd_verify_vi)

    p = sub.add_parser("mc-check", help="Monte Carlo audit of a candidate rule")
    p.add_argument("--config", required=True)
    p.add_argument("--x0", required=True, help="comma-separated start points")
    p.add_argument("--h", default="0.2,0.1,0.05")
    p.add_argument("--paths", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--grid", nargs=3, default=None, metavar=("LO", "HI", "N"))
    p.set_defaults(func=cmd_mc_check)

    p = sub.add_parser("repro", help="reproduce a worked example")
    p.add_argument("target", choices=repro.TARGETS)
    p.add_argument("--out", default="repro_out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EquistopError, ValueError, KeyError, OSError) as exc:
        print(f"equistop: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
