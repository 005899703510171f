"""Built-in problems and JSON configuration ingestion.

Config layout::

    {"reward": {"kind": "...", ...params}, "r": 0.5,
     "model": {"kind": "wiener" | "gbm" | "chain", ...},
     "grid": {"lo": -4, "hi": 4, "n": 8001}}

Chain models carry their own states and transition matrix, so they need no
grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ConfigError
from .model import ChainModel, DiffusionModel, Grid, RewardSpec, make_chain_from_diffusion

# state labels of the four-state chain with two absorbing ends
D1, A, B, D2 = 0.0, 1.0, 2.0, 3.0


def four_state_chain() -> tuple:
    """Four-state game with no pure equilibrium; returns ``(chain, reward)``.

    From a the chain moves to the left end or to b, from b to a or the right
    end, each with probability 1/2; r = 0.
    """
    states = [D1, A, B, D2]
    P = np.array([[1.0, 0.0, 0.0, 0.0],
                  [0.5, 0.0, 0.5, 0.0],
                  [0.0, 0.5, 0.0, 0.5],
                  [0.0, 0.0, 0.0, 1.0]])
    chain = ChainModel(states, P, absorbing=[0, 3])
    # one row per agent: d1, a, b, d2
    table = [[0, 0, 0, 0],
             [0, 1, 3, 0],
             [4, 0, 1, 0],
             [0, 0, 0, 0]]
    return chain, RewardSpec.from_table(states, table, r=0.0, name="four_state")


def distance_penalty(lo: float = 0.0, hi: float = 1.0, r: float = 0.0) -> RewardSpec:
    """Reward 1 at either endpoint and ``-|x - y|`` strictly inside."""
    scale = max(1.0, abs(lo), abs(hi))

    def F(x, y):
        at_end = np.isclose(x, lo, rtol=0, atol=1e-12 * scale) | \
            np.isclose(x, hi, rtol=0, atol=1e-12 * scale)
        return np.where(at_end, 1.0, -np.abs(x - y))

    return RewardSpec(F, r, name="distance_penalty")


def absorbed_walk(n: int = 101, lo: float = 0.0, hi: float = 1.0) -> tuple:
    """Wiener process absorbed at both ends on an ``n``-node grid, with the
    distance-penalty reward; returns ``(chain, reward)``."""
    model = DiffusionModel.wiener((lo, hi), boundary=("absorbing", "absorbing"))
    chain = make_chain_from_diffusion(model, Grid(lo, hi, n))
    return chain, distance_penalty(lo, hi)


def optimistic_call_put(c: float = 1.0) -> RewardSpec:
    """Strike-zero call for agents ``y >= 0`` and put for ``y < 0``; ``r = c^2/2``."""
    if not c > 0:
        raise ConfigError("c must be positive")

    def F(x, y):
        return np.where(y >= 0, np.maximum(x, 0.0), np.maximum(-x, 0.0))

    return RewardSpec(F, 0.5 * c * c, agent_key=lambda y: y >= 0, name="optimistic_call_put")


def state_dependent_strike(K0: float, kappa: float, r: float,
                           positive_part: bool = True) -> RewardSpec:
    """``(e^x - K(y))^+`` in log-price with strike ``K(y) = K0 exp(-kappa y)``."""
    if not K0 > 0:
        raise ConfigError("K0 must be positive")

    def F(x, y):
        v = np.exp(x) - K0 * np.exp(-kappa * y)
        return np.maximum(v, 0.0) if positive_part else v

    return RewardSpec(F, r, name="state_dependent_strike")


def habit_g(kind: str):
    """Habit functions: ``"zero"`` or ``"arccot"`` (``arccot(x) - pi/2``)."""
    if kind == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if kind == "arccot":
        # arccot(x) - pi/2 = -arctan(x) on x >= 0
        return lambda x: -np.arctan(np.asarray(x, dtype=float))
    raise ConfigError(f"unknown habit function {kind!r}")


def habit_exponential(a: float, k: float, r: float, g="zero") -> RewardSpec:
    """``1 - exp(-a (x + g(y) - k))``."""
    gf = habit_g(g) if isinstance(g, str) else g

    def F(x, y):
        return 1.0 - np.exp(-a * (x + gf(y) - k))

    return RewardSpec(F, r, name="habit_exponential")


@dataclass
class Problem:
    reward: RewardSpec
    model: Union[DiffusionModel, ChainModel]
    grid: Optional[Grid] = None
    raw: dict = field(default_factory=dict)

    @property
    def chain(self) -> ChainModel:
        if isinstance(self.model, ChainModel):
            return self.model
        if self.grid is None:
            raise ConfigError("a diffusion problem needs a grid")
        return make_chain_from_diffusion(self.model, self.grid)


def _reward_from(cfg: dict, r: float, states=None) -> RewardSpec:
    kind = cfg.get("kind")
    if kind == "optimistic_call_put":
        rw = optimistic_call_put(float(cfg.get("c", np.sqrt(2 * r))))
        if not np.isclose(rw.r, r):
            raise ConfigError("optimistic_call_put needs c = sqrt(2 r)")
        return rw
    if kind == "state_dependent_strike":
        return state_dependent_strike(float(cfg["K0"]), float(cfg.get("kappa", 0.0)), r,
                                      bool(cfg.get("positive_part", True)))
    if kind == "habit_exponential":
        return habit_exponential(float(cfg["a"]), float(cfg["k"]), r, cfg.get("g", "zero"))
    if kind == "distance_penalty":
        return RewardSpec(distance_penalty(float(cfg.get("lo", 0.0)),
                                           float(cfg.get("hi", 1.0))).F, r,
                          name="distance_penalty")
    if kind == "table":
        if states is None:
            raise ConfigError("a table reward needs a chain model")
        return RewardSpec.from_table(states, cfg["table"], r)
    raise ConfigError(f"unknown reward kind {kind!r}")


def _model_from(cfg: dict):
    kind = cfg.get("kind")
    boundary = tuple(cfg.get("boundary", ("truncation", "truncation")))
    if kind == "chain":
        return ChainModel(cfg["states"], np.asarray(cfg["P"], dtype=float),
                          absorbing=cfg.get("absorbing", ()), dt=cfg.get("dt", 1.0))
    domain = tuple(float(v) for v in cfg["domain"])
    if kind == "wiener":
        return DiffusionModel.wiener(domain, cfg.get("sigma", 1.0), cfg.get("mu", 0.0), boundary)
    if kind == "gbm":
        return DiffusionModel.gbm(domain, cfg["sigma"], cfg.get("mu", 0.0), boundary)
    raise ConfigError(f"unknown model kind {kind!r}")


def problem_from_config(cfg: Union[dict, str, Path]) -> Problem:
    if not isinstance(cfg, dict):
        cfg = json.loads(Path(cfg).read_text())
    try:
        r = float(cfg["r"])
        model = _model_from(cfg["model"])
        states = model.states if isinstance(model, ChainModel) else None
        reward = _reward_from(cfg["reward"], r, states)
        grid = None
        if "grid" in cfg:
            g = cfg["grid"]
            grid = Grid(float(g["lo"]), float(g["hi"]), int(g["n"]))
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from exc
    return Problem(reward, model, grid, cfg)
