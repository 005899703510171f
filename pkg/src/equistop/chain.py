"""Exact equilibrium analysis on finite chains.

Pure strategies are stopping sets; their values come from one sparse
factorisation per set. The one-step deviation test ("continue exactly one
step, then rejoin the set") is the chain version of the delay condition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SingularSystem, TooManyStates
from .model import ChainModel, EquilibriumReport, RewardSpec, StoppingSet, TwoArgFunction
from .solver import StopSystem, continuation_value

RESIDUAL_TOL = 1e-12
EXACT_TOL = 1e-9
MAX_ENUM_STATES = 24
STRICT_GAIN = 1e-12


def default_tol(chain: ChainModel) -> float:
    """1e-9 for exact chains, ``10 h`` for chains built from a diffusion."""
    if chain.from_diffusion:
        return 10.0 * chain.origin["grid"].h
    return EXACT_TOL


def chain_value(chain: ChainModel, S: StoppingSet, reward: RewardSpec, agent: float) -> np.ndarray:
    """Value ``E_x exp(-r tau_S) F(X_tau_S, agent)`` for every start state ``x``."""
    chain.check_discount(reward.r)
    system = StopSystem(chain, reward.r, S.mask)
    F = reward.column(chain.states, agent)
    V = system.solve(F)
    res = system.residual(V, F)
    if res > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(F)))):
        raise SingularSystem(f"linear solve residual {res:.3e} is too large")
    return V


def auxiliary(chain: ChainModel, S: StoppingSet, reward: RewardSpec) -> TwoArgFunction:
    """``f_S(x, y)`` for all states and agents, one factorisation shared by all."""
    chain.check_discount(reward.r)
    system = StopSystem(chain, reward.r, S.mask)
    cols, agent_col = reward.agent_classes(chain.states)
    return TwoArgFunction(system.solve(cols), agent_col)


def deviation_gain(chain: ChainModel, f: TwoArgFunction, reward: RewardSpec) -> np.ndarray:
    """Gain to agent ``x`` from continuing once at ``x`` and then following ``f``."""
    cont = continuation_value(chain, reward.r, f.columns)
    idx = np.arange(chain.n)
    return cont[idx, f.agent_col] - reward.diagonal(chain.states)


def check_pure_equilibrium(chain: ChainModel, S: StoppingSet, reward: RewardSpec,
                           tol: Optional[float] = None) -> EquilibriumReport:
    """Check the stopping-value and one-step deviation conditions for ``S``.

    For chains approximating a diffusion, states one step from an absorbing
    end stand in for points arbitrarily close to that end, where a delay of
    one whole step is not small. They are left out of the deviation test and
    their largest gain is reported separately as ``boundary_layer_gain``.
    """
    if len(S) != chain.n:
        raise ConfigError("stopping set length does not match the chain")
    if np.any(chain.absorbing & ~S.mask):
        raise ValueError("absorbing states must belong to the stopping set")
    tol = default_tol(chain) if tol is None else float(tol)
    f = auxiliary(chain, S, reward)
    J = f.diag()
    Fd = reward.diagonal(chain.states)
    cond1 = float(np.max(Fd - J))
    gain = deviation_gain(chain, f, reward)
    probe = S.mask & ~chain.absorbing
    layer = chain.boundary_layer
    main = probe & ~layer
    cond2 = float(np.max(gain[main])) if main.any() else 0.0
    extras = {}
    if (probe & layer).any():
        extras["boundary_layer_gain"] = float(np.max(gain[probe & layer]))
    report = EquilibriumReport(S=S, J=J, f=f, C=~S, cond1_violation=cond1,
                               cond2_violation=max(cond2, 0.0), tol=tol, extras=extras)
    report.converged = report.passed
    return report


def enumerate_pure_equilibria(chain: ChainModel, reward: RewardSpec,
                              tol: Optional[float] = None) -> list:
    """All stopping sets (absorbing states included) passing the pure check.

    Sorted by cardinality, then lexicographically by member indices.
    """
    free = np.flatnonzero(~chain.absorbing)
    if free.size > MAX_ENUM_STATES:
        raise TooManyStates(f"{free.size} non-absorbing states exceed the cap of {MAX_ENUM_STATES}")
    found = []
    for k in range(free.size + 1):
        for combo in itertools.combinations(free.tolist(), k):
            mask = chain.absorbing.copy()
            mask[list(combo)] = True
            S = StoppingSet(mask)
            try:
                ok = check_pure_equilibrium(chain, S, reward, tol).passed
            except SingularSystem:
                ok = False
            if ok:
                found.append(S)
    return found


def randomized_value(chain: ChainModel, stop_prob, reward: RewardSpec, agent: float) -> np.ndarray:
    """Value when state ``x`` stops with probability ``stop_prob[x]`` at each visit."""
    s = np.asarray(stop_prob, dtype=float).copy()
    s[chain.absorbing] = 1.0
    w = (1.0 - s) * chain.discount(reward.r)
    A = sp.identity(chain.n, format="csc") - sp.diags(w) @ chain.P
    F = reward.column(chain.states, agent)
    try:
        V = spla.splu(sp.csc_matrix(A)).solve(s * F)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    return V


@dataclass(frozen=True)
class MixedProfile:
    """Stop probabilities ``p`` at state a and ``q`` at state b."""

    p: float
    q: float

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


def mixed_value(profile: MixedProfile, agent: str) -> float:
    """Closed-form value of the coin-flip rule for agent ``"a"`` or ``"b"``.

    Solved from the one-step recursions of the four-state chain with r = 0.
    """
    p, q = profile.p, profile.q
    denom = 1.0 - 0.25 * (1.0 - p) * (1.0 - q)
    if agent == "a":
        return (p + 1.5 * (1.0 - p) * q) / denom
    if agent == "b":
        return (q + (1.0 - q) * (1.0 - p)) / denom
    raise ValueError(f"agent must be 'a' or 'b', got {agent!r}")


def verify_mixed_equilibrium(profile: MixedProfile, n_check: int = 101):
    """Scan unilateral deviations on a uniform grid; returns ``(passed, max_gain)``."""
    if n_check < 2:
        raise ValueError("n_check must be at least 2")
    grid = np.linspace(0.0, 1.0, int(n_check))
    va = mixed_value(profile, "a")
    vb = mixed_value(profile, "b")
    gain_a = max(mixed_value(MixedProfile(float(p), profile.q), "a") - va for p in grid)
    gain_b = max(mixed_value(MixedProfile(profile.p, float(q)), "b") - vb for q in grid)
    gain = max(gain_a, gain_b, 0.0)
    return gain <= STRICT_GAIN, gain
