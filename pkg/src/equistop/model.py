"""Problem-definition types shared by every solver and verifier.

A problem is a two-argument reward ``F(x, y)`` (state ``x``, agent ``y``) with
a discount rate, paired with either a finite Markov chain or a 1-D diffusion
that is turned into a birth-death chain on a uniform grid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NonPositiveVolatility

ROW_SUM_TOL = 1e-12
BOUNDARY_TAGS = ("absorbing", "truncation")


class RewardSpec:
    """Reward ``F(x, y)`` and discount rate ``r``.

    ``F`` must broadcast over numpy arrays: ``F(xs[:, None], ys[None, :])``
    returns the matrix of rewards for states ``xs`` and agents ``ys``.
    ``agent_key`` optionally maps an agent label to a hashable class such that
    agents in one class have identical reward columns; solvers then share one
    solve per class instead of hashing every column.
    """

    def __init__(self, F: Callable, r: float, agent_key: Optional[Callable] = None,
                 name: str = ""):
        r = float(r)
        if not r >= 0.0:
            raise ConfigError(f"discount rate must be >= 0, got {r}")
        self.F = F
        self.r = r
        self.agent_key = agent_key
        self.name = name

    def __repr__(self):
        return f"RewardSpec(name={self.name!r}, r={self.r})"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.F(x, y), dtype=float),
                               np.broadcast(x, y).shape)

    def column(self, states, y: float) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return np.array(self(states, np.full_like(states, y)), dtype=float)

    def diagonal(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return np.array(self(states, states), dtype=float)

    def matrix(self, states, agents=None) -> np.ndarray:
        """Dense ``F[i, j] = F(states[i], agents[j])``."""
        states = np.asarray(states, dtype=float)
        agents = states if agents is None else np.asarray(agents, dtype=float)
        return np.array(self(states[:, None], agents[None, :]), dtype=float)

    def check_bounded_below(self, points) -> None:
        """Sampled check that every ``F(., y)`` is finite on ``points``."""
        vals = self.matrix(points)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("reward is not finite on the working domain")

    def agent_classes(self, states, chunk: int = 256):
        """Group agents by identical reward columns.

        Returns ``(columns, agent_col)`` where ``columns[:, k]`` is the reward
        vector of class ``k`` and ``agent_col[j]`` is the class of agent
        ``states[j]``.
        """
        states = np.asarray(states, dtype=float)
        n = states.size
        agent_col = np.empty(n, dtype=np.intp)
        cols: list[np.ndarray] = []
        seen: dict = {}
        if self.agent_key is not None:
            for j, y in enumerate(states):
                key = self.agent_key(float(y))
                if key not in seen:
                    seen[key] = len(cols)
                    cols.append(self.column(states, y))
                agent_col[j] = seen[key]
        else:
            for start in range(0, n, chunk):
                block = self.matrix(states, states[start:start + chunk])
                for off in range(block.shape[1]):
                    col = np.ascontiguousarray(block[:, off])
                    key = hashlib.blake2b(col.tobytes(), digest_size=16).digest()
                    if key not in seen:
                        seen[key] = len(cols)
                        cols.append(col)
                    agent_col[start + off] = seen[key]
        return np.column_stack(cols), agent_col

    @classmethod
    def from_table(cls, labels: Sequence[float], table, r: float, name: str = "table"):
        """Reward given as ``table[j][i] = F(labels[i], labels[j])``.

        ``table`` is indexed by agent first, matching how the worked chain
        examples list one reward vector per agent.
        """
        labels = np.asarray(labels, dtype=float)
        table = np.asarray(table, dtype=float)
        n = labels.size
        if table.shape != (n, n):
            raise ConfigError(f"reward table must be {n}x{n}, got {table.shape}")
        order = np.argsort(labels)
        sorted_labels = labels[order]

        def index(v):
            pos = np.searchsorted(sorted_labels, v)
            pos = np.clip(pos, 0, n - 1)
            if not np.all(sorted_labels[pos] == v):
                raise ConfigError("reward table queried at an unknown state label")
            return order[pos]

        def F(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            return table[index(y), index(x)]

        return cls(F, r, name=name)


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if int(self.n) < 3:
            raise ConfigError("grid needs at least 3 nodes")
        if not self.hi > self.lo:
            raise ConfigError("grid requires hi > lo")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, int(self.n))

    @classmethod
    def from_step(cls, lo: float, hi: float, h: float) -> "Grid":
        n = int(round((hi - lo) / h)) + 1
        return cls(float(lo), float(hi), n)


@dataclass(frozen=True)
class DiffusionModel:
    """``dX = mu(X) dt + sigma(X) dW`` on ``[lo, hi]``.

    ``kind`` is "wiener", "gbm" or "generic"; Monte Carlo engines use it to
    pick an exact scheme. ``params`` keeps the constants of the built-in kinds.
    """

    mu: Callable
    sigma: Callable
    domain: tuple
    boundary: tuple = ("truncation", "truncation")
    kind: str = "generic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise ConfigError("diffusion domain requires hi > lo")
        for tag in self.boundary:
            if tag not in BOUNDARY_TAGS:
                raise ConfigError(f"unknown boundary tag {tag!r}")
        finite = [v for v in (lo, hi) if np.isfinite(v)]
        if len(finite) == 2:
            xs = np.linspace(lo, hi, 257)[1:-1]
            s = np.asarray(self.sigma(xs), dtype=float) * np.ones_like(xs)
            m = np.asarray(self.mu(xs), dtype=float) * np.ones_like(xs)
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(m))):
                raise ConfigError("mu and sigma must be finite on the domain")
            if np.any(s <= 0):
                raise NonPositiveVolatility("sigma must be positive on the open domain")

    @classmethod
    def wiener(cls, domain, sigma: float = 1.0, mu: float = 0.0,
               boundary=("truncation", "truncation")) -> "DiffusionModel":
        sigma, mu = float(sigma), float(mu)
        return cls(lambda x: np.full_like(np.asarray(x, float), mu),
                   lambda x: np.full_like(np.asarray(x, float), sigma),
                   tuple(domain), tuple(boundary), "wiener",
                   {"sigma": sigma, "mu": mu})

    @classmethod
    def gbm(cls, domain, sigma: float, mu: float = 0.0,
            boundary=("truncation", "truncation")) -> "DiffusionModel":
        sigma, mu = float(sigma), float(mu)
        return cls(lambda x: mu * np.asarray(x, float),
                   lambda x: sigma * np.asarray(x, float),
                   tuple(domain), tuple(boundary), "gbm",
                   {"sigma": sigma, "mu": mu})

    def generator(self, f: Callable, x, h: float):
        """Central-difference ``A f(x) = mu f' + sigma^2/2 f''`` at step ``h``."""
        x = np.asarray(x, dtype=float)
        fp, f0, fm = f(x + h), f(x), f(x - h)
        d1 = (fp - fm) / (2 * h)
        d2 = (fp - 2 * f0 + fm) / (h * h)
        return np.asarray(self.mu(x)) * d1 + 0.5 * np.asarray(self.sigma(x)) ** 2 * d2


class StoppingSet:
    """Boolean membership mask over chain states or grid nodes."""

    __slots__ = ("_mask",)

    def __init__(self, mask):
        m = np.array(mask, dtype=bool).ravel()
        m.setflags(write=False)
        self._mask = m

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    def __len__(self):
        return self._mask.size

    def __eq__(self, other):
        return isinstance(other, StoppingSet) and np.array_equal(self._mask, other._mask)

    def __hash__(self):
        return hash(self._mask.tobytes())

    def __or__(self, other):
        return StoppingSet(self._mask | other.mask)

    def __and__(self, other):
        return StoppingSet(self._mask & other.mask)

    def __invert__(self):
        return StoppingSet(~self._mask)

    def __repr__(self):
        return f"StoppingSet({np.flatnonzero(self._mask).tolist()})"

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self._mask)

    @property
    def count(self) -> int:
        return int(self._mask.sum())

    def issubset(self, other: "StoppingSet") -> bool:
        return bool(np.all(~self._mask | other.mask))

    def runs(self) -> list:
        """Maximal index runs ``(i, j)`` (inclusive) of members."""
        idx = self.indices
        if idx.size == 0:
            return []
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.concatenate(([idx[0]], idx[breaks + 1]))
        ends = np.concatenate((idx[breaks], [idx[-1]]))
        return list(zip(starts.tolist(), ends.tolist()))

    def intervals(self, labels) -> list:
        labels = np.asarray(labels, dtype=float)
        return [(float(labels[i]), float(labels[j])) for i, j in self.runs()]

    @classmethod
    def empty(cls, n: int) -> "StoppingSet":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def full(cls, n: int) -> "StoppingSet":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def from_indices(cls, n: int, indices) -> "StoppingSet":
        m = np.zeros(n, dtype=bool)
        m[list(indices)] = True
        return cls(m)

    @classmethod
    def from_predicate(cls, labels, pred) -> "StoppingSet":
        return cls(np.asarray(pred(np.asarray(labels, dtype=float)), dtype=bool))


class ChainModel:
    """Finite Markov chain with absorbing states and per-state time steps.

    ``dt`` is the real time one transition takes from each state; discounting
    over a step from state ``i`` is ``exp(-r * dt[i])``. Chains built from a
    diffusion carry ``origin`` metadata (grid, boundary tags).
    """

    def __init__(self, states, P, absorbing=(), dt=1.0, origin: Optional[dict] = None):
        states = np.asarray(states, dtype=float)
        n = states.size
        P = sp.csr_matrix(P, dtype=float)
        P.eliminate_zeros()
        if P.shape != (n, n):
            raise ConfigError(f"transition matrix must be {n}x{n}, got {P.shape}")
        if P.nnz and P.data.min() < 0:
            raise ConfigError("transition probabilities must be non-negative")
        rows = np.asarray(P.sum(axis=1)).ravel()
        if np.max(np.abs(rows - 1.0)) > ROW_SUM_TOL:
            raise ConfigError("every row of P must sum to 1")
        absorbing_mask = np.zeros(n, dtype=bool)
        absorbing = np.asarray(list(absorbing))
        if absorbing.size:
            if absorbing.dtype == bool:
                absorbing_mask[:] = absorbing
            else:
                absorbing_mask[absorbing.astype(int)] = True
        diag = P.diagonal()
        if np.any(np.abs(diag[absorbing_mask] - 1.0) > ROW_SUM_TOL):
            raise ConfigError("absorbing states need P[i, i] = 1")
        dt = np.broadcast_to(np.asarray(dt, dtype=float), (n,)).copy()
        if np.any(dt <= 0):
            raise ConfigError("time steps must be positive")
        for a in (states, absorbing_mask, dt):
            a.setflags(write=False)
        self.states = states
        self.P = P
        self.absorbing = absorbing_mask
        self.dt = dt
        self.origin = origin or {}

    @property
    def n(self) -> int:
        return self.states.size

    @property
    def from_diffusion(self) -> bool:
        return "grid" in self.origin

    def __repr__(self):
        kind = "diffusion" if self.from_diffusion else "chain"
        return f"ChainModel(n={self.n}, absorbing={int(self.absorbing.sum())}, {kind})"

    def discount(self, r: float) -> np.ndarray:
        return np.exp(-r * self.dt)

    def check_discount(self, r: float) -> None:
        if r == 0 and not self.absorbing.any() and not self.origin.get("allow_recurrent"):
            raise ConfigError("chain needs an absorbing state when r = 0")

    @property
    def is_tridiagonal(self) -> bool:
        coo = self.P.tocoo()
        return bool(np.all(np.abs(coo.row - coo.col) <= 1))

    @property
    def boundary_layer(self) -> np.ndarray:
        """Non-absorbing states with a one-step transition into an absorbing state.

        Only meaningful for chains approximating a diffusion, where such nodes
        stand in for points arbitrarily close to an absorbing endpoint.
        """
        if not self.from_diffusion or not self.absorbing.any():
            return np.zeros(self.n, dtype=bool)
        hits = self.P @ self.absorbing.astype(float)
        return (hits > 0) & ~self.absorbing


@dataclass
class TwoArgFunction:
    """Two-argument grid function ``v(x_i, y_j)`` stored by agent class.

    ``columns[:, k]`` is shared by all agents ``j`` with ``agent_col[j] == k``;
    for rewards whose columns are all distinct this is the dense ``n x n``
    layout.
    """

    columns: np.ndarray
    agent_col: np.ndarray

    def __getitem__(self, ij):
        i, j = ij
        return self.columns[i, self.agent_col[j]]

    def column(self, j: int) -> np.ndarray:
        return self.columns[:, self.agent_col[j]]

    def diag(self) -> np.ndarray:
        idx = np.arange(self.agent_col.size)
        return self.columns[idx, self.agent_col]

    def dense(self) -> np.ndarray:
        return self.columns[:, self.agent_col]

    @property
    def n_classes(self) -> int:
        return self.columns.shape[1]


@dataclass
class EquilibriumReport:
    """Outcome of checking a stopping set against the equilibrium conditions.

    ``cond1_violation`` is ``max(F(x,x) - J(x))``; ``cond2_violation`` is the
    largest gain from deviating by continuing once at a stopping state.
    """

    S: StoppingSet
    J: np.ndarray
    f: Optional[TwoArgFunction]
    C: StoppingSet
    cond1_violation: float
    cond2_violation: float
    iterations: int = 0
    converged: bool = True
    tol: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.cond1_violation <= self.tol) and (self.cond2_violation <= self.tol)

    def to_dict(self, labels=None) -> dict:
        labels = np.arange(len(self.S)) if labels is None else np.asarray(labels)
        out = {
            "S": [float(v) for v in labels[self.S.mask]],
            "passed": self.passed,
            "cond1_violation": float(self.cond1_violation),
            "cond2_violation": float(self.cond2_violation),
            "tol": float(self.tol),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }
        out.update(self.extras)
        return out


def make_chain_from_diffusion(model: DiffusionModel, grid: Grid) -> ChainModel:
    """Birth-death approximation of ``model`` on ``grid`` with upwinded drift.

    Interior node ``i`` moves up/down with
    ``p± = (sigma²/2 + h·mu±) / (sigma² + h|mu|)`` and takes time
    ``dt = h² / (sigma² + h|mu|)``. Absorbing endpoints become identity rows;
    truncation endpoints reflect onto their neighbour.
    """
    lo, hi = model.domain
    tol = 1e-12 * max(1.0, abs(grid.lo), abs(grid.hi))
    if grid.lo < lo - tol or grid.hi > hi + tol:
        raise ConfigError("grid must lie inside the diffusion domain")
    x = grid.nodes
    n, h = x.size, grid.h
    mu = np.asarray(model.mu(x), dtype=float) * np.ones(n)
    s2 = (np.asarray(model.sigma(x), dtype=float) * np.ones(n)) ** 2
    if np.any(s2[1:-1] <= 0) or np.any(np.asarray(model.sigma(x[1:-1])) <= 0):
        raise NonPositiveVolatility("sigma must be positive at interior nodes")
    denom = s2 + h * np.abs(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = (0.5 * s2 + h * np.maximum(mu, 0.0)) / denom
        dt = h * h / denom
    down = 1.0 - up
    # endpoint volatility may vanish (e.g. GBM at 0); borrow the neighbour's step
    for b, nb in ((0, 1), (n - 1, n - 2)):
        if not (np.isfinite(dt[b]) and dt[b] > 0):
            dt[b] = dt[nb]

    rows, cols, vals = [], [], []
    interior = np.arange(1, n - 1)
    rows += [interior, interior]
    cols += [interior + 1, interior - 1]
    vals += [up[1:-1], down[1:-1]]
    absorbing = []
    reflecting = []
    for b, nb, tag in ((0, 1, model.boundary[0]), (n - 1, n - 2, model.boundary[1])):
        rows.append(np.array([b]))
        if tag == "absorbing":
            cols.append(np.array([b]))
            absorbing.append(b)
        else:
            cols.append(np.array([nb]))
            reflecting.append(b)
        vals.append(np.array([1.0]))
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    origin = {"grid": grid, "boundary": tuple(model.boundary), "reflecting": reflecting,
              "kind": model.kind, "allow_recurrent": True}
    return ChainModel(x, P, absorbing, dt, origin)
