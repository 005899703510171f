"""Standard (time-consistent) optimal stopping on a chain with forced stops.

This is the engine behind every ``v_n(., y)`` of the forward iteration: for
one agent the reward column is fixed and the problem is an ordinary stopping
problem for the chain absorbed in the constraint set.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order

from .errors import NoConvergence, SingularSystem
from .model import ChainModel, RewardSpec, StoppingSet

EPS_VI = 1e-10
MAX_VALUE_ITER = 10**6


def default_eps_set(payoff, eps_vi: float = EPS_VI) -> float:
    scale = max(1.0, float(np.max(np.abs(payoff))) if np.size(payoff) else 1.0)
    return 10.0 * eps_vi * scale


def _reaches(chain: ChainModel, targets: np.ndarray) -> np.ndarray:
    """States from which ``targets`` is reachable with positive probability."""
    if not targets.any():
        return np.zeros(chain.n, dtype=bool)
    # BFS on the reversed graph from a virtual root linked to every target
    rev = chain.P.T.tocsr()
    n = chain.n
    root_links = sp.csr_matrix((np.ones(int(targets.sum())),
                                (np.full(int(targets.sum()), n), np.flatnonzero(targets))),
                               shape=(n + 1, n + 1))
    graph = sp.bmat([[rev, None], [None, sp.csr_matrix((1, 1))]]).tocsr() + root_links
    order = breadth_first_order(graph, n, directed=True, return_predecessors=False)
    seen = np.zeros(n + 1, dtype=bool)
    seen[order] = True
    return seen[:n]


class StopSystem:
    """Factorised system ``V = g`` on a stop set, ``V = disc * P V`` elsewhere.

    One factorisation serves any number of right-hand sides, which is how all
    agents' auxiliary functions for a fixed stopping set are computed at once.
    """

    def __init__(self, chain: ChainModel, r: float, stop: np.ndarray):
        stop = np.asarray(stop, dtype=bool)
        self.chain = chain
        self.stop = stop
        self.disc = chain.discount(r)
        cont = ~stop
        if r == 0 and cont.any():
            ok = _reaches(chain, stop)
            if not np.all(ok[cont]):
                bad = np.flatnonzero(cont & ~ok)
                raise SingularSystem(
                    f"{bad.size} continuation states never reach the stopping set with r = 0")
        w = np.where(cont, self.disc, 0.0)
        self._banded = chain.is_tridiagonal
        n = chain.n
        if self._banded:
            P = chain.P
            d = P.diagonal()
            up = np.zeros(n)
            lo = np.zeros(n)
            up[:-1] = P.diagonal(1)
            lo[1:] = P.diagonal(-1)
            ab = np.zeros((3, n))
            ab[0, 1:] = -(w * up)[:-1]
            ab[1, :] = 1.0 - w * d
            ab[2, :-1] = -(w * lo)[1:]
            self._ab = ab
        else:
            A = sp.identity(n, format="csc") - sp.diags(w) @ chain.P
            try:
                self._lu = spla.splu(sp.csc_matrix(A))
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
        self._w = w

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Solve for payoff ``g`` (shape ``(n,)`` or ``(n, k)``)."""
        g = np.asarray(g, dtype=float)
        rhs = np.where(self.stop[:, None] if g.ndim == 2 else self.stop, g, 0.0)
        try:
            if self._banded:
                V = la.solve_banded((1, 1), self._ab, rhs, check_finite=False)
            else:
                V = self._lu.solve(rhs)
        except (la.LinAlgError, RuntimeError) as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(V)):
            raise SingularSystem("non-finite solution")
        return V

    def residual(self, V: np.ndarray, g: np.ndarray) -> float:
        PV = self.chain.P @ V
        w = self._w[:, None] if V.ndim == 2 else self._w
        stop = self.stop[:, None] if V.ndim == 2 else self.stop
        res = np.where(stop, V - g, V - w * PV)
        return float(np.max(np.abs(res))) if res.size else 0.0


def continuation_value(chain: ChainModel, r: float, V: np.ndarray) -> np.ndarray:
    """One-step expected discounted value ``exp(-r dt) * (P V)``."""
    disc = chain.discount(r)
    PV = chain.P @ V
    return (disc[:, None] * PV) if np.ndim(V) == 2 else disc * PV


def _policy_iteration(chain, r, F, forced, init, tol, max_iter):
    stop = (init | forced).copy()
    for it in range(1, max_iter + 1):
        V = StopSystem(chain, r, stop).solve(F)
        cont = continuation_value(chain, r, V)
        to_stop = ~stop & (F > V + tol)
        to_cont = stop & ~forced & (cont > F + tol)
        if not (to_stop.any() or to_cont.any()):
            return V, it
        stop = (stop & ~to_cont) | to_stop
    raise NoConvergence(f"policy iteration did not settle in {max_iter} steps")


def _value_iteration(chain, r, F, forced, eps_vi, max_iter):
    disc = chain.discount(r)
    V = F.copy()
    for it in range(1, max_iter + 1):
        Vn = np.maximum(F, disc * (chain.P @ V))
        Vn[forced] = F[forced]
        inc = float(np.max(np.abs(Vn - V)))
        V = Vn
        if inc <= eps_vi:
            return V, it
    raise NoConvergence(f"value iteration hit the cap of {max_iter} sweeps")


def solve_payoff(chain: ChainModel, r: float, F: np.ndarray, forced: np.ndarray,
                 *, method: str = "policy", init: Optional[np.ndarray] = None,
                 eps_vi: float = EPS_VI, eps_set: Optional[float] = None,
                 max_iter: Optional[int] = None):
    """Solve one reward column; returns ``(value, stop_mask, iterations)``."""
    F = np.asarray(F, dtype=float)
    forced = np.asarray(forced, dtype=bool) | chain.absorbing
    if eps_set is None:
        eps_set = default_eps_set(F, eps_vi)
    if method == "policy":
        if init is None:
            # myopic start: stop where one more step cannot help
            init = F > continuation_value(chain, r, F)
        tol = 1e-13 * max(1.0, float(np.max(np.abs(F))))
        V, iters = _policy_iteration(chain, r, F, forced, np.asarray(init, bool), tol,
                                     max_iter or 10 * chain.n + 100)
    elif method == "value":
        V, iters = _value_iteration(chain, r, F, forced, eps_vi, max_iter or MAX_VALUE_ITER)
        # polish: evaluate the extracted policy exactly where that is well posed
        stop = (V <= F + eps_set) | forced
        try:
            Vp = StopSystem(chain, r, stop).solve(F)
            if np.max(np.abs(Vp - V)) <= 100 * eps_set:
                V = np.maximum(Vp, F)
        except SingularSystem:
            pass
    else:
        raise ValueError(f"unknown method {method!r}")
    stop = (V <= F + eps_set) | forced
    return V, stop, iters


class StandardSolution(NamedTuple):
    value: np.ndarray
    stopset: StoppingSet


def solve_standard(chain: ChainModel, reward: RewardSpec, agent: float,
                   constraint: Optional[StoppingSet] = None, *, method: str = "policy",
                   eps_vi: float = EPS_VI, eps_set: Optional[float] = None,
                   init: Optional[StoppingSet] = None,
                   max_iter: Optional[int] = None) -> StandardSolution:
    """Optimal stopping for agent ``agent`` with forced stopping on ``constraint``.

    The value solves ``V = max(F(., agent), exp(-r dt) P V)`` off the
    constraint and ``V = F(., agent)`` on it. ``method="policy"`` (default)
    runs Howard policy iteration with exact linear solves; ``"value"`` runs
    value iteration to increment ``eps_vi`` and then evaluates the extracted
    policy exactly. The stopping set is ``{V <= F + eps_set}``, so near-ties
    are resolved toward stopping.
    """
    chain.check_discount(reward.r)
    F = reward.column(chain.states, agent)
    forced = np.zeros(chain.n, dtype=bool) if constraint is None else constraint.mask
    V, stop, _ = solve_payoff(chain, reward.r, F, forced, method=method,
                              init=None if init is None else init.mask,
                              eps_vi=eps_vi, eps_set=eps_set, max_iter=max_iter)
    return StandardSolution(V, StoppingSet(stop))


def value_lower_bound_check(value, chain: ChainModel, reward: RewardSpec, agent: float) -> bool:
    """True iff ``value >= F(., agent) - 1e-10`` everywhere (stopping now is admissible)."""
    F = reward.column(chain.states, agent)
    return bool(np.all(np.asarray(value) >= F - 1e-10))
