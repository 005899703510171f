"""Forward iteration toward an equilibrium stopping set.

Start from the empty set, solve every agent's stopping problem with forced
stopping on the current set, and collect the states where the diagonal value
equals the immediate reward. The sets grow; once they stop growing the final
set is checked for the dominance condition that makes it an equilibrium.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .chain import check_pure_equilibrium, default_tol, deviation_gain
from .errors import NotCertified
from .model import ChainModel, EquilibriumReport, RewardSpec, StoppingSet, TwoArgFunction
from .solver import EPS_VI, default_eps_set, solve_payoff

STATUS_TERMINATED = "certified (terminated)"
STATUS_PROXY = "certified (proxy)"
STATUS_FAILED = "not certified"


@dataclass
class ForwardResult:
    S_sequence: list
    S_hat: StoppingSet
    v_inf: TwoArgFunction
    certified: bool
    status: str
    failed_assumption: Optional[str]
    report: EquilibriumReport
    diagnostics: dict = field(default_factory=dict)
    values: list = field(default_factory=list)

    @property
    def terminated(self) -> bool:
        return bool(self.diagnostics.get("terminated"))


def _solve_all(chain, r, cols, forced, inits, method, eps_set):
    V = np.empty_like(cols)
    stops = []
    iters = 0
    for k in range(cols.shape[1]):
        Vk, stop, it = solve_payoff(chain, r, cols[:, k], forced, method=method,
                                    init=None if inits is None else inits[k],
                                    eps_set=eps_set)
        V[:, k] = Vk
        stops.append(stop)
        iters += it
    return V, stops, iters


def _diagonal_set(chain, V, agent_col, Fd, forced, eps_set, dejitter):
    idx = np.arange(chain.n)
    gap = V[idx, agent_col] - Fd
    S = (gap <= eps_set) | forced
    if dejitter and chain.from_diffusion:
        # an isolated member with a near-tie gap is grid noise unless it
        # survives at half the tolerance
        left = np.concatenate(([False], S[:-1]))
        right = np.concatenate((S[1:], [False]))
        lonely = S & ~left & ~right & ~forced & (np.abs(gap) <= 2 * eps_set)
        S = S & ~(lonely & (gap > 0.5 * eps_set))
    return S


def iterate(chain: ChainModel, reward: RewardSpec, *, max_iters: int = 200,
            tol: Optional[float] = None, strict: bool = True, method: str = "policy",
            eps_set: Optional[float] = None, keep_values: bool = False) -> ForwardResult:
    """Run the forward iteration and certify its limit.

    ``tol`` is the equilibrium tolerance used for the final checks (default:
    1e-9 on exact chains, ``10 h`` on diffusion chains). With ``strict`` a
    failed check raises :class:`NotCertified` carrying the result.
    """
    t0 = time.perf_counter()
    chain.check_discount(reward.r)
    tol = default_tol(chain) if tol is None else float(tol)
    cols, agent_col = reward.agent_classes(chain.states)
    Fd = reward.diagonal(chain.states)
    if eps_set is None:
        eps_set = default_eps_set(cols, EPS_VI)
    r = reward.r

    # S_0 is empty; absorbing states stop regardless
    S_prev = chain.absorbing.copy()
    inits = None
    seq = []
    values = []
    terminated = False
    solver_iters = 0
    for n in range(1, max_iters + 1):
        V, stops, it = _solve_all(chain, r, cols, S_prev, inits, method, eps_set)
        solver_iters += it
        inits = stops
        if keep_values:
            values.append(TwoArgFunction(V.copy(), agent_col))
        S = _diagonal_set(chain, V, agent_col, Fd, S_prev, eps_set, dejitter=True)
        seq.append(StoppingSet(S))
        if n > 1 and np.array_equal(S, S_prev):
            terminated = True
            break
        S_prev = S

    S_hat = seq[-1]
    v_inf = TwoArgFunction(V, agent_col)
    report = check_pure_equilibrium(chain, S_hat, reward, tol)
    report.iterations = len(seq)
    report.converged = terminated

    checks = {"A1_runs": len(S_hat.runs()), "A1": True}
    failed = None
    # dominance of the stopping value over the immediate reward off the limit set
    checks["A3_violation"] = report.cond1_violation
    checks["A3"] = report.cond1_violation <= tol
    if not checks["A3"]:
        failed = "A3"
    if terminated:
        status = STATUS_TERMINATED if failed is None else STATUS_FAILED
    else:
        # one more constrained solve: the values should no longer move
        V_next, _, _ = _solve_all(chain, r, cols, S_hat.mask, inits, method, eps_set)
        drift = float(np.max(np.abs(V_next - V)))
        checks["A2_drift"] = drift
        checks["A2"] = drift <= tol
        last_new = S_hat.mask & ~(seq[-2].mask if len(seq) > 1 else chain.absorbing)
        gain = deviation_gain(chain, TwoArgFunction(V, agent_col), reward)
        probe = last_new & ~chain.absorbing & ~chain.boundary_layer
        checks["A4_gain"] = float(np.max(gain[probe])) if probe.any() else 0.0
        checks["A4"] = checks["A4_gain"] <= tol
        if failed is None and not checks["A2"]:
            failed = "A2"
        if failed is None and not checks["A4"]:
            failed = "A4"
        status = STATUS_PROXY if failed is None else STATUS_FAILED

    labels = chain.states
    diagnostics = {
        "terminated": terminated,
        "iterations": len(seq),
        "solver_iterations": solver_iters,
        "agent_classes": int(cols.shape[1]),
        "eps_set": eps_set,
        "tol": tol,
        "checks": checks,
        "intervals": [S.intervals(labels) for S in seq],
        "seconds": time.perf_counter() - t0,
    }
    report.extras.update({"status": status})
    result = ForwardResult(seq, S_hat, v_inf, failed is None, status, failed, report,
                           diagnostics, values)
    if strict and failed is not None:
        raise NotCertified(failed, f"assumption {failed} check failed ({status})", result)
    return result


def threshold_sequence_oracle(n: int, c: float) -> list:
    """Thresholds of the optimistic call/put iteration for ``c = sqrt(2 r)``.

    ``x_1 = 1/c`` and ``x_k`` is the root in ``(0, x_{k-1})`` of
    ``e^{2cx} = e^{-2c x_{k-1}} (1/c + x) / (1/c - x)``.
    """
    if not c > 0 or n < 1:
        raise ValueError("need c > 0 and n >= 1")
    xs = [1.0 / c]
    for _ in range(n - 1):
        prev = xs[-1]

        def phi(x, prev=prev):
            return np.exp(2 * c * x) * (1 / c - x) - np.exp(-2 * c * prev) * (1 / c + x)

        lo, hi = 0.0, prev
        if not phi(lo) > 0:
            raise ArithmeticError("no sign change for the threshold recursion")
        if phi(hi) >= 0:
            # converged to rounding: the root sits on the right end
            xs.append(prev)
            continue
        xs.append(bisect(phi, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200))
    return xs


def threshold_limit_oracle(c: float) -> float:
    """Root in the open interval ``(0, 1/c)`` of ``e^{4cx} = (1/c + x)/(1/c - x)``."""
    if not c > 0:
        raise ValueError("need c > 0")

    def psi(x):
        return np.exp(4 * c * x) * (1 / c - x) - (1 / c + x)

    # psi(0) = 0 and psi'(0) = 2 > 0, so step off zero before bracketing
    lo = 1e-6 / c
    if not psi(lo) > 0 > psi(1 / c):
        raise ArithmeticError("no sign change on (0, 1/c)")
    return bisect(psi, lo, 1 / c, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
