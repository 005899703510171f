"""One-sided problems via the running-maximum representation.

When ``F(x, y) = E_x Q_y(M_T)`` with ``M_T`` the running maximum up to an
independent exponential time, agent ``y`` stops above the sign change of
``Q_y``. The equilibrium threshold is the fixed point of ``y -> x*_y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate
from scipy.optimize import bisect

from .errors import (ConfigError, DivergentExpectation, HypothesisViolated, NoFixedPoint,
                     NoSignChange, NotMonotoneAbove)

XTOL = 1e-12
N_SAMPLES = 10_000
MC_SAMPLES = 1_000_000


@dataclass(frozen=True)
class MaxRepresentation:
    """``Q(z, y)`` with the law of ``M_T - X_0``.

    ``maxdist`` is either the rate ``c`` of an exponential law (the driftless
    Wiener case, ``c = sqrt(2 r)``) or a sampler ``(rng, size) -> array``.
    ``strike`` marks the exp-affine form ``Q(z, y) = a e^z - K(y)`` and holds
    ``K``; it enables closed-form values.
    """

    Q: Callable
    maxdist: Union[float, Callable]
    a_const: float
    strike: Optional[Callable] = None

    def __post_init__(self):
        if not 0.0 < self.a_const < 1.0:
            raise ConfigError(f"a must lie in (0, 1), got {self.a_const}")
        if not callable(self.maxdist) and not float(self.maxdist) > 0:
            raise ConfigError("exponential rate must be positive")

    @property
    def rate(self) -> Optional[float]:
        return None if callable(self.maxdist) else float(self.maxdist)

    @classmethod
    def exp_affine(cls, K: Callable, r: float) -> "MaxRepresentation":
        """``Q(z, y) = a e^z - K(y)`` for a standard Wiener log-price.

        ``M_T - x`` is exponential with rate ``c = sqrt(2 r)`` and
        ``a = (c - 1)/c``, which needs ``c > 1``.
        """
        c = float(np.sqrt(2.0 * r))
        if not c > 1.0:
            raise DivergentExpectation(f"E e^M is infinite for c = {c:.6g} <= 1")
        a = (c - 1.0) / c

        def Q(z, y):
            return a * np.exp(z) - K(y)

        return cls(Q, c, a, strike=K)


def _sample_sign(rep, y, bracket, n):
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise ConfigError("bracket requires hi > lo")
    z = np.linspace(lo, hi, n)
    q = np.asarray(rep.Q(z, np.full_like(z, y)), dtype=float)
    return z, q


def threshold_for_agent(rep: MaxRepresentation, y: float, bracket,
                        n_samples: int = N_SAMPLES) -> float:
    """Sign-change point of ``Q(., y)`` on ``bracket``.

    ``Q`` must be non-positive below the point and positive and
    non-decreasing above it, checked on ``n_samples`` points.
    """
    z, q = _sample_sign(rep, y, bracket, n_samples)
    pos = q > 0
    if pos.all() or not pos.any():
        raise NoSignChange(f"Q(., {y:.6g}) has no sign change on {tuple(bracket)}")
    first = int(np.argmax(pos))
    above = q[first:]
    if not pos[first:].all():
        raise NotMonotoneAbove(f"Q(., {y:.6g}) returns to non-positive values above its sign change")
    scale = max(1.0, float(np.max(np.abs(above))))
    if np.any(np.diff(above) < -1e-12 * scale):
        raise NotMonotoneAbove(f"Q(., {y:.6g}) decreases above its sign change")
    if first == 0:
        raise NoSignChange("sign change lies at or below the bracket's left end")

    def fn(t):
        return float(rep.Q(np.array(t), np.array(y)))

    lo, hi = float(z[first - 1]), float(z[first])
    if fn(lo) == 0.0:
        return lo
    return float(bisect(fn, lo, hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=200))


def equilibrium_threshold(rep: MaxRepresentation, bracket, y_bracket=None,
                          n_check: int = 101) -> float:
    """Fixed point ``x* = x*_{x*}`` of the agent-threshold map.

    Afterwards checks on ``n_check`` agents that ``x*_y <= y`` above the fixed
    point and ``x*_y >= x*`` below it.
    """
    y_lo, y_hi = map(float, bracket if y_bracket is None else y_bracket)

    def g(y):
        return threshold_for_agent(rep, y, bracket) - y

    g_lo, g_hi = g(y_lo), g(y_hi)
    if g_lo == 0.0:
        x_star = y_lo
    elif g_hi == 0.0:
        x_star = y_hi
    elif not g_lo > 0 > g_hi:
        raise NoFixedPoint(f"x*_y - y does not change sign on [{y_lo}, {y_hi}]")
    else:
        x_star = bisect(g, y_lo, y_hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)

    tol = 1e-9 * max(1.0, abs(x_star))
    for y in np.linspace(y_lo, y_hi, n_check):
        t = threshold_for_agent(rep, y, bracket)
        if y >= x_star and t > y + tol:
            raise HypothesisViolated(f"x*_y = {t:.6g} > y = {y:.6g} above the fixed point")
        if y <= x_star and t < x_star - tol:
            raise HypothesisViolated(f"x*_y = {t:.6g} < x* = {x_star:.6g} below the fixed point")
    return float(x_star)


def reward_value(rep: MaxRepresentation, x: float, y: float) -> float:
    """Immediate reward ``F(x, y) = E_x Q_y(M_T)``."""
    if rep.strike is not None:
        # a = 1 / E e^M, so the a e^M term averages to e^x
        return float(np.exp(x) - rep.strike(y))
    return one_sided_value(rep, x, y, -np.inf)


def one_sided_value(rep: MaxRepresentation, x: float, y: float, x_star: float) -> float:
    """``E_x(Q_y(M_T) 1{M_T >= x_star})``: agent ``y``'s value under the threshold rule."""
    c = rep.rate
    if c is None:
        return one_sided_value_mc(rep, x, y, x_star)[0]
    s = max(float(x_star), float(x))
    if rep.strike is not None:
        if not c > 1.0:
            raise DivergentExpectation(f"E e^M is infinite for c = {c:.6g} <= 1")
        if x >= x_star:
            return float(np.exp(x) - rep.strike(y))
        d = s - x
        return float(rep.a_const * c / (c - 1.0) * np.exp(x) * np.exp((1.0 - c) * d)
                     - rep.strike(y) * np.exp(-c * d))

    def integrand(m):
        w = c * np.exp(-c * m)
        if w == 0.0:
            return 0.0
        with np.errstate(over="ignore"):
            return float(rep.Q(np.array(x + m), np.array(y))) * w

    start = 0.0 if not np.isfinite(s) else s - x
    val, _ = integrate.quad(integrand, start, np.inf, limit=200)
    return float(val)


def one_sided_value_mc(rep: MaxRepresentation, x: float, y: float, x_star: float,
                       n: int = MC_SAMPLES, seed: int = 0):
    """Monte Carlo ``(value, standard error)`` from samples of ``M_T - x``."""
    rng = np.random.default_rng(seed)
    if callable(rep.maxdist):
        m = np.asarray(rep.maxdist(rng, n), dtype=float)
    else:
        m = rng.exponential(1.0 / rep.rate, n)
    M = x + m
    vals = np.where(M >= x_star, rep.Q(M, np.full_like(M, y)), 0.0)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def mirrored(rep: MaxRepresentation) -> MaxRepresentation:
    """Representation of the reflected problem ``(-X, Q(-z, -y))``.

    A left-sided problem written with the running minimum becomes one-sided
    to the right after reflection; thresholds map back by a sign flip.
    """
    Q = rep.Q
    return MaxRepresentation(lambda z, y: Q(-np.asarray(z), -np.asarray(y)), rep.maxdist,
                             rep.a_const)


def left_sided_threshold(rep_left: MaxRepresentation, bracket, y_bracket=None) -> float:
    """Equilibrium threshold ``x*`` (stop when ``X <= x*``) of a left-sided problem.

    ``rep_left.Q`` is written against the running minimum.
    """
    lo, hi = map(float, bracket)
    yb = None if y_bracket is None else (-float(y_bracket[1]), -float(y_bracket[0]))
    return -equilibrium_threshold(mirrored(rep_left), (-hi, -lo), yb)


def dominance_gap(rep: MaxRepresentation, x_star: float, xs) -> float:
    """``max(F(x, x) - value(x, x))`` over sampled ``x < x*``; non-positive when
    the threshold rule dominates immediate stopping."""
    xs = np.asarray(xs, dtype=float)
    xs = xs[xs < x_star]
    if xs.size == 0:
        return 0.0
    return max(reward_value(rep, x, x) - one_sided_value(rep, x, x, x_star) for x in xs)
