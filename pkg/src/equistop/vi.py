"""Finite-difference verification of the time-inconsistent variational inequalities.

A candidate auxiliary function ``f(x, y)`` is checked on a grid of states and
agents. The generator acts on the first argument only and is evaluated off
grid at a mesh ``h_fd`` that is decoupled from the grid spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigError, EmptyBoundary, MultipleRoots, NoRoot
from .forward import threshold_limit_oracle
from .model import DiffusionModel, Grid, RewardSpec, StoppingSet
from .problems import habit_exponential, habit_g, optimistic_call_put

INTERIOR_TOL = 1e-4
SMOOTH_FIT_TOL = 1e-6
BOUND_CAP = 1e6
AGENT_CHUNK = 128
# fourth-order one-sided first-derivative weights on offsets 0..4
_ONE_SIDED = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


@dataclass(frozen=True)
class CandidateSolution:
    """Candidate ``f(x, y)`` for a diffusion problem.

    ``boundary`` optionally lists the free-boundary points the candidate was
    built around; smooth fit is then measured there rather than at the
    boundary found from the data.
    """

    f: Callable
    model: DiffusionModel
    reward: RewardSpec
    boundary: Optional[tuple] = None

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.f(x, y), dtype=float), np.broadcast(x, y).shape)

    def gap(self, x):
        """``f(x, x) - F(x, x)``."""
        return self(x, x) - self.reward(x, x)


@dataclass
class ContinuationSet:
    C: StoppingSet
    boundary_nodes: np.ndarray
    boundary_points: np.ndarray
    grid: Grid


def extract_continuation_set(cand: CandidateSolution, grid: Grid,
                             tol: float = 1e-10) -> ContinuationSet:
    """``C = {x : f(x, x) - F(x, x) > tol}`` on the grid, with its boundary.

    Boundary nodes are the nodes on either side of each flip of the mask.
    Each boundary point is refined between them by bisection on the sign of
    the exact gap.
    """
    lo, hi = cand.model.domain
    if grid.lo < lo or grid.hi > hi:
        raise ConfigError("grid must lie inside the diffusion domain")
    x = grid.nodes
    mask = cand.gap(x) > tol
    flips = np.flatnonzero(mask[1:] != mask[:-1])
    if flips.size == 0:
        raise EmptyBoundary("the continuation set has no boundary on this grid")
    nodes = np.unique(np.concatenate((flips, flips + 1)))
    points = []
    for i in flips:
        a, b = x[i], x[i + 1]
        inside_left = mask[i]

        def pred(t, inside_left=inside_left):
            # positive on the C side
            g = float(cand.gap(np.array(t)))
            return 1.0 if (g > 0) == inside_left else -1.0

        points.append(bisect(pred, a, b, xtol=1e-13, maxiter=200))
    return ContinuationSet(StoppingSet(mask), nodes, np.array(points), grid)


def generator_residual(cand: CandidateSolution, x, y, h_fd: float) -> np.ndarray:
    """``A f(., y)(x) - r f(x, y)`` with central second and upwinded first differences."""
    model = cand.model
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f0 = cand(x, y)
    fp = cand(x + h_fd, y)
    fm = cand(x - h_fd, y)
    mu = np.asarray(model.mu(x), dtype=float) * np.ones_like(x)
    s2 = (np.asarray(model.sigma(x), dtype=float) * np.ones_like(x)) ** 2
    d1 = np.where(mu >= 0, fp - f0, f0 - fm) / h_fd
    d2 = (fp - 2.0 * f0 + fm) / (h_fd * h_fd)
    return mu * d1 + 0.5 * s2 * d2 - cand.reward.r * f0


def _one_sided_derivatives(cand, b, y, delta):
    k = np.arange(5)
    right = cand(b + k * delta, np.full(5, y))
    left = cand(b - k * delta, np.full(5, y))
    return float(_ONE_SIDED @ right) / delta, -float(_ONE_SIDED @ left) / delta


@dataclass
class VIReport:
    """Largest violation of each condition on the check grid.

    ``diag_bound``: positive part of ``(A - r) f(x, x)`` on the diagonal.
    ``harmonic``: ``|(A - r) f(., y)|`` inside the continuation set.
    ``stop_match``: ``|f - F|`` on the stopping set.
    ``boundary_bound``: diagonal bound next to each boundary point.
    """

    diag_bound: float
    harmonic: float
    stop_match: float
    boundary_bound: float
    smooth_fit_gap: float
    boundary_points: list
    boundary_count: int
    bounded_max: float
    sigma_at_boundary: float
    h_fd: float
    tols: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        t = self.tols
        return (self.diag_bound <= t["interior"] and self.harmonic <= t["interior"]
                and self.stop_match <= t["interior"] and self.boundary_bound <= t["interior"]
                and self.smooth_fit_gap <= t["smooth_fit"]
                and self.bounded_max <= t["bound_cap"] and self.sigma_at_boundary > 0)

    def to_dict(self) -> dict:
        return {
            "diag_bound": self.diag_bound, "harmonic": self.harmonic,
            "stop_match": self.stop_match, "boundary_bound": self.boundary_bound,
            "smooth_fit_gap": self.smooth_fit_gap,
            "boundary_points": [float(b) for b in self.boundary_points],
            "boundary_count": self.boundary_count, "bounded_max": self.bounded_max,
            "sigma_at_boundary": self.sigma_at_boundary, "h_fd": self.h_fd,
            "tols": dict(self.tols), "passed": self.passed,
        }


def check_vi(cand: CandidateSolution, grid: Grid, h_fd: Optional[float] = None, *,
             interior_tol: float = INTERIOR_TOL, smooth_fit_tol: float = SMOOTH_FIT_TOL,
             bound_cap: float = BOUND_CAP, set_tol: float = 1e-10) -> VIReport:
    """Check the inequalities on ``grid`` (states and agents alike).

    The diagonal inequality skips nodes within ``h + h_fd`` of a boundary
    point. The harmonic equation is checked on continuation nodes whose
    stencil stays off the boundary, for every agent. The boundary bound is sampled
    at ``b ± k h_fd`` (k = 3..5) for agent ``b``, and smooth fit compares
    fourth-order one-sided derivatives of ``f(., b)`` at ``b``.
    """
    h = grid.h
    h_fd = h / 4.0 if h_fd is None else float(h_fd)
    cs = extract_continuation_set(cand, grid, set_tol)
    x = grid.nodes
    C = cs.C.mask
    bpts = cs.boundary_points
    dist = np.min(np.abs(x[:, None] - bpts[None, :]), axis=1)

    diag_ok = dist > h + h_fd
    res_diag = generator_residual(cand, x[diag_ok], x[diag_ok], h_fd)
    diag_bound = float(max(np.max(res_diag, initial=0.0), 0.0))

    inner = C & (dist > 1.5 * h_fd)
    stop = ~C
    harmonic = 0.0
    stop_match = 0.0
    for start in range(0, x.size, AGENT_CHUNK):
        ys = x[start:start + AGENT_CHUNK][None, :]
        if inner.any():
            res = generator_residual(cand, x[inner][:, None], ys, h_fd)
            harmonic = max(harmonic, float(np.max(np.abs(res))))
        if stop.any():
            xs = x[stop][:, None]
            stop_match = max(stop_match, float(np.max(np.abs(cand(xs, ys) - cand.reward(xs, ys)))))

    fit_pts = np.asarray(cand.boundary if cand.boundary is not None else bpts, dtype=float)
    boundary_bound = -np.inf
    gap = 0.0
    for b in fit_pts:
        zs = np.concatenate((b - np.arange(3, 6) * h_fd, b + np.arange(3, 6) * h_fd))
        boundary_bound = max(boundary_bound, float(np.max(generator_residual(cand, zs, np.full_like(zs, b), h_fd))))
        right, left = _one_sided_derivatives(cand, b, b, h_fd)
        gap = max(gap, abs(right - left))
    boundary_bound = max(boundary_bound, 0.0)

    closure = C.copy()
    closure[cs.boundary_nodes] = True
    bounded = 0.0
    for start in range(0, x.size, AGENT_CHUNK):
        ys = x[start:start + AGENT_CHUNK][None, :]
        bounded = max(bounded, float(np.max(np.abs(cand(x[closure][:, None], ys)))))
    sig = float(np.min(np.asarray(cand.model.sigma(bpts), dtype=float) * np.ones_like(bpts)))

    tols = {"interior": interior_tol, "smooth_fit": smooth_fit_tol, "bound_cap": bound_cap}
    return VIReport(diag_bound, harmonic, stop_match, boundary_bound, gap, list(bpts), int(bpts.size), bounded, sig,
                    h_fd, tols)


# closed-form candidates for the two worked diffusion problems

def optimistic_candidate(c: float = 1.0, x_star: Optional[float] = None) -> CandidateSolution:
    """Symmetric two-threshold candidate for the optimistic call/put problem.

    For agents ``y >= 0`` the value is ``x`` above ``x*``, ``0`` below
    ``-x*`` and ``a e^{-cx} + b e^{cx}`` in between, with ``a, b`` fixed by
    continuity at both thresholds; agents ``y < 0`` see the mirror image.
    With the default ``x*`` the derivative also matches at ``x*``.
    """
    xs = threshold_limit_oracle(c) if x_star is None else float(x_star)
    # continuity: a e^{-c xs} + b e^{c xs} = xs and a e^{c xs} + b e^{-c xs} = 0
    M = np.array([[np.exp(-c * xs), np.exp(c * xs)], [np.exp(c * xs), np.exp(-c * xs)]])
    a, b = np.linalg.solve(M, [xs, 0.0])

    def call_side(x):
        mid = a * np.exp(-c * x) + b * np.exp(c * x)
        return np.where(x >= xs, x, np.where(x <= -xs, 0.0, mid))

    def f(x, y):
        return np.where(y >= 0, call_side(x), call_side(-x))

    model = DiffusionModel.wiener((-np.inf, np.inf))
    return CandidateSolution(f, model, optimistic_call_put(c), boundary=(-xs, xs))


def optimistic_value(x, c: float = 1.0, x_star: Optional[float] = None):
    """Equilibrium value ``J(x) = f(x, x)`` of the optimistic call/put problem."""
    cand = optimistic_candidate(c, x_star)
    x = np.asarray(x, dtype=float)
    return cand(x, x)


@dataclass(frozen=True)
class HabitParams:
    a: float
    r: float
    k: float
    sigma: float
    g: Callable
    g_name: str = "custom"

    @classmethod
    def named(cls, a, r, k, sigma, g: str) -> "HabitParams":
        return cls(float(a), float(r), float(k), float(sigma), habit_g(g), g)

    @property
    def gamma(self) -> float:
        return habit_gamma(self.r, self.sigma)


def habit_gamma(r: float, sigma: float) -> float:
    """Positive exponent of the power solutions ``x^gamma`` of ``A f = r f`` for GBM."""
    return 0.5 + np.sqrt(0.25 + 2.0 * r / sigma**2)


def habit_threshold(a: float, r: float, k: float, sigma: float, g: Callable,
                    x_max: float = 50.0, n_samples: int = 10_000) -> float:
    """Unique zero of ``H(x) = gamma - exp(-a (x + g(x) - k)) (gamma + a x)`` on ``(0, x_max)``."""
    if min(a, r, k, sigma) <= 0:
        raise ConfigError("a, r, k and sigma must be positive")
    xs = np.linspace(0.0, x_max, n_samples)
    gx = np.asarray(g(xs), dtype=float) * np.ones_like(xs)
    if abs(gx[0]) > 1e-12:
        raise ConfigError("habit function must vanish at 0")
    if np.any(np.diff(gx) > 1e-12) or np.any(np.diff(xs + gx) < -1e-12):
        raise ConfigError("need g non-increasing and x + g(x) non-decreasing")
    gam = habit_gamma(r, sigma)

    def H(x):
        x = np.asarray(x, dtype=float)
        return gam - np.exp(-a * (x + np.asarray(g(x), dtype=float) - k)) * (gam + a * x)

    hv = H(xs[1:])
    sign = np.sign(hv)
    changes = np.flatnonzero(sign[1:] * sign[:-1] < 0)
    if changes.size == 0:
        raise NoRoot(f"H has no sign change on (0, {x_max}]")
    if changes.size > 1:
        raise MultipleRoots(f"H changes sign {changes.size} times on (0, {x_max}]")
    i = changes[0] + 1
    root = bisect(lambda t: float(H(t)), xs[i], xs[i + 1], xtol=1e-12,
                  rtol=4 * np.finfo(float).eps, maxiter=200)
    if not root + float(g(np.array(root))) - k > 0:
        raise ConfigError("threshold violates x* + g(x*) > k")
    return float(root)


def habit_value(x, y, x_star: float, params: HabitParams):
    """Agent ``y``'s value under selling at ``x*``: power law below, reward above."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gy = np.asarray(params.g(y), dtype=float)
    reward = 1.0 - np.exp(-params.a * (x + gy - params.k))
    at_star = 1.0 - np.exp(-params.a * (x_star + gy - params.k))
    with np.errstate(invalid="ignore", divide="ignore"):
        below = (np.maximum(x, 0.0) / x_star) ** params.gamma * at_star
    return np.where(x >= x_star, reward, below)


def habit_candidate(params: HabitParams, x_star: Optional[float] = None) -> CandidateSolution:
    xs = habit_threshold(params.a, params.r, params.k, params.sigma, params.g) \
        if x_star is None else float(x_star)
    model = DiffusionModel.gbm((0.0, np.inf), params.sigma)
    reward = habit_exponential(params.a, params.k, params.r, params.g)
    return CandidateSolution(lambda x, y: habit_value(x, y, xs, params), model, reward,
                             boundary=(xs,))
