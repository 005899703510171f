"""Monte Carlo audit of the equilibrium conditions for threshold rules.

Brownian motion with constant drift is simulated exactly by exit steps: from
``x`` inside an interval ``(a, b)`` the process leaves through ``b`` or ``a``
and the discount over the exit time is integrated out analytically, so each
step moves a path straight to an endpoint and multiplies its weight by the
exit Laplace transform. Geometric Brownian motion runs through the same
engine in log space. Other diffusions fall back to Euler-Maruyama with a
Brownian-bridge crossing test.

Paths are processed in fixed-size chunks, each with its own child seed, so
results do not depend on how many threads run the chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, PathBudgetExceeded
from .model import ChainModel, DiffusionModel, Grid, RewardSpec, StoppingSet

CHUNK = 1 << 15
STEP_CAP = 10**7
CAP_FRACTION = 1e-3
KILL_WEIGHT = 1e-14


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EQUISTOP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class StopRegion:
    """Closed stopping region given as the complement of open continuation intervals."""

    continuation: tuple  # ((lo, hi), ...) open intervals, sorted and disjoint

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.continuation)
        for (a, b), (c, _) in zip(iv, iv[1:]):
            if c < b:
                raise ConfigError("continuation intervals overlap")
        if any(not b > a for a, b in iv):
            raise ConfigError("continuation intervals must be non-empty")
        object.__setattr__(self, "continuation", tuple(iv))

    def locate(self, x: np.ndarray):
        """Return ``(inside, lo, hi)``: membership of ``C`` and the enclosing interval."""
        x = np.asarray(x, dtype=float)
        lo = np.full(x.shape, np.nan)
        hi = np.full(x.shape, np.nan)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.continuation:
            m = (x > a) & (x < b)
            inside |= m
            lo[m] = a
            hi[m] = b
        return inside, lo, hi

    def contains(self, x) -> np.ndarray:
        """True where ``x`` is in the stopping region."""
        return ~self.locate(x)[0]

    @classmethod
    def from_stop_intervals(cls, stop, domain=(-np.inf, np.inf)) -> "StopRegion":
        """Continuation set between the closed stop intervals, inside ``domain``."""
        edges = sorted((float(a), float(b)) for a, b in stop)
        cont = []
        left = float(domain[0])
        for a, b in edges:
            if a > left:
                cont.append((left, a))
            left = max(left, b)
        if float(domain[1]) > left:
            cont.append((left, float(domain[1])))
        return cls(tuple(cont))

    @classmethod
    def from_candidate(cls, cand, grid: Grid, tol: float = 1e-10) -> "StopRegion":
        """Continuation intervals of a candidate, with refined end points.

        A run of continuation nodes touching the grid edge extends to the edge
        of the model's domain.
        """
        from .vi import extract_continuation_set

        cs = extract_continuation_set(cand, grid, tol)
        x = grid.nodes
        mask = cs.C.mask
        flips = np.flatnonzero(mask[1:] != mask[:-1])
        lo_dom, hi_dom = cand.model.domain
        cont = []
        for i, j in cs.C.runs():
            a = lo_dom if i == 0 else cs.boundary_points[np.searchsorted(flips, i - 1)]
            b = hi_dom if j == x.size - 1 else cs.boundary_points[np.searchsorted(flips, j)]
            cont.append((a, b))
        return cls(tuple(cont))


def _ratio_sinh(A, B):
    """``sinh(A) / sinh(B)`` for ``0 <= A <= B`` without overflow."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    small = B < 1e-8
    Bs = np.where(small, 1.0, B)
    with np.errstate(over="ignore", invalid="ignore"):
        big = np.exp(A - Bs) * np.expm1(-2.0 * A) / np.expm1(-2.0 * Bs)
        lin = np.where(small, A / np.where(B > 0, B, 1.0), 0.0)
    return np.where(small, lin, big)


def exit_transforms(x, a, b, nu: float, sigma: float, r: float):
    """``E_x[exp(-r tau); exit at b]`` and ``[...; exit at a]`` for ``x + nu t + sigma W``.

    ``a`` may be ``-inf`` and ``b`` may be ``+inf``.
    """
    x, a, b = (np.asarray(v, dtype=float) for v in (x, a, b))
    s2 = sigma * sigma
    lam = np.sqrt(nu * nu + 2.0 * r * s2) / s2
    th = nu / s2
    up = np.zeros(np.broadcast(x, a, b).shape)
    down = np.zeros_like(up)
    fa, fb = np.isfinite(a), np.isfinite(b)
    both = fa & fb
    if both.any():
        xa, bx, L = (x - a)[both], (b - x)[both], (b - a)[both]
        if lam == 0.0:
            up[both] = xa / L
            down[both] = bx / L
        else:
            up[both] = np.exp(th * bx) * _ratio_sinh(lam * xa, lam * L)
            down[both] = np.exp(-th * xa) * _ratio_sinh(lam * bx, lam * L)
    only_b = ~fa & fb
    if only_b.any():
        # half-line (-inf, b): decaying root of the characteristic equation
        k = -th + lam
        up[only_b] = np.exp(-k * (b - x)[only_b])
    only_a = fa & ~fb
    if only_a.any():
        k = th + lam
        down[only_a] = np.exp(-k * (x - a)[only_a])
    return up, down


def expected_exit_time(x, a, b, nu: float, sigma: float) -> float:
    """``E_x tau`` for ``x + nu t + sigma W`` leaving ``(a, b)``."""
    s2 = sigma * sigma
    if abs(2.0 * nu * (b - a) / s2) < 1e-6:
        return (x - a) * (b - x) / s2
    p_up = np.expm1(-2.0 * nu * (x - a) / s2) / np.expm1(-2.0 * nu * (b - a) / s2)
    return (a + (b - a) * p_up - x) / nu


class _Engine:
    """Exact exit-step simulation in a coordinate where the process is a drifted BM."""

    whole_interval = False

    def __init__(self, model: DiffusionModel, r: float):
        self.model = model
        self.r = float(r)
        kind = model.kind
        p = model.params
        if kind == "wiener":
            self.nu, self.sigma = p["mu"], p["sigma"]
            self.fwd = lambda x: np.asarray(x, dtype=float)
            self.inv = self.fwd
        elif kind == "gbm":
            self.nu, self.sigma = p["mu"] - 0.5 * p["sigma"] ** 2, p["sigma"]
            with np.errstate(divide="ignore"):
                self.fwd = lambda x: np.log(np.asarray(x, dtype=float))
            self.inv = np.exp
        else:
            raise ConfigError(f"no exact engine for model kind {kind!r}")

    def map_interval(self, lo, hi):
        with np.errstate(divide="ignore"):
            return self.fwd(lo), self.fwd(hi)

    def exit_time(self, x0: float, a: float, b: float) -> float:
        za, zb = self.map_interval(a, b)
        return expected_exit_time(float(self.fwd(x0)), float(za), float(zb), self.nu, self.sigma)

    def step(self, rng, z, a, b):
        """One exit step from ``z`` in ``(a, b)``; returns new ``z`` and the weight factor."""
        up, down = exit_transforms(z, a, b, self.nu, self.sigma, self.r)
        tot = up + down
        with np.errstate(invalid="ignore"):
            p_up = np.where(tot > 0, up / np.where(tot > 0, tot, 1.0), 0.5)
        go_up = rng.random(z.shape) < p_up
        return np.where(go_up, b, a), tot


class _EulerEngine:
    """Euler-Maruyama exit steps for diffusions without an exact scheme.

    A step runs the scheme at time step ``dt`` until the path leaves
    ``(a, b)``, with a Brownian-bridge test for crossings between grid times.
    The discount ``exp(-r t)`` is accumulated exactly. Paths still inside
    after ``STEP_CAP`` time steps get a NaN factor, which flags them as capped.
    """

    whole_interval = True

    def __init__(self, model: DiffusionModel, r: float, dt: float):
        if not dt > 0:
            raise ConfigError("time step must be positive")
        self.model = model
        self.r = float(r)
        self.dt = float(dt)
        self.fwd = lambda x: np.asarray(x, dtype=float)
        self.inv = self.fwd

    def map_interval(self, lo, hi):
        return lo, hi

    def exit_time(self, x0: float, a: float, b: float) -> float:
        # coefficients frozen at x0; the error is O(h) relative
        mu = float(np.asarray(self.model.mu(np.array([x0])))[0])
        sig = float(np.asarray(self.model.sigma(np.array([x0])))[0])
        return expected_exit_time(x0, a, b, mu, sig)

    def step(self, rng, z, a, b):
        z = np.array(z, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), z.shape)
        b = np.broadcast_to(np.asarray(b, dtype=float), z.shape)
        out = z.copy()
        t = np.zeros(z.shape)
        done = np.zeros(z.shape, dtype=bool)
        t_max = -np.log(KILL_WEIGHT) / self.r if self.r > 0 else np.inf
        dt = self.dt
        sq = np.sqrt(dt)
        idx = np.arange(z.size)
        for _ in range(STEP_CAP):
            if idx.size == 0:
                break
            x = z[idx]
            mu = np.asarray(self.model.mu(x), dtype=float) * np.ones_like(x)
            sig = np.asarray(self.model.sigma(x), dtype=float) * np.ones_like(x)
            xn = x + mu * dt + sig * sq * rng.standard_normal(x.size)
            t[idx] += dt
            s2dt = np.maximum(sig * sig * dt, 1e-300)
            ai, bi = a[idx], b[idx]
            with np.errstate(invalid="ignore", over="ignore"):
                p_b = np.where(np.isfinite(bi) & (xn < bi),
                               np.exp(-2.0 * np.maximum(bi - x, 0) * np.maximum(bi - xn, 0) / s2dt),
                               0.0)
                p_a = np.where(np.isfinite(ai) & (xn > ai),
                               np.exp(-2.0 * np.maximum(x - ai, 0) * np.maximum(xn - ai, 0) / s2dt),
                               0.0)
            u = rng.random(x.size)
            up = (xn >= bi) | (u < p_b)
            down = ~up & ((xn <= ai) | (u > 1.0 - p_a))
            out[idx[up]] = bi[up]
            out[idx[down]] = ai[down]
            z[idx] = xn
            exited = up | down
            done[idx[exited]] = True
            # discounted to nothing: finished with zero weight
            faded = ~exited & (t[idx] >= t_max)
            out[idx[faded]] = xn[faded]
            done[idx[faded]] = True
            idx = idx[~(exited | faded)]
        fac = np.exp(-self.r * t)
        fac[~done] = np.nan
        return out, fac


def _make_engine(model: DiffusionModel, r: float, dt_sim: float):
    if model.kind in ("wiener", "gbm"):
        return _Engine(model, r)
    return _EulerEngine(model, r, dt_sim)


def _ball(z, a, b, max_radius=np.inf):
    """Exit interval for the next step from ``z`` in ``(a, b)``.

    Bounded intervals use the largest ball centred at ``z``. A half-line is
    used whole: its exit transform is exact, so one step reaches the end.
    A finite ``max_radius`` caps every ball instead, which turns that single
    step into a genuine random walk.
    """
    rho = np.minimum(np.minimum(z - a, b - z), max_radius)
    half = ~(np.isfinite(a) & np.isfinite(b)) & ~np.isfinite(max_radius)
    ba = np.where(half, a, z - rho)
    bb = np.where(half, b, z + rho)
    # snap ball ends that coincide with interval ends up to rounding
    fa, fb = np.isfinite(a), np.isfinite(b)
    tol_a = 1e-12 * np.maximum(1.0, np.abs(np.where(fa, a, 0.0)))
    tol_b = 1e-12 * np.maximum(1.0, np.abs(np.where(fb, b, 0.0)))
    with np.errstate(invalid="ignore"):
        ba = np.where(fa & (np.abs(ba - a) <= tol_a), a, ba)
        bb = np.where(fb & (np.abs(bb - b) <= tol_b), b, bb)
    return ba, bb


def _continue(engine: _Engine, region: StopRegion, rng, x, w, max_radius=np.inf):
    """Run paths from ``x`` (weights ``w``) until they enter the stopping region.

    Returns final states, final weights and a flag for paths that hit the step cap.
    """
    x = x.copy()
    w = w.copy()
    capped = np.zeros(x.shape, dtype=bool)
    inside, lo, hi = region.locate(x)
    active = inside & (w > KILL_WEIGHT)
    w[inside & ~active] = 0.0
    steps = 0
    while active.any():
        idx = np.flatnonzero(active)
        z = engine.fwd(x[idx])
        za, zb = engine.map_interval(lo[idx], hi[idx])
        if engine.whole_interval:
            ba, bb = za, zb
        else:
            ba, bb = _ball(z, za, zb, max_radius)
        znew, fac = engine.step(rng, z, ba, bb)
        bad = np.isnan(fac)
        if bad.any():
            capped[idx[bad]] = True
            fac = np.where(bad, 0.0, fac)
        w[idx] *= fac
        hit_a = znew == za
        hit_b = znew == zb
        xn = np.asarray(engine.inv(znew), dtype=float)
        xn = np.where(hit_a, lo[idx], np.where(hit_b, hi[idx], xn))
        x[idx] = xn
        done = hit_a | hit_b | (w[idx] <= KILL_WEIGHT)
        w[idx[(w[idx] <= KILL_WEIGHT) & ~(hit_a | hit_b)]] = 0.0
        active[idx[done]] = False
        steps += 1
        if steps >= STEP_CAP:
            capped[idx[~done]] = True
            w[idx[~done]] = 0.0
            break
    return x, w, capped


def _stop_region_with_ends(region: StopRegion, model: DiffusionModel) -> StopRegion:
    """Clip continuation intervals to the domain, so paths stop at its edges."""
    lo, hi = model.domain
    cont = [(max(a, lo), min(b, hi)) for a, b in region.continuation]
    return StopRegion(tuple((a, b) for a, b in cont if b > a))


def _chunked(fn, paths: int, seed: int):
    n_chunks = (paths + CHUNK - 1) // CHUNK
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK, paths - i * CHUNK) for i in range(n_chunks)]
    jobs = list(zip(seqs, sizes))
    if _threads() > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(_threads()) as pool:
            parts = list(pool.map(lambda job: fn(np.random.default_rng(job[0]), job[1]), jobs))
    else:
        parts = [fn(np.random.default_rng(s), n) for s, n in jobs]
    return [np.concatenate(p) for p in zip(*parts)]


def _summary(vals, capped):
    if capped.mean() > CAP_FRACTION:
        raise PathBudgetExceeded(f"{capped.mean():.2%} of paths hit the step cap")
    n = vals.size
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def estimate_value(region: StopRegion, model: DiffusionModel, reward: RewardSpec, x0: float,
                   agent: Optional[float] = None, paths: int = 100_000, seed: int = 0,
                   max_radius: float = np.inf, dt_sim: float = 1e-4):
    """``(estimate, standard error)`` of ``E_x0 exp(-r tau) F(X_tau, agent)``.

    ``max_radius`` caps exit-step balls (in the simulation coordinate).
    ``dt_sim`` is the Euler time step for models without an exact engine.
    """
    agent = x0 if agent is None else agent
    engine = _make_engine(model, reward.r, dt_sim)
    region = _stop_region_with_ends(region, model)

    def run(rng, n):
        x, w, capped = _continue(engine, region, rng, np.full(n, float(x0)), np.ones(n),
                                 max_radius)
        with np.errstate(invalid="ignore"):
            vals = np.where(w > 0, w * reward(x, np.full(n, agent)), 0.0)
        return vals, capped

    vals, capped = _chunked(run, paths, seed)
    return _summary(vals, capped)


def _deviated(engine, region, model, reward, x0, h, rng, n):
    lo_dom, hi_dom = model.domain
    a, b = max(x0 - h, lo_dom), min(x0 + h, hi_dom)
    z0 = engine.fwd(np.full(n, x0))
    za, zb = engine.map_interval(np.full(n, a), np.full(n, b))
    z, w = engine.step(rng, z0, za, zb)
    first_capped = np.isnan(w)
    w = np.where(first_capped, 0.0, w)
    x = np.where(z == za, a, b)
    x, w, capped = _continue(engine, region, rng, x, w)
    capped |= first_capped
    with np.errstate(invalid="ignore"):
        vals = np.where(w > 0, w * reward(x, np.full(n, x0)), 0.0)
    return vals, capped


def _coupled(engine, region, model, reward, x0, h, rng, n):
    """Both rules from a point whose ``h``-ball lies in ``C``.

    Leaving the ball is then the rule's own first exit step, so the two
    values share every path and their difference vanishes path by path.
    """
    vals, capped = _deviated(engine, region, model, reward, x0, h, rng, n)
    return vals, vals, capped


@dataclass
class MCPoint:
    x0: float
    J: float
    J_se: float
    F: float
    cond1_pass: bool
    per_h: list = field(default_factory=list)
    ratio_pass: bool = True
    trend: str = ""

    @property
    def passed(self) -> bool:
        return self.cond1_pass and self.ratio_pass

    def to_dict(self) -> dict:
        return {"x0": self.x0, "J": self.J, "J_se": self.J_se, "F": self.F,
                "cond1_pass": self.cond1_pass, "ratio_pass": self.ratio_pass,
                "passed": self.passed, "per_h": self.per_h, "trend": self.trend}


@dataclass
class MCReport:
    points: list
    paths: int
    seed: int
    h_list: tuple

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "paths": self.paths, "seed": self.seed,
                "h_list": list(self.h_list), "points": [p.to_dict() for p in self.points]}


def mc_equilibrium_check(target, model: DiffusionModel, reward: RewardSpec,
                         x0s: Sequence[float], h_list=(0.2, 0.1, 0.05), paths: int = 200_000,
                         seed: int = 0, grid: Optional[Grid] = None,
                         dt_sim: Optional[float] = None) -> MCReport:
    """Audit the stopping-value and delay conditions of a threshold rule by simulation.

    ``target`` is a :class:`StopRegion` or a candidate solution (then
    ``grid`` locates its continuation set). For each start ``x0`` the rule's
    value ``J`` is estimated, and for each ``h`` the value of first leaving
    ``(x0 - h, x0 + h)`` and then following the rule. The ratio statistic is
    ``(J - J_h) / E tau_h``. A start passes when ``J >= F(x0, x0) - 3 SE`` and
    the ratio at the smallest ``h`` is at least ``-3 SE``. Models without an
    exact engine use Euler steps of ``dt_sim`` (default ``min(h_list)^2 / 100``).
    """
    if isinstance(target, StopRegion):
        region = target
    else:
        if grid is None:
            raise ConfigError("a candidate needs a grid to locate its continuation set")
        region = StopRegion.from_candidate(target, grid)
    h_list = tuple(sorted((float(h) for h in h_list), reverse=True))
    if dt_sim is None:
        dt_sim = h_list[-1] ** 2 / 100.0
    engine = _make_engine(model, reward.r, dt_sim)
    region = _stop_region_with_ends(region, model)
    ss = np.random.SeedSequence(seed)
    points = []
    for i, x0 in enumerate(x0s):
        x0 = float(x0)
        point_seed = int(ss.spawn(len(x0s))[i].generate_state(1)[0])
        Fx = float(reward(x0, x0))
        inside, lo, hi = region.locate(np.array([x0]))
        in_C = bool(inside[0])
        if in_C:
            def run(rng, n, x0=x0):
                x, w, capped = _continue(engine, region, rng, np.full(n, x0), np.ones(n))
                with np.errstate(invalid="ignore"):
                    vals = np.where(w > 0, w * reward(x, np.full(n, x0)), 0.0)
                return vals, capped
            J, J_se = _summary(*_chunked(run, paths, point_seed))
        else:
            J, J_se = Fx, 0.0
        cond1 = J >= Fx - 3.0 * J_se
        per_h = []
        for k, h in enumerate(h_list):
            hseed = point_seed + 7919 * (k + 1)
            lo_dom, hi_dom = model.domain
            a, b = max(x0 - h, lo_dom), min(x0 + h, hi_dom)
            Etau = engine.exit_time(x0, a, b)
            coupled = in_C and lo[0] <= a and b <= hi[0]
            if coupled:
                fn = lambda rng, n, x0=x0, h=h: _coupled(engine, region, model, reward,
                                                         x0, h, rng, n)
                base, dev, capped = _chunked(fn, paths, hseed)
                diff = base - dev
                _summary(dev, capped)
                Jh, Jh_se = float(dev.mean()), float(dev.std(ddof=1) / np.sqrt(dev.size))
                num, num_se = float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(diff.size))
            else:
                fn = lambda rng, n, x0=x0, h=h: _deviated(engine, region, model, reward,
                                                          x0, h, rng, n)
                Jh, Jh_se = _summary(*_chunked(fn, paths, hseed))
                num, num_se = J - Jh, float(np.hypot(J_se, Jh_se))
            per_h.append({"h": h, "J_h": Jh, "J_h_se": Jh_se, "E_tau_h": Etau,
                          "ratio": num / Etau, "ratio_se": num_se / Etau,
                          "coupled": bool(coupled)})
        last = per_h[-1]
        ratio_ok = last["ratio"] >= -3.0 * last["ratio_se"]
        # ratios listed from the largest h down
        ratios = np.array([p["ratio"] for p in per_h])
        trend = "monotone" if (np.all(np.diff(ratios) >= 0) or np.all(np.diff(ratios) <= 0)) \
            else "mixed"
        points.append(MCPoint(x0, J, J_se, Fx, bool(cond1), per_h, bool(ratio_ok), trend))
    return MCReport(points, paths, seed, h_list)


def simulate_chain_value(chain: ChainModel, S: StoppingSet, reward: RewardSpec, agent: float,
                         x0_index: int, paths: int = 100_000, seed: int = 0,
                         max_steps: int = 100_000):
    """Monte Carlo ``(value, SE)`` of stopping on ``S`` for a finite chain."""
    P = chain.P.tocsr()
    cum = [np.cumsum(P.data[P.indptr[i]:P.indptr[i + 1]]) for i in range(chain.n)]
    cols = [P.indices[P.indptr[i]:P.indptr[i + 1]] for i in range(chain.n)]
    disc = chain.discount(reward.r)
    F = reward.column(chain.states, agent)
    stop = S.mask | chain.absorbing

    def run(rng, n):
        state = np.full(n, int(x0_index))
        w = np.ones(n)
        active = ~stop[state]
        for _ in range(max_steps):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            u = rng.random(idx.size)
            nxt = np.empty(idx.size, dtype=int)
            for s in np.unique(state[idx]):
                m = state[idx] == s
                k = np.searchsorted(cum[s], u[m] * cum[s][-1], side="right")
                nxt[m] = cols[s][np.minimum(k, cols[s].size - 1)]
            w[idx] *= disc[state[idx]]
            state[idx] = nxt
            active[idx] = ~stop[nxt]
        capped = active.copy()
        vals = np.where(capped, 0.0, w * F[state])
        return vals, capped

    return _summary(*_chunked(run, paths, seed))
