"""Randomised property suites shared by the unit and acceptance tests.

Each suite returns ``(failures, detail)`` so callers can both assert and
report.
"""

from __future__ import annotations

import numpy as np

from equistop import (ChainModel, DiffusionModel, Grid, RewardSpec, StoppingSet, absorbed_walk,
                      check_pure_equilibrium, enumerate_pure_equilibria, iterate,
                      make_chain_from_diffusion, optimistic_call_put, solve_standard,
                      state_dependent_strike)


def random_chain(rng, n, n_absorbing=1):
    """Random sparse chain on labels ``0..n-1`` with the last states absorbing."""
    P = np.zeros((n, n))
    free = n - n_absorbing
    for i in range(free):
        k = rng.integers(1, min(n, 4) + 1)
        cols = rng.choice(n, size=k, replace=False)
        P[i, cols] = rng.random(k) + 0.05
        P[i] /= P[i].sum()
    for i in range(free, n):
        P[i, i] = 1.0
    return ChainModel(np.arange(n, dtype=float), P, absorbing=list(range(free, n)))


def random_table_reward(rng, n, r):
    return RewardSpec.from_table(np.arange(n, dtype=float), rng.normal(size=(n, n)), r)


def _forward_case(k, rng):
    """Config ``k`` of the monotonicity suite: 15 random chains, then 5 diffusions."""
    if k < 15:
        n = int(rng.integers(4, 13))
        chain = random_chain(rng, n, int(rng.integers(1, 3)))
        return chain, random_table_reward(rng, n, float(rng.uniform(0.05, 0.5)))
    K0, kappa, r = rng.uniform(0.5, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.6, 2.0)
    chain = make_chain_from_diffusion(DiffusionModel.wiener((-3.0, 3.0)), Grid(-3.0, 3.0, 241))
    return chain, state_dependent_strike(K0, kappa, r)


def forward_monotonicity(n_configs=20, seed=2024):
    """S_n increasing and v_n decreasing along the forward iteration."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for k in range(n_configs):
        chain, reward = _forward_case(k, rng)
        res = iterate(chain, reward, strict=False, keep_values=True)
        seq = res.S_sequence
        if not all(a.issubset(b) for a, b in zip(seq, seq[1:])):
            failures += 1
            continue
        vals = [v.dense() for v in res.values]
        rise = max((float(np.max(b - a)) for a, b in zip(vals, vals[1:])), default=0.0)
        worst = max(worst, rise)
        if rise > 1e-10:
            failures += 1
    return failures, f"{n_configs} configs, largest increase of v_n {worst:.2e}"


def optimal_is_equilibrium(n_chains=50, seed=7):
    """Optimal stopping sets of agent-independent rewards pass the equilibrium check."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_chains):
        n = int(rng.integers(2, 11))
        chain = random_chain(rng, n, int(rng.integers(1, min(3, n - 1) + 1)) if n > 2 else 1)
        g = rng.normal(size=n)
        reward = RewardSpec(lambda x, y, g=g: g[np.asarray(x, dtype=int)] + 0.0 * y,
                            float(rng.choice([0.0, rng.uniform(0.01, 1.0)])))
        sol = solve_standard(chain, reward, 0.0, method="value")
        S = StoppingSet(sol.stopset.mask | chain.absorbing)
        if not check_pure_equilibrium(chain, S, reward, 1e-10).passed:
            failures += 1
    return failures, f"{n_chains} chains"


def _second_differences(J):
    return J[2:] - 2.0 * J[1:-1] + J[:-2]


def walk_concavity(n_random=20, seed=11, n_nodes=9):
    """Equilibrium values on the absorbed walk are concave off the boundary.

    Checked on the two equilibria of the distance-penalty reward (101 nodes)
    and on every enumerated equilibrium of random agent-independent rewards.
    Second differences are taken at nodes two or more steps from an end; the
    nodes next to an end are excluded from the one-step test, as in the
    equilibrium check itself.
    """
    worst = -np.inf
    failures = 0
    chain, reward = absorbed_walk(101)
    h = chain.origin["grid"].h
    tol = 10.0 * h
    for S in (StoppingSet.from_indices(101, [0, 100]), StoppingSet.full(101)):
        J = check_pure_equilibrium(chain, S, reward, tol).J
        d2 = float(np.max(_second_differences(J)[1:-1]))
        worst = max(worst, d2)
        failures += d2 > tol * h * h
    rng = np.random.default_rng(seed)
    chain, _ = absorbed_walk(n_nodes)
    h = chain.origin["grid"].h
    labels = chain.states
    n_sets = 0
    for _ in range(n_random):
        vals = rng.normal(size=n_nodes)
        reward = RewardSpec(lambda x, y, v=vals: np.interp(x, labels, v) + 0.0 * y, 0.0)
        for S in enumerate_pure_equilibria(chain, reward, 1e-9):
            n_sets += 1
            J = check_pure_equilibrium(chain, S, reward, 1e-9).J
            d2 = float(np.max(_second_differences(J)[1:-1]))
            worst = max(worst, d2)
            failures += d2 > 1e-9 * h * h
    return failures, f"{n_sets + 2} equilibria, largest second difference {worst:.2e}"


def closed_form_first_value(h=1e-3, domain=(-6.0, 4.0), c=1.0):
    """Sup-norm gap between the grid solution and ``a1 e^{cx}`` / ``x``."""
    lo, hi = domain
    chain = make_chain_from_diffusion(DiffusionModel.wiener(domain), Grid.from_step(lo, hi, h))
    sol = solve_standard(chain, optimistic_call_put(c), 1.0)
    x = chain.states
    x1 = 1.0 / c
    a1 = np.exp(-1.0) / c
    exact = np.where(x >= x1, x, a1 * np.exp(c * x))
    return float(np.max(np.abs(sol.value - exact)))
