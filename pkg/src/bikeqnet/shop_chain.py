"""Isolated Markov chain of the maintenance shop.

The repaired count ``good`` is the level (0..Z) and the unusable count
``bad`` is the phase.  Unusable bikes arrive in truck batches of ``M`` at
the shop's relative rate ``e0``; repairs complete at rate
``min(bad, r) * w`` and move one bike from bad to good.  When the repaired
count reaches ``Z`` the shop freezes and waits for the dispatch clock
``mu0 = sum(beta_i * mu_return_i)``, which resets the level to 0.

The shop total ``good + bad`` always sits on the M-lattice, so the phase
support shifts with the level; :func:`level_supports` is the single source
of truth for that bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .markov_core import BlockGenerator, rg_factorize, stationary_vector


def repair_rate(bad: int, r: int, w: float) -> float:
    """Aggregate repair rate with ``bad`` unusable bikes and ``r`` repairmen."""
    return min(bad, r) * w


def level_supports(M: int, Z: int, phi: int) -> list[list[int]]:
    """Admissible unusable counts at each repaired-count level 0..Z.

    At level k the shop total must be a multiple of M between k and
    phi * M, so bad runs over h*M - k for h = ceil(k / M) .. phi.  Levels
    at a multiple of M gain the extra bad = 0 phase; the others start at
    the first positive lattice point.
    """
    supports = []
    for k in range(Z + 1):
        h_min = math.ceil(k / M)
        supports.append([h * M - k for h in range(h_min, phi + 1)])
    return supports


def aggregate_dispatch_rate(config) -> float:
    """mu0, the single dispatch clock rate of a full redistribution batch."""
    return float(sum(b * mu for b, mu in zip(config.beta, config.mu_return)))


@dataclass
class ShopSolution:
    """Stationary law of the shop over (good, bad) pairs.

    ``levels[k]`` is aligned with ``supports[k]``: entry j is the
    probability of k repaired and supports[k][j] unusable bikes.
    """

    Z: int
    M: int
    phi: int
    supports: list[list[int]]
    levels: list[np.ndarray]

    def prob(self, good: int, bad: int) -> float:
        if not 0 <= good <= self.Z:
            return 0.0
        support = self.supports[good]
        if bad in support:
            return float(self.levels[good][support.index(bad)])
        return 0.0

    def level_mass(self, good: int) -> float:
        return float(self.levels[good].sum())

    def good_marginal(self) -> np.ndarray:
        return np.array([vec.sum() for vec in self.levels])

    def bad_marginal(self) -> np.ndarray:
        out = np.zeros(self.phi * self.M + 1)
        for k, vec in enumerate(self.levels):
            for j, bad in enumerate(self.supports[k]):
                out[bad] += vec[j]
        return out

    def total(self) -> float:
        return float(sum(vec.sum() for vec in self.levels))


def build_shop_generator(config, e0: float) -> BlockGenerator:
    """Block generator of the shop given its relative batch-arrival rate.

    Within a level, an arrival lifts the unusable count by M (suppressed at
    the lattice top, where the shop already accounts for phi batches).  A
    repair moves up one level along the same batch coordinate.  The top
    level carries only the dispatch clock: arrivals and repairs pause while
    a full batch waits for its truck.
    """
    M, Z, phi = config.M, config.Z, config.phi
    psi = config.psi
    r, w = config.r, config.w
    mu0 = aggregate_dispatch_rate(config)
    if e0 <= 0:
        raise ValueError(f"relative arrival rate of the shop must be > 0, got {e0}")
    supports = level_supports(M, Z, phi)

    diag: list[np.ndarray] = []
    super_: list[np.ndarray] = []
    for k in range(Z + 1):
        support = supports[k]
        dim = len(support)
        block = np.zeros((dim, dim))
        if k == Z:
            np.fill_diagonal(block, -mu0)
        else:
            for j, bad in enumerate(support):
                out_rate = repair_rate(bad, r, w)
                if j < dim - 1:
                    block[j, j + 1] = e0
                    out_rate += e0
                block[j, j] = -out_rate
            target = supports[k + 1]
            up = np.zeros((dim, len(target)))
            for j, bad in enumerate(support):
                if bad >= 1:
                    up[j, target.index(bad - 1)] = repair_rate(bad, r, w)
            super_.append(up)
        diag.append(block)

    corner = np.zeros((len(supports[Z]), len(supports[0])))
    for j, bad in enumerate(supports[Z]):
        corner[j, supports[0].index(bad)] = mu0
    return BlockGenerator(diag, super_, corner)


def solve_shop(config, e0: float) -> ShopSolution:
    """Stationary law of the shop via the RG-factorization.

    ``e0 == 0`` is the no-inflow limit (a failure-free fleet): the shop
    drains and stays empty, so the law is a point mass at (0, 0).
    """
    supports = level_supports(config.M, config.Z, config.phi)
    if e0 == 0.0:
        levels = [np.zeros(len(s)) for s in supports]
        levels[0][supports[0].index(0)] = 1.0
    else:
        gen = build_shop_generator(config, e0)
        levels = stationary_vector(rg_factorize(gen))
    return ShopSolution(
        Z=config.Z,
        M=config.M,
        phi=config.phi,
        supports=supports,
        levels=levels,
    )
