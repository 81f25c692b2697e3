"""Isolated Markov chain of a parking region.

A region holds ``good`` usable bikes (the phase, 0..K-bad) and ``bad``
unusable bikes (the level, 0..M).  Usable bikes arrive at the region's
relative rate ``e_i``, leave with renting users at rate ``lambda_i`` and
fail one at a time at rate ``alpha`` each.  When the unusable count reaches
``M`` the batch waits for a truck (rate ``mu_remove_i``) and the level
resets to 0.  Level M suspends the failure clock: at most one batch
accumulates at a region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .markov_core import (
    BlockGenerator,
    rg_factorize,
    stationary_of_conservative,
    stationary_vector,
)


@dataclass
class RegionSolution:
    """Stationary law of one region, as per-level probability vectors.

    ``levels[l][k]`` is the stationary probability of k usable and l
    unusable bikes; level l has K - l + 1 phases.
    """

    region: int
    K: int
    M: int
    levels: list[np.ndarray]

    def prob(self, good: int, bad: int) -> float:
        if 0 <= bad <= self.M and 0 <= good <= self.K - bad:
            return float(self.levels[bad][good])
        return 0.0

    def level_mass(self, bad: int) -> float:
        """Total probability of holding exactly ``bad`` unusable bikes."""
        return float(self.levels[bad].sum())

    def good_marginal(self) -> np.ndarray:
        out = np.zeros(self.K + 1)
        for l, vec in enumerate(self.levels):
            out[: self.K - l + 1] += vec
        return out

    def bad_marginal(self) -> np.ndarray:
        return np.array([vec.sum() for vec in self.levels])

    def total(self) -> float:
        return float(sum(vec.sum() for vec in self.levels))


def build_region_generator(config, i: int, e_i: float) -> BlockGenerator:
    """Block generator of region ``i`` given its relative arrival rate.

    Level l (= unusable count) has K - l + 1 phases.  Within a level the
    good count walks down at lambda (a rental; suppressed at good = 0 where
    arriving users are lost without a transition) and up at e_i (suppressed
    when the region already holds K - l bikes).  Failures move one bike to
    the next level at rate good * alpha; the top level trades failures for
    the truck clock and its corner resets the level to 0 with the good
    count unchanged.
    """
    K, M = config.K, config.M
    lam = config.lam[i - 1]
    alpha = config.alpha
    mu_out = config.mu_remove[i - 1]
    if e_i <= 0:
        raise ValueError(f"relative arrival rate of region {i} must be > 0, got {e_i}")

    diag: list[np.ndarray] = []
    super_: list[np.ndarray] = []
    for l in range(M + 1):
        dim = K - l + 1
        block = np.zeros((dim, dim))
        for k in range(dim):
            out_rate = 0.0
            if k >= 1:
                block[k, k - 1] = lam
                out_rate += lam
            if k < dim - 1:
                block[k, k + 1] = e_i
                out_rate += e_i
            if l < M:
                out_rate += k * alpha
            else:
                out_rate += mu_out
            block[k, k] = -out_rate
        diag.append(block)
        if l < M:
            fail = np.zeros((dim, dim - 1))
            for k in range(1, dim):
                fail[k, k - 1] = k * alpha
            super_.append(fail)
    corner = np.zeros((K - M + 1, K + 1))
    for k in range(K - M + 1):
        corner[k, k] = mu_out
    return BlockGenerator(diag, super_, corner)


def solve_region(config, i: int, e_i: float) -> RegionSolution:
    """Stationary law of region ``i`` via the RG-factorization.

    With alpha = 0 no level above 0 is ever entered; the chain degenerates
    to the level-0 birth-death walk of the good count, which is solved
    directly (the factorization requires the level cycle).
    """
    gen = build_region_generator(config, i, e_i)
    if config.alpha == 0:
        x0 = stationary_of_conservative(gen.diag[0])
        levels = [x0] + [np.zeros(config.K - l + 1) for l in range(1, config.M + 1)]
    else:
        levels = stationary_vector(rg_factorize(gen))
    return RegionSolution(region=i, K=config.K, M=config.M, levels=levels)
