"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the library's own code paths: dense
stationary vectors come from an SVD null space, censoring from a raw Schur
complement on the assembled matrix, and state-space counts from a plain
nested-loop filter.
"""

import itertools

import numpy as np
import pytest
import scipy.linalg

from bikeqnet.markov_core import BlockGenerator
from bikeqnet.model import SystemConfig, Topology


def dense_stationary(full: np.ndarray) -> np.ndarray:
    """Stationary vector of a conservative generator via an SVD null space."""
    ns = scipy.linalg.null_space(full.T)
    assert ns.shape[1] == 1, "generator does not have a one-dimensional null space"
    v = ns[:, 0]
    v = v / v.sum()
    assert v.min() > -1e-9
    return np.abs(v)


def censor_dense(full: np.ndarray, dims, k: int) -> np.ndarray:
    """Schur-complement censoring of the assembled matrix onto levels <= k."""
    keep = sum(dims[: k + 1])
    a = full[:keep, :keep]
    b = full[:keep, keep:]
    c = full[keep:, :keep]
    d = full[keep:, keep:]
    return a + b @ np.linalg.solve(-d, c)


def random_block_generator(rng: np.random.Generator, max_levels: int = 5,
                           max_dim: int = 6) -> BlockGenerator:
    """A random valid generator: strictly positive blocks keep it irreducible."""
    L = int(rng.integers(1, max_levels + 1))
    dims = [int(rng.integers(1, max_dim + 1)) for _ in range(L + 1)]
    diag, super_ = [], []
    for k in range(L + 1):
        block = rng.uniform(0.05, 2.0, size=(dims[k], dims[k]))
        np.fill_diagonal(block, 0.0)
        diag.append(block)
        if k < L:
            super_.append(rng.uniform(0.05, 2.0, size=(dims[k], dims[k + 1])))
    corner = rng.uniform(0.05, 2.0, size=(dims[L], dims[0]))
    for k in range(L + 1):
        out = diag[k].sum(axis=1)
        out += super_[k].sum(axis=1) if k < L else corner.sum(axis=1)
        diag[k][np.diag_indices(dims[k])] = -out
    return BlockGenerator(diag, super_, corner)


def two_region_config(**overrides) -> SystemConfig:
    """A small two-region system; single-bike batches unless overridden."""
    base = dict(
        N=2, K=3,
        lam=(1.0, 0.8),
        mu_ride={(1, 2): 1.0, (2, 1): 1.0},
        p={(1, 2): 1.0, (2, 1): 1.0},
        alpha=0.01, w=1.0, r=1, M=1, Z=1,
        beta=(1.0, 0.0),
        mu_remove=(1.0, 1.0),
        mu_return=(1.0, 0.0),
    )
    base.update(overrides)
    return SystemConfig(**base)


def example_one_config(K: int = 20) -> SystemConfig:
    """Two regions, batch sizes (5, 10); the published fleet size is unknown."""
    return SystemConfig(
        N=2, K=K,
        lam=(10.0, 8.0),
        mu_ride={(1, 2): 0.2, (2, 1): 0.2},
        p={(1, 2): 1.0, (2, 1): 1.0},
        alpha=0.01, w=1.0, r=2, M=5, Z=10,
        beta=(0.5, 0.5),
        mu_remove=(0.3, 0.3),
        mu_return=(0.2, 0.2),
    )


def brute_force_states(config: SystemConfig, topology: Topology):
    """Nested-loop enumeration over per-field ranges filtered by the state
    constraints, written directly from their definition."""
    K, M, Z = config.K, config.M, config.Z
    phi, psi = config.phi, config.psi
    rides = topology.ride_roads
    returns = topology.return_regions
    shop_pairs = [
        (g, b)
        for g in range(Z + 1)
        for b in range(phi * M + 1)
        if (g + b) % M == 0 and g + b <= phi * M
    ]
    region_pairs = [(g, b) for g in range(K + 1) for b in range(M + 1)]
    remove_vals = list(range(0, phi * M + 1, M))
    ret_vals = [
        [l * config.z_batch[i - 1] for l in range(phi // psi + 1)] for i in returns
    ]
    out = set()
    for shop in shop_pairs:
        for regs in itertools.product(region_pairs, repeat=config.N):
            for ride in itertools.product(range(K + 1), repeat=len(rides)):
                for rem in itertools.product(remove_vals, repeat=config.N):
                    for ret in itertools.product(*ret_vals) if ret_vals else [()]:
                        total = (
                            sum(shop) + sum(g + b for g, b in regs)
                            + sum(ride) + sum(rem) + sum(ret)
                        )
                        if total == K:
                            out.add((shop, regs, ride, rem, ret))
    return out


def state_key(state):
    """The same tuple shape brute_force_states produces."""
    return (
        (state.shop_good, state.shop_bad),
        tuple(zip(state.region_good, state.region_bad)),
        state.ride,
        state.remove,
        state.ret,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
