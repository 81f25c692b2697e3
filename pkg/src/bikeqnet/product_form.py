"""Product-form joint stationary law of the closed network.

The joint probability of a state factorizes over nodes: regions and the
shop contribute their isolated stationary probabilities, and every road
contributes an infinite-server factor (e/mu)^m / m! evaluated on its batch
lattice.  The normalization constant sums the unnormalized product over
the whole state space.

Everything is accumulated in log space: road factors mix powers with
factorials and overflow double precision well below realistic fleet
sizes.  The constant uses a chunked, max-shifted pairwise summation in the
deterministic enumeration order, so repeated runs agree to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    DEFAULT_STATE_CAP,
    NetworkState,
    Site,
    StateSpaceCapExceeded,
    SystemConfig,
    Topology,
    _suffix_counts,
    in_state_space,
    sites,
)
from .region_chain import RegionSolution
from .routing import RelativeRates
from .shop_chain import ShopSolution

_CHUNK = 1 << 16


@dataclass
class ProductFormSolution:
    """Per-node log-factor tables plus the normalization constant."""

    config: SystemConfig
    topology: Topology
    rates: RelativeRates
    regions: list[RegionSolution]
    shop: ShopSolution
    log_factors: dict
    log_C: float
    state_count: int

    @property
    def C(self) -> float:
        return math.exp(self.log_C)


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def _road_log_factor(e: float, mu: float, m: int) -> float:
    """log of (e/mu)^m / m!, with the empty road contributing exactly 1."""
    if m == 0:
        return 0.0
    if e <= 0.0:
        return -math.inf
    return m * math.log(e / mu) - math.lgamma(m + 1)


def _build_log_factors(
    config: SystemConfig,
    topology: Topology,
    rates: RelativeRates,
    regions: list[RegionSolution],
    shop: ShopSolution,
) -> dict:
    tables: dict = {}
    tables[("shop",)] = lambda sub: _log(shop.prob(sub[0], sub[1]))
    for i in range(1, config.N + 1):
        sol = regions[i - 1]
        tables[("region", i)] = (lambda s: lambda sub: _log(s.prob(sub[0], sub[1])))(sol)
    for (i, j) in topology.ride_roads:
        e, mu = rates.ride(i, j), config.mu_ride[(i, j)]
        tables[("ride", i, j)] = (
            lambda e=e, mu=mu: lambda m: _road_log_factor(e, mu, m)
        )()
    for i in range(1, config.N + 1):
        e, mu = rates.remove(i), config.mu_remove[i - 1]
        tables[("remove", i)] = (
            lambda e=e, mu=mu: lambda m: _road_log_factor(e, mu, m)
        )()
    for i in topology.return_regions:
        e, mu = rates.ret(i), config.mu_return[i - 1]
        tables[("return", i)] = (
            lambda e=e, mu=mu: lambda m: _road_log_factor(e, mu, m)
        )()
    return tables


def _weighted_sites(site_list: list[Site], log_factors: dict) -> list[list[tuple]]:
    """Per site: (sub-state, count, log factor) triples in canonical order."""
    out = []
    for site in site_list:
        logf = log_factors[site.node]
        out.append([(sub, count, logf(sub)) for sub, count in site.values])
    return out


class _LogSumAccumulator:
    """Deterministic log-sum-exp over a stream of log terms.

    Terms are buffered in chunks; each chunk is max-shifted and summed with
    numpy's pairwise reduction, and the chunk results are combined at the
    end the same way.
    """

    def __init__(self):
        self._buffer: list[float] = []
        self._chunks: list[float] = []
        self.count = 0

    def add(self, value: float) -> None:
        self.count += 1
        self._buffer.append(value)
        if len(self._buffer) >= _CHUNK:
            self._flush()

    def _flush(self) -> None:
        if self._buffer:
            self._chunks.append(_logsumexp(np.array(self._buffer)))
            self._buffer = []

    def result(self) -> float:
        self._flush()
        if not self._chunks:
            return -math.inf
        return _logsumexp(np.array(self._chunks))


def _logsumexp(values: np.ndarray) -> float:
    m = values.max() if values.size else -math.inf
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(values - m).sum()))


def _accumulate(
    weighted: list[list[tuple]],
    ways: list[list[int]],
    K: int,
    visit=None,
) -> _LogSumAccumulator:
    """Depth-first sum of exp(total log weight) over all exact-K assignments.

    ``visit(chosen, log_weight)`` is called per state when provided
    (``chosen`` is the per-site sub-state list, reused in place).
    """
    acc = _LogSumAccumulator()
    n_sites = len(weighted)
    chosen = [None] * n_sites

    def rec(s: int, remaining: int, logw: float) -> None:
        if s == n_sites:
            if remaining == 0:
                acc.add(logw)
                if visit is not None:
                    visit(chosen, logw)
            return
        nxt = ways[s + 1]
        for sub, count, logf in weighted[s]:
            if count <= remaining and nxt[remaining - count]:
                chosen[s] = sub
                rec(s + 1, remaining - count, logw + logf)

    rec(0, K, 0.0)
    return acc


def build_product_form(
    config: SystemConfig,
    topology: Topology,
    rates: RelativeRates,
    regions: list[RegionSolution],
    shop: ShopSolution,
    cap: int = DEFAULT_STATE_CAP,
) -> ProductFormSolution:
    """Assemble the factor tables and compute the normalization constant."""
    site_list = sites(config, topology)
    ways = _suffix_counts(site_list, config.K)
    total = ways[0][config.K]
    if total > cap:
        raise StateSpaceCapExceeded(total, cap)
    log_factors = _build_log_factors(config, topology, rates, regions, shop)
    weighted = _weighted_sites(site_list, log_factors)
    acc = _accumulate(weighted, ways, config.K)
    log_c = acc.result()
    if not math.isfinite(log_c):
        raise ValueError("normalization constant is zero: no state has positive weight")
    return ProductFormSolution(
        config=config,
        topology=topology,
        rates=rates,
        regions=regions,
        shop=shop,
        log_factors=log_factors,
        log_C=log_c,
        state_count=total,
    )


def normalization_constant(
    config: SystemConfig,
    topology: Topology,
    rates: RelativeRates,
    regions: list[RegionSolution],
    shop: ShopSolution,
    cap: int = DEFAULT_STATE_CAP,
) -> float:
    """The normalization constant alone (sum of all unnormalized products)."""
    return build_product_form(config, topology, rates, regions, shop, cap=cap).C


def _state_site_values(sol: ProductFormSolution, state: NetworkState) -> list[tuple]:
    pairs = [(("shop",), (state.shop_good, state.shop_bad))]
    for i in range(1, sol.config.N + 1):
        pairs.append((("region", i), (state.region_good[i - 1], state.region_bad[i - 1])))
    for pos, (i, j) in enumerate(sol.topology.ride_roads):
        pairs.append((("ride", i, j), state.ride[pos]))
    for i in range(1, sol.config.N + 1):
        pairs.append((("remove", i), state.remove[i - 1]))
    for pos, i in enumerate(sol.topology.return_regions):
        pairs.append((("return", i), state.ret[pos]))
    return pairs


def log_weight(sol: ProductFormSolution, state: NetworkState) -> float:
    """Unnormalized log product of all node factors at one state."""
    return sum(sol.log_factors[node](sub) for node, sub in _state_site_values(sol, state))


def joint_probability(sol: ProductFormSolution, state: NetworkState) -> float:
    """Stationary probability of one state.

    Raises ValueError if the state is outside the network state space.
    """
    if not in_state_space(state, sol.config, sol.topology):
        raise ValueError(f"state {state} is outside the state space")
    return math.exp(log_weight(sol, state) - sol.log_C)


# ---------------------------------------------------------------------------
# Marginals
# ---------------------------------------------------------------------------

def _resolve_query(sol: ProductFormSolution, query: tuple):
    """Map a marginal query onto (site node, pinned sub-state)."""
    config = sol.config
    kind = query[0]
    if kind == "region":
        _, i, good, bad = query
        if not (1 <= i <= config.N and 0 <= bad <= config.M and 0 <= good <= config.K - bad):
            raise ValueError(f"malformed region query {query}")
        return ("region", i), (good, bad)
    if kind == "shop":
        _, good, bad = query
        total = good + bad
        if not (0 <= good <= config.Z and bad >= 0 and total % config.M == 0
                and total <= config.phi * config.M):
            raise ValueError(f"malformed shop query {query}")
        return ("shop",), (good, bad)
    if kind == "ride":
        _, i, j, m = query
        if (i, j) not in config.mu_ride or not 0 <= m <= config.K:
            raise ValueError(f"malformed ride-road query {query}")
        return ("ride", i, j), m
    if kind == "remove":
        _, i, m = query
        if not (1 <= i <= config.N) or m % config.M != 0 or not 0 <= m <= config.phi * config.M:
            raise ValueError(f"malformed removal-road query {query}")
        return ("remove", i), m
    if kind == "return":
        _, i, m = query
        if i not in sol.topology.return_regions:
            raise ValueError(f"region {i} has no return road")
        zi = config.z_batch[i - 1]
        if m % zi != 0 or not 0 <= m // zi <= config.phi // config.psi:
            raise ValueError(f"malformed return-road query {query}")
        return ("return", i), m
    raise ValueError(f"unknown query kind {kind!r}")


def _pinned_sum(sol: ProductFormSolution, node, sub, exclude_pinned: bool) -> float:
    site_list = sites(sol.config, sol.topology)
    weighted = _weighted_sites(site_list, sol.log_factors)
    for pos, site in enumerate(site_list):
        if site.node == node:
            entries = [
                (s, c, 0.0 if exclude_pinned else logf)
                for s, c, logf in weighted[pos]
                if s == sub
            ]
            if not entries:
                return -math.inf
            weighted[pos] = entries
            break
    ways = _suffix_counts(
        [Site(site.node, tuple((s, c) for s, c, _ in w)) for site, w in zip(site_list, weighted)],
        sol.config.K,
    )
    return _accumulate(weighted, ways, sol.config.K).result()


def marginal(sol: ProductFormSolution, query: tuple) -> float:
    """Marginal probability via the partial normalization constant.

    The queried node's factor is held out of the state-space sum and
    multiplied back in afterwards.  ``marginal_slice_sum`` computes the
    same quantity by summing joint probabilities over the matching slice;
    the two must agree and the slice sum serves as the internal check.
    """
    node, sub = _resolve_query(sol, query)
    log_h = sol.log_factors[node](sub)
    if not math.isfinite(log_h):
        return 0.0
    log_ctilde = _pinned_sum(sol, node, sub, exclude_pinned=True)
    return math.exp(log_h + log_ctilde - sol.log_C)


def marginal_slice_sum(sol: ProductFormSolution, query: tuple) -> float:
    """Marginal probability as a direct sum of joint probabilities."""
    node, sub = _resolve_query(sol, query)
    log_slice = _pinned_sum(sol, node, sub, exclude_pinned=False)
    return math.exp(log_slice - sol.log_C)


def marginal_tables(sol: ProductFormSolution):
    """All node marginals in one deterministic pass over the state space.

    Returns a :class:`bikeqnet.measures.MarginalTables`; every family in
    the tables sums to one up to accumulation error.
    """
    from .measures import MarginalTables

    config, topology = sol.config, sol.topology
    tables = MarginalTables.zeros(config, topology)
    site_list = sites(config, topology)
    ways = _suffix_counts(site_list, config.K)
    weighted = _weighted_sites(site_list, sol.log_factors)
    log_c = sol.log_C

    n_regions = config.N
    n_rides = len(topology.ride_roads)

    def visit(chosen, logw):
        p = math.exp(logw - log_c)
        if p == 0.0:
            return
        g, b = chosen[0]
        tables.shop[g, b] += p
        pos = 1
        for i in range(n_regions):
            g, b = chosen[pos]
            tables.region[i][g, b] += p
            pos += 1
        for road_pos in range(n_rides):
            tables.ride[road_pos][chosen[pos]] += p
            pos += 1
        for i in range(n_regions):
            tables.remove[i][chosen[pos] // config.M] += p
            pos += 1
        for ret_pos, i in enumerate(topology.return_regions):
            zi = config.z_batch[i - 1]
            tables.ret[ret_pos][chosen[pos] // zi] += p
            pos += 1

    _accumulate(weighted, ways, config.K, visit=visit)
    return tables
