"""Stationary performance measures of the fleet.

All measures are functionals of per-node marginal tables, so the same code
serves three sources: the product-form law, a dense stationary solve of
the exact network chain, and simulation occupancy averages.

Measures:
  eta      proportion of unusable bikes (regions + shop + removal roads).
  xi       proportion of usable bikes in regions, ride roads and return
           roads; usable bikes parked in the shop are deliberately not
           counted, so eta + xi < 1 in general.
  F_A      probability the shop holds at least one unusable bike.
  gamma1   expected repaired bikes over expected total bikes in the shop.
  gamma2   expected unusable bikes in the shop over all unusable bikes.

The bike-count audit sums expected counts over every category (including
the ones no measure uses, such as usable bikes in the shop) and checks the
total against the fleet size K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkState, SystemConfig, Topology
from .region_chain import RegionSolution
from .routing import RelativeRates
from .shop_chain import ShopSolution


@dataclass
class MarginalTables:
    """Node-level marginal distributions.

    ``region[i-1][g, b]`` is the probability of region i holding (g, b)
    bikes; ``shop[g, b]`` likewise.  Road tables are indexed by batch count
    (removal and return roads) or bike count (ride roads), aligned with
    the topology's road orderings.
    """

    config: SystemConfig
    topology: Topology
    region: list[np.ndarray]
    shop: np.ndarray
    ride: list[np.ndarray]
    remove: list[np.ndarray]
    ret: list[np.ndarray]

    @classmethod
    def zeros(cls, config: SystemConfig, topology: Topology) -> "MarginalTables":
        # Return tables are sized by the loose physical bound floor(K/Z_i):
        # independent group clocks can stack more batches on one road than
        # the joint-law lattice bound phi/psi admits.
        phi = config.phi
        return cls(
            config=config,
            topology=topology,
            region=[np.zeros((config.K + 1, config.M + 1)) for _ in range(config.N)],
            shop=np.zeros((config.Z + 1, phi * config.M + 1)),
            ride=[np.zeros(config.K + 1) for _ in topology.ride_roads],
            remove=[np.zeros(phi + 1) for _ in range(config.N)],
            ret=[
                np.zeros(config.K // config.z_batch[i - 1] + 1)
                for i in topology.return_regions
            ],
        )

    def add_state(self, state: NetworkState, weight: float) -> None:
        config, topology = self.config, self.topology
        self.shop[state.shop_good, state.shop_bad] += weight
        for i in range(config.N):
            self.region[i][state.region_good[i], state.region_bad[i]] += weight
        for pos in range(len(topology.ride_roads)):
            self.ride[pos][state.ride[pos]] += weight
        for i in range(config.N):
            self.remove[i][state.remove[i] // config.M] += weight
        for pos, i in enumerate(topology.return_regions):
            self.ret[pos][state.ret[pos] // config.z_batch[i - 1]] += weight


def tables_from_state_probs(
    pairs, config: SystemConfig, topology: Topology
) -> MarginalTables:
    """Marginal tables of an explicit distribution over network states."""
    tables = MarginalTables.zeros(config, topology)
    for state, prob in pairs:
        tables.add_state(state, prob)
    return tables


def decomposition_tables(
    config: SystemConfig,
    topology: Topology,
    rates: RelativeRates,
    regions: list[RegionSolution],
    shop: ShopSolution,
) -> MarginalTables:
    """Node-marginal-only tables: every node keeps its isolated law.

    Regions and the shop use their chain solutions unchanged; each road
    uses its infinite-server factor normalized over the road's own
    admissible counts.  This drops the global population constraint, so
    the tables are a decomposition approximation: the bike-count audit is
    reported but will not close.
    """
    from .product_form import _road_log_factor

    tables = MarginalTables.zeros(config, topology)
    for i in range(1, config.N + 1):
        sol = regions[i - 1]
        for b in range(config.M + 1):
            for g in range(config.K - b + 1):
                tables.region[i - 1][g, b] = sol.prob(g, b)
    for k, support in enumerate(shop.supports):
        for j, b in enumerate(support):
            tables.shop[k, b] = shop.levels[k][j]

    def normalized(e: float, mu: float, counts) -> np.ndarray:
        logs = np.array([_road_log_factor(e, mu, m) for m in counts])
        m = logs.max()
        if not np.isfinite(m):
            out = np.zeros(len(logs))
            out[0] = 1.0
            return out
        weights = np.exp(logs - m)
        return weights / weights.sum()

    for pos, (i, j) in enumerate(topology.ride_roads):
        tables.ride[pos] = normalized(
            rates.ride(i, j), config.mu_ride[(i, j)], range(config.K + 1)
        )
    for i in range(1, config.N + 1):
        counts = [k * config.M for k in range(config.phi + 1)]
        tables.remove[i - 1] = normalized(rates.remove(i), config.mu_remove[i - 1], counts)
    for pos, i in enumerate(topology.return_regions):
        zi = config.z_batch[i - 1]
        counts = [l * zi for l in range(config.phi // config.psi + 1)]
        probs = normalized(rates.ret(i), config.mu_return[i - 1], counts)
        tables.ret[pos][: len(probs)] = probs
    return tables


@dataclass
class MeasureReport:
    """The five stationary measures plus the conservation audit."""

    eta: float
    xi: float
    f_a: float
    gamma1: float
    gamma2: float
    e_unusable: float
    e_usable: float
    audit: dict = field(default_factory=dict)
    audit_gap: float = 0.0
    flags: tuple = ()

    def as_row(self) -> dict:
        return {
            "eta": self.eta,
            "xi": self.xi,
            "F_A": self.f_a,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "E_unusable": self.e_unusable,
            "E_usable": self.e_usable,
            "audit_gap": self.audit_gap,
        }


def compute_measures(tables: MarginalTables, config: SystemConfig) -> MeasureReport:
    """Evaluate every measure and the bike-count audit on marginal tables."""
    topology = tables.topology
    K, M = config.K, config.M

    region_bad = 0.0
    region_good = 0.0
    for table in tables.region:
        good_counts = np.arange(table.shape[0])
        bad_counts = np.arange(table.shape[1])
        region_good += float(good_counts @ table.sum(axis=1))
        region_bad += float(table.sum(axis=0) @ bad_counts)

    shop_good_counts = np.arange(tables.shop.shape[0])
    shop_bad_counts = np.arange(tables.shop.shape[1])
    shop_good = float(shop_good_counts @ tables.shop.sum(axis=1))
    shop_bad = float(tables.shop.sum(axis=0) @ shop_bad_counts)

    ride_total = sum(float(np.arange(len(t)) @ t) for t in tables.ride)
    remove_total = sum(float((np.arange(len(t)) * M) @ t) for t in tables.remove)
    return_total = 0.0
    for pos, i in enumerate(topology.return_regions):
        zi = config.z_batch[i - 1]
        t = tables.ret[pos]
        return_total += float((np.arange(len(t)) * zi) @ t)

    e_unusable = region_bad + shop_bad + remove_total
    e_usable = region_good + ride_total + return_total

    f_0 = float(tables.shop[:, 0].sum())
    f_a = 1.0 - f_0

    flags = []
    shop_total = shop_good + shop_bad
    if shop_total > 0.0:
        gamma1 = shop_good / shop_total
    else:
        gamma1 = 0.0
        flags.append("gamma1 denominator zero (empty shop); reported as 0")
    if e_unusable > 0.0:
        gamma2 = shop_bad / e_unusable
    else:
        gamma2 = 0.0
        flags.append("gamma2 denominator zero (no unusable bikes); reported as 0")

    audit = {
        "region_good": region_good,
        "region_bad": region_bad,
        "shop_good": shop_good,
        "shop_bad": shop_bad,
        "ride_roads": ride_total,
        "removal_roads": remove_total,
        "return_roads": return_total,
    }
    audit_gap = abs(sum(audit.values()) - K)

    return MeasureReport(
        eta=e_unusable / K,
        xi=e_usable / K,
        f_a=f_a,
        gamma1=gamma1,
        gamma2=gamma2,
        e_unusable=e_unusable,
        e_usable=e_usable,
        audit=audit,
        audit_gap=audit_gap,
        flags=tuple(flags),
    )
