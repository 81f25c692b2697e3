"""State-dependent routing matrix and the relative-arrival-rate fixed point.

The relative rate vector ``e`` of the closed network solves e = e P(e):
the transfer probabilities out of the region and shop nodes depend on
those nodes' stationary laws, which in turn depend on ``e``.  The solver
below is plain successive substitution with an optional damping factor
that engages automatically when the residual stops decreasing.

Because P(e) is exactly row-stochastic, iteration preserves the l1 mass of
``e``; the equation pins only a direction per mass level, and different
normalizations select genuinely different solutions (the node chains mix
``e`` with absolute rates).  The anchor is therefore part of the problem
statement: the default fixes the first region's rate to 1 after every
step, and the ``"total"`` anchor keeps the mass of the initial all-ones
vector (one unit per node).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import SystemConfig, Topology, node_label
from .region_chain import RegionSolution, solve_region
from .shop_chain import ShopSolution, solve_shop

DAMPING_WINDOW = 50


class FixedPointError(RuntimeError):
    """Raised when the fixed-point iteration does not reach the tolerance."""

    def __init__(self, message: str, trace: "FixedPointTrace"):
        self.trace = trace
        super().__init__(message)


@dataclass
class RelativeRates:
    """One nonnegative relative rate per node, in canonical node order."""

    topology: Topology
    values: np.ndarray

    def _get(self, node) -> float:
        return float(self.values[self.topology.index[node]])

    @property
    def e0(self) -> float:
        return self._get(("shop",))

    def region(self, i: int) -> float:
        return self._get(("region", i))

    def ride(self, i: int, j: int) -> float:
        return self._get(("ride", i, j))

    def remove(self, i: int) -> float:
        return self._get(("remove", i))

    def ret(self, i: int) -> float:
        if ("return", i) not in self.topology.index:
            return 0.0
        return self._get(("return", i))

    def labelled(self) -> list[tuple[str, float]]:
        return [(node_label(n), float(v)) for n, v in zip(self.topology.nodes, self.values)]


@dataclass
class FixedPointTrace:
    """Append-only record of one fixed-point run."""

    residuals: list[float] = field(default_factory=list)
    thetas: list[float] = field(default_factory=list)
    rates: list[np.ndarray] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def write_csv(self, fh, topology: Topology | None = None) -> None:
        header = "iteration,residual,theta"
        if topology is not None:
            header += "," + ",".join("e_" + node_label(n) for n in topology.nodes)
        fh.write(header + "\n")
        for it, (res, theta) in enumerate(zip(self.residuals, self.thetas), start=1):
            row = f"{it},{res:.17g},{theta:g}"
            if topology is not None:
                row += "," + ",".join(f"{v:.17g}" for v in self.rates[it - 1])
            fh.write(row + "\n")


def solve_nodes(
    config: SystemConfig, topology: Topology, rates: RelativeRates
) -> tuple[list[RegionSolution], ShopSolution]:
    """Solve every region chain and the shop chain at the given rates."""
    regions = [solve_region(config, i, rates.region(i)) for i in range(1, config.N + 1)]
    shop = solve_shop(config, rates.e0)
    return regions, shop


def build_routing_matrix(
    config: SystemConfig,
    topology: Topology,
    regions: list[RegionSolution],
    shop: ShopSolution,
) -> np.ndarray:
    """Row-stochastic transfer matrix over the node ordering.

    Shop row: mass splits between staying (no full batch ready) and the
    return roads in proportion beta_i, weighted by the probability that a
    full batch of Z repaired bikes is waiting.  Region rows: the unusable
    batch mass routes to the removal road, the no-usable-bike mass
    self-loops (a lost user), and the rest follows the riding
    probabilities.  Road rows forward deterministically.
    """
    idx = topology.index
    n = len(topology.nodes)
    P = np.zeros((n, n))

    dispatch_ready = shop.level_mass(config.Z)
    P[idx[("shop",)], idx[("shop",)]] = 1.0 - dispatch_ready
    for i in topology.return_regions:
        P[idx[("shop",)], idx[("return", i)]] = dispatch_ready * config.beta[i - 1]

    for i in range(1, config.N + 1):
        row = idx[("region", i)]
        q_remove = regions[i - 1].level_mass(config.M)
        q_self = sum(regions[i - 1].prob(0, l) for l in range(config.M))
        P[row, idx[("remove", i)]] = q_remove
        P[row, row] = q_self
        ride_share = 1.0 - q_remove - q_self
        for j in topology.theta[i - 1]:
            P[row, idx[("ride", i, j)]] = ride_share * config.p[(i, j)]

    for (i, j) in topology.ride_roads:
        P[idx[("ride", i, j)], idx[("region", j)]] = 1.0
    for i in range(1, config.N + 1):
        P[idx[("remove", i)], idx[("shop",)]] = 1.0
    for i in topology.return_regions:
        P[idx[("return", i)], idx[("region", i)]] = 1.0

    negative = P < 0
    if negative.any():
        worst = -P[negative].min()
        if worst > 1e-8:
            warnings.warn(
                f"routing matrix entries clamped by up to {worst:.3e}; "
                "node solutions carry unusually large rounding error",
                RuntimeWarning,
                stacklevel=2,
            )
        P[negative] = 0.0
    P /= P.sum(axis=1, keepdims=True)
    return P


def solve_relative_rates(
    config: SystemConfig,
    topology: Topology | None = None,
    e_init: np.ndarray | None = None,
    epsilon: float = 1e-10,
    max_iterations: int = 10000,
    anchor: str = "e1",
    keep_rate_history: bool = False,
) -> tuple[RelativeRates, FixedPointTrace]:
    """Iterate e <- e P(e) until the Euclidean step falls below ``epsilon``.

    Every iteration re-solves all node chains at the current rates; no
    solution is reused across iterations.  If the residual is non-monotone
    anywhere in a trailing window of ``DAMPING_WINDOW`` steps, the update
    is damped (e <- (1-theta) e + theta e P(e)) with theta halved, noted in
    the trace.  Raises :class:`FixedPointError` after ``max_iterations``.

    ``anchor`` is ``"e1"`` (region 1 rate fixed to 1 after every step,
    the default) or ``"total"`` (keep the l1 mass of the initial vector).
    """
    if topology is None:
        topology = Topology.from_config(config)
    if anchor not in ("e1", "total"):
        raise ValueError(f"unknown anchor {anchor!r}")
    n = len(topology.nodes)
    e = np.ones(n) if e_init is None else np.asarray(e_init, dtype=float).copy()
    if e.shape != (n,) or (e <= 0).any():
        raise ValueError("e_init must be strictly positive with one entry per node")

    region1 = topology.index[("region", 1)]
    if anchor == "e1":
        e = e / e[region1]

    # With alpha = 0 a region never accumulates a removal batch, so the whole
    # repair loop (removal roads, shop, return roads) carries exactly zero
    # flow; pinning those entries avoids an algebraically slow decay through
    # the shop's self-loop.
    dead: list[int] = []
    if config.alpha == 0.0:
        dead = [
            topology.index[node]
            for node in topology.nodes
            if node[0] in ("shop", "remove", "return")
        ]
        e[dead] = 0.0

    trace = FixedPointTrace()
    theta = 1.0
    last_damp_check = 0
    for iteration in range(1, max_iterations + 1):
        rates = RelativeRates(topology, e)
        regions, shop = solve_nodes(config, topology, rates)
        P = build_routing_matrix(config, topology, regions, shop)
        step = e @ P
        e_new = step if theta == 1.0 else (1.0 - theta) * e + theta * step
        if dead:
            e_new[dead] = 0.0
        if anchor == "e1":
            e_new = e_new / e_new[region1]
        residual = float(np.linalg.norm(e_new - e))
        trace.residuals.append(residual)
        trace.thetas.append(theta)
        if keep_rate_history:
            trace.rates.append(e_new.copy())
        e = e_new
        if residual < epsilon:
            trace.converged = True
            return RelativeRates(topology, e), trace
        if (
            iteration - last_damp_check >= DAMPING_WINDOW
            and _non_monotone(trace.residuals, DAMPING_WINDOW)
        ):
            theta = max(theta / 2.0, 1.0 / 64.0)
            last_damp_check = iteration
            trace.notes.append(
                f"iteration {iteration}: residual non-monotone over the last "
                f"{DAMPING_WINDOW} steps, damping engaged with theta={theta:g}"
            )

    raise FixedPointError(
        f"no convergence after {max_iterations} iterations "
        f"(last residual {trace.residuals[-1]:.3e})",
        trace,
    )


def _non_monotone(residuals: list[float], window: int) -> bool:
    tail = residuals[-window:]
    return any(b > a * (1.0 + 1e-12) for a, b in zip(tail, tail[1:]))


def fixed_point_residual(
    config: SystemConfig, topology: Topology, rates: RelativeRates
) -> float:
    """Closure check: ||e - e P(e)|| with P rebuilt from fresh node solves."""
    regions, shop = solve_nodes(config, topology, rates)
    P = build_routing_matrix(config, topology, regions, shop)
    return float(np.linalg.norm(rates.values - rates.values @ P))
