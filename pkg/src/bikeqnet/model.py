"""Fleet model: parameters, node topology and the network state space.

A system has ``N`` parking regions (indexed 1..N), one maintenance shop
(node 0) and three classes of road nodes: ride roads between regions,
removal roads carrying batches of ``M`` unusable bikes to the shop, and
return roads carrying batches of ``Z_i = beta_i * Z`` repaired bikes back
to the regions.  The total fleet size ``K`` is conserved, so the network is
closed and its state space is the set of count vectors defined by
:func:`in_state_space`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

DEFAULT_STATE_CAP = 10**8

# Node keys.  A node is a small tuple:
#   ("shop",)  |  ("region", i)  |  ("ride", i, j)  |  ("remove", i)  |  ("return", i)
Node = tuple


class StateSpaceCapExceeded(RuntimeError):
    """Raised when the state space is larger than the configured cap."""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(
            f"state space has {count} states, above the cap of {cap}; "
            "raise the cap or switch to node-marginal-only analysis"
        )


@dataclass(frozen=True)
class SystemConfig:
    """All model parameters.

    Rates are per unit time.  Region-indexed sequences are 0-based
    internally (entry ``i-1`` belongs to region ``i``); road-rate mappings
    are keyed by 1-based ``(i, j)`` pairs.

    Attributes:
        N: number of parking regions.
        K: total fleet size.
        lam: user arrival rate per region.
        mu_ride: riding rate on road i->j, for j in the downlink of i.
        p: routing probability i->j; each region's row sums to 1.
        alpha: failure rate of a usable parked bike.
        w: repair rate of a single repairman.
        r: number of repairmen.
        M: removal batch size.
        Z: redistribution batch size (an integer multiple of M).
        beta: fraction of a redistribution batch sent to each region.
        mu_remove: truck rate region i -> shop.
        mu_return: truck rate shop -> region i.
    """

    N: int
    K: int
    lam: tuple[float, ...]
    mu_ride: Mapping[tuple[int, int], float]
    p: Mapping[tuple[int, int], float]
    alpha: float
    w: float
    r: int
    M: int
    Z: int
    beta: tuple[float, ...]
    mu_remove: tuple[float, ...]
    mu_return: tuple[float, ...]

    @property
    def phi(self) -> int:
        """Maximum number of removal batches in flight, floor(K / M)."""
        return self.K // self.M

    @property
    def psi(self) -> int:
        """Batch-size ratio Z / M."""
        return self.Z // self.M

    @property
    def z_batch(self) -> tuple[int, ...]:
        """Per-region share of a redistribution batch, Z_i = beta_i * Z."""
        return tuple(int(round(b * self.Z)) for b in self.beta)

    def replace(self, **kwargs) -> "SystemConfig":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kwargs)
        return SystemConfig(**data)


@dataclass(frozen=True)
class Topology:
    """Node set and its canonical total ordering.

    Ordering: shop, regions ascending, ride roads (origin ascending, then
    destination ascending within each downlink set), removal roads, return
    roads.  Return roads exist only for regions receiving a positive batch
    share; a region with ``beta_i == 0`` has no return road node.
    """

    N: int
    theta: tuple[tuple[int, ...], ...]
    return_regions: tuple[int, ...]
    nodes: tuple[Node, ...]
    index: Mapping[Node, int] = field(repr=False)

    @classmethod
    def from_config(cls, config: SystemConfig) -> "Topology":
        theta = tuple(
            tuple(sorted(j for (i, j) in config.mu_ride if i == origin))
            for origin in range(1, config.N + 1)
        )
        return_regions = tuple(
            i for i in range(1, config.N + 1) if config.z_batch[i - 1] > 0
        )
        nodes: list[Node] = [("shop",)]
        nodes += [("region", i) for i in range(1, config.N + 1)]
        nodes += [("ride", i, j) for i in range(1, config.N + 1) for j in theta[i - 1]]
        nodes += [("remove", i) for i in range(1, config.N + 1)]
        nodes += [("return", i) for i in return_regions]
        index = {node: pos for pos, node in enumerate(nodes)}
        return cls(config.N, theta, return_regions, tuple(nodes), index)

    @property
    def ride_roads(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i in range(1, self.N + 1) for j in self.theta[i - 1])


def node_label(node: Node) -> str:
    """Short human-readable node name used in CSV output."""
    kind = node[0]
    if kind == "shop":
        return "0"
    if kind == "region":
        return str(node[1])
    if kind == "ride":
        return f"{node[1]}->{node[2]}"
    if kind == "remove":
        return f"{node[1]}->0"
    if kind == "return":
        return f"0->{node[1]}"
    raise ValueError(f"unknown node {node!r}")


@dataclass(frozen=True)
class NetworkState:
    """One state of the closed network: bike counts at every node.

    ``ride`` is aligned with ``Topology.ride_roads``, ``remove`` with
    regions 1..N and ``ret`` with ``Topology.return_regions``.
    """

    shop_good: int
    shop_bad: int
    region_good: tuple[int, ...]
    region_bad: tuple[int, ...]
    ride: tuple[int, ...]
    remove: tuple[int, ...]
    ret: tuple[int, ...]

    def total(self) -> int:
        return (
            self.shop_good
            + self.shop_bad
            + sum(self.region_good)
            + sum(self.region_bad)
            + sum(self.ride)
            + sum(self.remove)
            + sum(self.ret)
        )


def in_state_space(state: NetworkState, config: SystemConfig, topology: Topology) -> bool:
    """Membership predicate for the network state space."""
    M, Z = config.M, config.Z
    phi, psi = config.phi, config.psi
    if (
        len(state.region_good) != config.N
        or len(state.region_bad) != config.N
        or len(state.ride) != len(topology.ride_roads)
        or len(state.remove) != config.N
        or len(state.ret) != len(topology.return_regions)
    ):
        return False
    if state.total() != config.K:
        return False
    if not (0 <= state.shop_good <= Z):
        return False
    shop_total = state.shop_good + state.shop_bad
    if state.shop_bad < 0 or shop_total % M != 0 or shop_total > phi * M:
        return False
    if state.shop_bad > phi * M:
        return False
    for i in range(config.N):
        if not (0 <= state.region_bad[i] <= M):
            return False
        if state.region_good[i] < 0:
            return False
    if any(m < 0 for m in state.ride):
        return False
    for m in state.remove:
        if m < 0 or m % M != 0 or m > phi * M:
            return False
    for pos, i in enumerate(topology.return_regions):
        zi = config.z_batch[i - 1]
        m = state.ret[pos]
        if m < 0 or m % zi != 0 or m // zi > phi // psi:
            return False
    return True


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_config(config: SystemConfig, topology: Topology | None = None) -> list[str]:
    """Check every structural invariant; return the violations found.

    An empty list means the configuration is valid.  Violations are data,
    not exceptions: callers decide whether to abort.
    """
    v: list[str] = []
    N = config.N
    if N < 1:
        v.append(f"N must be a positive integer, got {N}")
        return v
    if config.K < 1:
        v.append(f"K must be a positive integer, got {config.K}")
    if config.M < 1:
        v.append(f"M must be a positive integer, got {config.M}")
    if config.Z < 1:
        v.append(f"Z must be a positive integer, got {config.Z}")
    if config.r < 1:
        v.append(f"r must be a positive integer, got {config.r}")
    for name, seq in (("lambda", config.lam), ("beta", config.beta),
                      ("mu_remove", config.mu_remove), ("mu_return", config.mu_return)):
        if len(seq) != N:
            v.append(f"{name} must have one entry per region ({N}), got {len(seq)}")
    if v:
        return v

    for i in range(1, N + 1):
        if config.lam[i - 1] <= 0:
            v.append(f"lambda[{i}] must be > 0, got {config.lam[i - 1]}")
        if config.mu_remove[i - 1] <= 0:
            v.append(f"mu_remove[{i}] must be > 0, got {config.mu_remove[i - 1]}")
    if config.alpha < 0:
        v.append(f"alpha must be >= 0, got {config.alpha}")
    if config.w <= 0:
        v.append(f"w must be > 0, got {config.w}")

    if set(config.mu_ride) != set(config.p):
        v.append("mu_ride and p must be defined on the same set of roads")
    for (i, j), rate in config.mu_ride.items():
        if not (1 <= i <= N and 1 <= j <= N) or i == j:
            v.append(f"ride road ({i},{j}) is not between two distinct regions")
        elif rate <= 0:
            v.append(f"mu_ride[{i}][{j}] must be > 0, got {rate}")
    for i in range(1, N + 1):
        row = [config.p.get((i, j), 0.0) for j in range(1, N + 1)]
        if any(x < 0 for x in row):
            v.append(f"routing probabilities of region {i} must be nonnegative")
        total = sum(row)
        if abs(total - 1.0) > 1e-9:
            v.append(f"routing probabilities of region {i} sum to {total:g} != 1")

    # Note K <= N*(M-1) is deliberately NOT a violation: the whole fleet can
    # then freeze as sub-batch unusable remainders, so the physical chain is
    # reducible, but the analytic decomposition stays well-defined and the
    # exact-chain solver refuses such instances on its own.
    if config.M >= 1 and config.M > config.K:
        v.append(f"removal batch M={config.M} exceeds the fleet size K={config.K}")
    if config.M >= 1 and config.Z % config.M != 0:
        v.append(f"Z not an integer multiple of M (Z={config.Z}, M={config.M})")
    elif config.M >= 1 and config.M <= config.K and config.Z > config.phi * config.M:
        v.append(
            f"Z={config.Z} exceeds phi*M={config.phi * config.M}; "
            "the shop could never accumulate a full redistribution batch"
        )

    beta_sum = sum(config.beta)
    if abs(beta_sum - 1.0) > 1e-9:
        v.append(f"beta fractions sum to {beta_sum:g} != 1")
    for i in range(1, N + 1):
        b = config.beta[i - 1]
        if b < 0:
            v.append(f"beta[{i}] must be >= 0, got {b}")
            continue
        zi = b * config.Z
        if abs(zi - round(zi)) > 1e-9:
            v.append(f"beta[{i}]*Z = {zi:g} is not an integer batch share")
        mu = config.mu_return[i - 1]
        if (b == 0) != (mu == 0):
            v.append(
                f"mu_return[{i}]={mu:g} and beta[{i}]={b:g} must be zero jointly or "
                "both positive"
            )
        elif mu < 0:
            v.append(f"mu_return[{i}] must be >= 0, got {mu}")
    if all(b == 0 for b in config.beta):
        v.append("at least one region must receive redistribution batches (beta > 0)")

    if topology is None:
        topology = Topology.from_config(config)
    for i in range(1, N + 1):
        if not topology.theta[i - 1]:
            v.append(f"region {i} has an empty downlink set")
    if not v and not _strongly_connected(config, topology):
        v.append("the node graph is not strongly connected (path irreducibility fails)")
    return v


def _strongly_connected(config: SystemConfig, topology: Topology) -> bool:
    nodes = topology.nodes
    idx = topology.index
    adjacency: list[list[int]] = [[] for _ in nodes]
    for i in range(1, config.N + 1):
        for j in topology.theta[i - 1]:
            adjacency[idx[("region", i)]].append(idx[("ride", i, j)])
            adjacency[idx[("ride", i, j)]].append(idx[("region", j)])
        adjacency[idx[("region", i)]].append(idx[("remove", i)])
        adjacency[idx[("remove", i)]].append(idx[("shop",)])
    for i in topology.return_regions:
        adjacency[idx[("shop",)]].append(idx[("return", i)])
        adjacency[idx[("return", i)]].append(idx[("region", i)])

    def reachable(start: int, adj: list[list[int]]) -> int:
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen)

    n = len(nodes)
    if reachable(0, adjacency) != n:
        return False
    reverse: list[list[int]] = [[] for _ in nodes]
    for u, outs in enumerate(adjacency):
        for w in outs:
            reverse[w].append(u)
    return reachable(0, reverse) == n


# ---------------------------------------------------------------------------
# State-space enumeration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Site:
    """One component of the state vector and its admissible sub-states.

    ``values`` lists (sub-state, bike count) pairs in the canonical
    enumeration order for this site.  Region and shop sites carry
    (good, bad) pairs; road sites carry a single count.
    """

    node: Node
    values: tuple[tuple[object, int], ...]


def sites(config: SystemConfig, topology: Topology) -> list[Site]:
    """Per-node admissible sub-states, in canonical node order."""
    M, Z, K = config.M, config.Z, config.K
    phi, psi = config.phi, config.psi
    out: list[Site] = []

    shop_vals = []
    for g in range(0, Z + 1):
        for h in range(math.ceil(g / M), phi + 1):
            b = h * M - g
            shop_vals.append(((g, b), g + b))
    out.append(Site(("shop",), tuple(shop_vals)))

    for i in range(1, config.N + 1):
        vals = tuple(((g, b), g + b) for g in range(0, K + 1) for b in range(0, M + 1))
        out.append(Site(("region", i), vals))

    for (i, j) in topology.ride_roads:
        vals = tuple((m, m) for m in range(0, K + 1))
        out.append(Site(("ride", i, j), vals))

    for i in range(1, config.N + 1):
        vals = tuple((k * M, k * M) for k in range(0, phi + 1))
        out.append(Site(("remove", i), vals))

    for i in topology.return_regions:
        zi = config.z_batch[i - 1]
        vals = tuple((l * zi, l * zi) for l in range(0, phi // psi + 1))
        out.append(Site(("return", i), vals))
    return out


def _suffix_counts(site_list: Sequence[Site], K: int) -> list[list[int]]:
    """ways[s][k] = number of assignments to sites s.. that consume exactly k."""
    ways = [[0] * (K + 1) for _ in range(len(site_list) + 1)]
    ways[len(site_list)][0] = 1
    for s in range(len(site_list) - 1, -1, -1):
        per_count = [0] * (K + 1)
        for _, c in site_list[s].values:
            if c <= K:
                per_count[c] += 1
        nxt = ways[s + 1]
        cur = ways[s]
        for k in range(K + 1):
            total = 0
            for c in range(k + 1):
                if per_count[c] and nxt[k - c]:
                    total += per_count[c] * nxt[k - c]
            cur[k] = total
    return ways


def count_states(config: SystemConfig, topology: Topology | None = None) -> int:
    """Size of the state space, computed without enumerating it."""
    if topology is None:
        topology = Topology.from_config(config)
    site_list = sites(config, topology)
    return _suffix_counts(site_list, config.K)[0][config.K]


def enumerate_states(
    config: SystemConfig,
    topology: Topology | None = None,
    cap: int = DEFAULT_STATE_CAP,
) -> Iterator[NetworkState]:
    """Yield every state exactly once, in canonical lexicographic order.

    The order is lexicographic over the node ordering of ``Topology``;
    within a region or shop node the (good, bad) pair is ordered with good
    ascending, then bad.  Raises :class:`StateSpaceCapExceeded` before
    yielding anything if the space is larger than ``cap``.
    """
    if topology is None:
        topology = Topology.from_config(config)
    site_list = sites(config, topology)
    ways = _suffix_counts(site_list, config.K)
    total = ways[0][config.K]
    if total > cap:
        raise StateSpaceCapExceeded(total, cap)

    n_sites = len(site_list)
    chosen: list[object] = [None] * n_sites

    def rec(s: int, remaining: int) -> Iterator[NetworkState]:
        if s == n_sites:
            if remaining == 0:
                yield _assemble_state(config, topology, chosen)
            return
        nxt = ways[s + 1]
        for sub, c in site_list[s].values:
            if c <= remaining and nxt[remaining - c]:
                chosen[s] = sub
                yield from rec(s + 1, remaining - c)

    yield from rec(0, config.K)


def _assemble_state(config: SystemConfig, topology: Topology, chosen: Sequence) -> NetworkState:
    N = config.N
    pos = 0
    shop_g, shop_b = chosen[pos]
    pos += 1
    region_g, region_b = [], []
    for _ in range(N):
        g, b = chosen[pos]
        region_g.append(g)
        region_b.append(b)
        pos += 1
    n_rides = len(topology.ride_roads)
    ride = tuple(chosen[pos:pos + n_rides])
    pos += n_rides
    remove = tuple(chosen[pos:pos + N])
    pos += N
    ret = tuple(chosen[pos:pos + len(topology.return_regions)])
    return NetworkState(shop_g, shop_b, tuple(region_g), tuple(region_b), ride, remove, ret)


# ---------------------------------------------------------------------------
# Config file I/O (JSON; see docs/config_schema.json)
# ---------------------------------------------------------------------------

def config_from_dict(data: Mapping) -> SystemConfig:
    """Build a config from a parsed JSON document.

    Road mappings use string region ids ("1"-based) nested as
    ``{"1": {"2": rate}}``.  Keys starting with an underscore are ignored.
    """
    def road_map(obj) -> dict[tuple[int, int], float]:
        out = {}
        for i, row in obj.items():
            for j, val in row.items():
                out[(int(i), int(j))] = float(val)
        return out

    return SystemConfig(
        N=int(data["N"]),
        K=int(data["K"]),
        lam=tuple(float(x) for x in data["lambda"]),
        mu_ride=road_map(data["mu_ride"]),
        p=road_map(data["p"]),
        alpha=float(data["alpha"]),
        w=float(data["w"]),
        r=int(data["r"]),
        M=int(data["M"]),
        Z=int(data["Z"]),
        beta=tuple(float(x) for x in data["beta"]),
        mu_remove=tuple(float(x) for x in data["mu_remove"]),
        mu_return=tuple(float(x) for x in data["mu_return"]),
    )


def config_to_dict(config: SystemConfig) -> dict:
    def road_obj(mapping) -> dict:
        out: dict[str, dict[str, float]] = {}
        for (i, j), val in sorted(mapping.items()):
            out.setdefault(str(i), {})[str(j)] = val
        return out

    return {
        "N": config.N,
        "K": config.K,
        "lambda": list(config.lam),
        "mu_ride": road_obj(config.mu_ride),
        "p": road_obj(config.p),
        "alpha": config.alpha,
        "w": config.w,
        "r": config.r,
        "M": config.M,
        "Z": config.Z,
        "beta": list(config.beta),
        "mu_remove": list(config.mu_remove),
        "mu_return": list(config.mu_return),
    }


def load_config(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(config: SystemConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
