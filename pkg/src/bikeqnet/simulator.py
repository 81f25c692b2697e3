"""Discrete-event simulation of the physical fleet dynamics.

This is the independent statistical oracle for the analytic pipeline.  It
implements the raw dynamics directly: Poisson user arrivals that rent a
usable bike or are lost, exponential rides, per-bike failures of usable
parked bikes, instantaneous batch triggers (a region's M-th unusable bike
departs for the shop at once; the shop's Z-th repaired bike triggers an
immediate dispatch split into per-region groups), exponential truck travel
and a min(n, r) * w repair clock.

The same event catalog drives two consumers: the step-by-step simulation
and :func:`build_exact_generator`, which unrolls every event over the
reachable state closure into an explicit CTMC generator.  Sharing the
catalog keeps the two from drifting apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .measures import MarginalTables, MeasureReport, compute_measures
from .model import NetworkState, SystemConfig, Topology

SHOP_GOOD = 0
SHOP_BAD = 1


@dataclass(frozen=True)
class SimConfig:
    """Run lengths and randomness for the simulation."""

    horizon: float
    warmup: float = 0.0
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("need at least one replication")


@dataclass
class SimEstimates:
    """Replication-averaged occupancy estimates and measures.

    ``measures`` maps a measure name to its mean; ``stderr`` holds the
    standard error of that mean across replications.  ``tables`` are the
    pooled time-average marginal tables.
    """

    tables: MarginalTables
    measures: dict
    stderr: dict
    per_replication: dict
    lost_rate: np.ndarray
    events: int
    replications: int

    def report(self) -> MeasureReport:
        return compute_measures(self.tables, self.tables.config)


class _Layout:
    """Flat integer layout of a network state, shared by all consumers."""

    def __init__(self, config: SystemConfig, topology: Topology):
        N = config.N
        self.config = config
        self.topology = topology
        self.region_good = 2
        self.region_bad = 2 + N
        self.ride = 2 + 2 * N
        self.remove = self.ride + len(topology.ride_roads)
        self.ret = self.remove + N
        self.size = self.ret + len(topology.return_regions)

    def to_flat(self, state: NetworkState) -> list[int]:
        return (
            [state.shop_good, state.shop_bad]
            + list(state.region_good)
            + list(state.region_bad)
            + list(state.ride)
            + list(state.remove)
            + list(state.ret)
        )

    def to_state(self, flat) -> NetworkState:
        N = self.config.N
        return NetworkState(
            shop_good=flat[SHOP_GOOD],
            shop_bad=flat[SHOP_BAD],
            region_good=tuple(flat[self.region_good:self.region_good + N]),
            region_bad=tuple(flat[self.region_bad:self.region_bad + N]),
            ride=tuple(flat[self.ride:self.remove]),
            remove=tuple(flat[self.remove:self.ret]),
            ret=tuple(flat[self.ret:self.size]),
        )


def _event_catalog(config: SystemConfig, topology: Topology, layout: _Layout) -> list[tuple]:
    """Every event type with its static data.

    Entries: (code, *data).  Rates depend on the current flat state; the
    apply step mutates it in place, including the instantaneous batch
    triggers that follow a failure or a repair.
    """
    events: list[tuple] = []
    dispatch = [
        (layout.ret + pos, config.z_batch[i - 1])
        for pos, i in enumerate(topology.return_regions)
    ]
    for pos, (i, j) in enumerate(topology.ride_roads):
        rate = config.lam[i - 1] * config.p[(i, j)]
        if rate > 0:
            events.append(("rent", layout.region_good + i - 1, layout.ride + pos, rate))
    for pos, (i, j) in enumerate(topology.ride_roads):
        events.append(
            ("ride_done", layout.ride + pos, layout.region_good + j - 1, config.mu_ride[(i, j)])
        )
    if config.alpha > 0:
        for i in range(1, config.N + 1):
            events.append(
                (
                    "fail",
                    layout.region_good + i - 1,
                    layout.region_bad + i - 1,
                    layout.remove + i - 1,
                    config.alpha,
                )
            )
    for i in range(1, config.N + 1):
        events.append(("truck_in", layout.remove + i - 1, config.mu_remove[i - 1], config.M))
    events.append(("repair", config.r, config.w, config.Z, tuple(dispatch)))
    for pos, i in enumerate(topology.return_regions):
        events.append(
            ("truck_out", layout.ret + pos, layout.region_good + i - 1,
             config.mu_return[i - 1], config.z_batch[i - 1])
        )
    return events


def _event_rate(event: tuple, flat, M: int) -> float:
    code = event[0]
    if code == "rent":
        return event[3] if flat[event[1]] > 0 else 0.0
    if code == "ride_done":
        return flat[event[1]] * event[3]
    if code == "fail":
        return flat[event[1]] * event[4]
    if code == "truck_in":
        return (flat[event[1]] // event[3]) * event[2]
    if code == "repair":
        return min(flat[SHOP_BAD], event[1]) * event[2]
    if code == "truck_out":
        return (flat[event[1]] // event[4]) * event[3]
    raise ValueError(code)


def _event_apply(event: tuple, flat, M: int) -> None:
    code = event[0]
    if code == "rent":
        flat[event[1]] -= 1
        flat[event[2]] += 1
    elif code == "ride_done":
        flat[event[1]] -= 1
        flat[event[2]] += 1
    elif code == "fail":
        flat[event[1]] -= 1
        flat[event[2]] += 1
        if flat[event[2]] == M:
            flat[event[2]] = 0
            flat[event[3]] += M
    elif code == "truck_in":
        flat[event[1]] -= M
        flat[SHOP_BAD] += M
    elif code == "repair":
        flat[SHOP_BAD] -= 1
        flat[SHOP_GOOD] += 1
        if flat[SHOP_GOOD] == event[3]:
            flat[SHOP_GOOD] = 0
            for slot, zi in event[4]:
                flat[slot] += zi
    elif code == "truck_out":
        flat[event[1]] -= event[4]
        flat[event[2]] += event[4]
    else:
        raise ValueError(code)


def _pending_trigger(flat, layout: _Layout, config: SystemConfig) -> bool:
    if flat[SHOP_GOOD] >= config.Z:
        return True
    return any(
        flat[layout.region_bad + i] >= config.M for i in range(config.N)
    )


def _settle(flat, layout: _Layout, config: SystemConfig) -> list[int] | None:
    """Fire every pending batch trigger; None if a road lattice overflows."""
    flat = list(flat)
    topology = layout.topology
    for i in range(config.N):
        slot = layout.region_bad + i
        while flat[slot] >= config.M:
            flat[slot] -= config.M
            flat[layout.remove + i] += config.M
    while flat[SHOP_GOOD] >= config.Z:
        flat[SHOP_GOOD] -= config.Z
        for pos, i in enumerate(topology.return_regions):
            flat[layout.ret + pos] += config.z_batch[i - 1]
    bound = config.phi // config.psi
    for pos, i in enumerate(topology.return_regions):
        if flat[layout.ret + pos] // config.z_batch[i - 1] > bound:
            return None
    return flat


_SETTLE_RATE = 1.0


def transitions(
    state: NetworkState, config: SystemConfig, topology: Topology
) -> list[tuple[float, NetworkState]]:
    """All state-changing transitions out of ``state`` with their rates.

    Lost-user arrivals do not change the state and are not listed.

    States with a pending batch trigger (a region already holding M
    unusable bikes, or the shop already holding Z repaired ones) are part
    of the state space but are never occupied under the instantaneous
    triggers; they get a single draining transition to their settled
    equivalent (or to the canonical initial state when settling would
    overflow a road lattice) so that they are transient in the explicit
    generator.  The draining rate is nominal: those states carry no
    stationary mass.
    """
    layout = _Layout(config, topology)
    flat = layout.to_flat(state)
    if _pending_trigger(flat, layout, config):
        settled = _settle(flat, layout, config)
        if settled is None:
            settled = _initial_flat(config, layout)
        return [(_SETTLE_RATE, layout.to_state(settled))]
    events = _event_catalog(config, topology, layout)
    out = []
    for event in events:
        rate = _event_rate(event, flat, config.M)
        if rate > 0:
            nxt = list(flat)
            _event_apply(event, nxt, config.M)
            out.append((rate, layout.to_state(nxt)))
    return out


# ---------------------------------------------------------------------------
# Event-driven simulation
# ---------------------------------------------------------------------------

def _initial_flat(config: SystemConfig, layout: _Layout) -> list[int]:
    # All bikes start usable at region 1; the warmup window absorbs the bias.
    flat = [0] * layout.size
    flat[layout.region_good] = config.K
    return flat


def simulate(
    config: SystemConfig, topology: Topology | None = None, sim: SimConfig | None = None
) -> SimEstimates:
    """Time-average occupancy over [warmup, horizon], across replications.

    Replications use independent child streams spawned from the seed, so a
    given (config, sim) pair always produces identical estimates.  Bike
    conservation is asserted after every event.
    """
    if topology is None:
        topology = Topology.from_config(config)
    if sim is None:
        raise ValueError("a SimConfig is required")
    layout = _Layout(config, topology)
    events = _event_catalog(config, topology, layout)
    window = sim.horizon - sim.warmup
    n_regions = config.N
    n_rides = len(topology.ride_roads)
    K, M = config.K, config.M
    z_batch = config.z_batch

    streams = np.random.SeedSequence(sim.seed).spawn(sim.replications)
    rep_tables: list[MarginalTables] = []
    rep_lost = np.zeros((sim.replications, n_regions))
    total_events = 0

    for rep in range(sim.replications):
        rng = np.random.default_rng(streams[rep])
        flat = _initial_flat(config, layout)
        tables = MarginalTables.zeros(config, topology)
        lost = np.zeros(n_regions)
        t = 0.0
        rates = [0.0] * len(events)
        while t < sim.horizon:
            total = 0.0
            for pos, event in enumerate(events):
                rate = _event_rate(event, flat, M)
                rates[pos] = rate
                total += rate
            if total <= 0.0:
                t_next = sim.horizon
            else:
                t_next = t + rng.exponential(1.0 / total)
            dt = min(t_next, sim.horizon) - max(t, sim.warmup)
            if dt > 0.0:
                tables.shop[flat[SHOP_GOOD], flat[SHOP_BAD]] += dt
                for i in range(n_regions):
                    tables.region[i][
                        flat[layout.region_good + i], flat[layout.region_bad + i]
                    ] += dt
                for pos in range(n_rides):
                    tables.ride[pos][flat[layout.ride + pos]] += dt
                for i in range(n_regions):
                    tables.remove[i][flat[layout.remove + i] // M] += dt
                for pos, i in enumerate(topology.return_regions):
                    tables.ret[pos][flat[layout.ret + pos] // z_batch[i - 1]] += dt
                for i in range(n_regions):
                    if flat[layout.region_good + i] == 0:
                        lost[i] += config.lam[i] * dt
            if total <= 0.0 or t_next >= sim.horizon:
                break
            pick = rng.random() * total
            acc = 0.0
            chosen = len(events) - 1
            for pos, rate in enumerate(rates):
                acc += rate
                if pick < acc:
                    chosen = pos
                    break
            _event_apply(events[chosen], flat, M)
            total_events += 1
            if sum(flat) != K:
                raise AssertionError(
                    f"bike conservation violated after event {events[chosen][0]}: "
                    f"total {sum(flat)} != {K}"
                )
            t = t_next

        for group in (tables.region, tables.ride, tables.remove, tables.ret):
            for arr in group:
                arr /= window
        tables.shop /= window
        rep_tables.append(tables)
        rep_lost[rep] = lost / window

    pooled = MarginalTables.zeros(config, topology)
    pooled.shop = sum(t.shop for t in rep_tables) / sim.replications
    pooled.region = [
        sum(t.region[i] for t in rep_tables) / sim.replications for i in range(n_regions)
    ]
    pooled.ride = [
        sum(t.ride[p] for t in rep_tables) / sim.replications for p in range(n_rides)
    ]
    pooled.remove = [
        sum(t.remove[i] for t in rep_tables) / sim.replications for i in range(n_regions)
    ]
    pooled.ret = [
        sum(t.ret[p] for t in rep_tables) / sim.replications
        for p in range(len(topology.return_regions))
    ]

    names = ("eta", "xi", "F_A", "gamma1", "gamma2", "E_unusable", "E_usable")
    per_rep = {name: np.zeros(sim.replications) for name in names}
    for rep, tables in enumerate(rep_tables):
        row = compute_measures(tables, config).as_row()
        for name in names:
            per_rep[name][rep] = row[name]
    measures = {name: float(per_rep[name].mean()) for name in names}
    if sim.replications > 1:
        stderr = {
            name: float(per_rep[name].std(ddof=1) / math.sqrt(sim.replications))
            for name in names
        }
    else:
        stderr = {name: float("nan") for name in names}

    return SimEstimates(
        tables=pooled,
        measures=measures,
        stderr=stderr,
        per_replication=per_rep,
        lost_rate=rep_lost.mean(axis=0),
        events=total_events,
        replications=sim.replications,
    )


# ---------------------------------------------------------------------------
# Exact network chain (dense oracle)
# ---------------------------------------------------------------------------

def reachable_states(
    config: SystemConfig, topology: Topology | None = None, cap: int = 200000
) -> list[NetworkState]:
    """Closure of the physical dynamics from the all-usable initial state.

    Note the closure is not a subset of the enumerable state space: the
    per-road return lattice bound (at most phi/psi batches in flight)
    assumes the groups of one dispatch travel together, but with
    independent group clocks a slow road can accumulate groups from more
    dispatches than that whenever its share Z_i is smaller than Z.
    """
    if topology is None:
        topology = Topology.from_config(config)
    layout = _Layout(config, topology)
    start = layout.to_state(_initial_flat(config, layout))
    seen = {start}
    frontier = [start]
    order = [start]
    while frontier:
        state = frontier.pop()
        for _, nxt in transitions(state, config, topology):
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                frontier.append(nxt)
                if len(order) > cap:
                    raise RuntimeError(
                        f"reachable closure exceeds {cap} states; raise the cap"
                    )
    order.sort(key=lambda s: (s.shop_good, s.shop_bad, s.region_good, s.region_bad,
                              s.ride, s.remove, s.ret))
    return order


def build_exact_generator(
    config: SystemConfig, topology: Topology | None = None, cap: int = 200000
) -> tuple[list[NetworkState], sp.csr_matrix]:
    """Explicit CTMC generator of the physical dynamics.

    Rows follow the sorted reachable closure from the initial state, so the
    matrix is exactly the chain the event-driven simulation walks.
    """
    if topology is None:
        topology = Topology.from_config(config)
    states = reachable_states(config, topology, cap=cap)
    index = {state: pos for pos, state in enumerate(states)}
    rows, cols, vals = [], [], []
    for pos, state in enumerate(states):
        outflow = 0.0
        for rate, nxt in transitions(state, config, topology):
            rows.append(pos)
            cols.append(index[nxt])
            vals.append(rate)
            outflow += rate
        rows.append(pos)
        cols.append(pos)
        vals.append(-outflow)
    n = len(states)
    gen = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return states, gen


def exact_stationary(
    config: SystemConfig, topology: Topology | None = None, cap: int = 200000
) -> tuple[list[NetworkState], np.ndarray]:
    """Stationary distribution of the exact network chain.

    Finds the unique closed communicating class and solves the balance
    equations densely on it; transient states get probability zero.
    """
    if topology is None:
        topology = Topology.from_config(config)
    states, gen = build_exact_generator(config, topology, cap=cap)
    n = len(states)
    adjacency = sp.csr_matrix(
        (np.ones(len(gen.data)), gen.indices, gen.indptr), shape=(n, n)
    )
    n_comp, labels = connected_components(adjacency, directed=True, connection="strong")
    has_exit = np.zeros(n_comp, dtype=bool)
    coo = gen.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if v > 0 and labels[i] != labels[j]:
            has_exit[labels[i]] = True
    sinks = [c for c in range(n_comp) if not has_exit[c]]
    if len(sinks) != 1:
        raise RuntimeError(
            f"expected one closed communicating class, found {len(sinks)}; "
            "the configuration is not irreducible under the physical dynamics"
        )
    members = np.flatnonzero(labels == sinks[0])
    sub = gen[members][:, members].toarray()
    system = sub.T.copy()
    system[0, :] = 1.0
    rhs = np.zeros(len(members))
    rhs[0] = 1.0
    pi_sub = np.linalg.solve(system, rhs)
    pi_sub = np.where(pi_sub < 0, 0.0, pi_sub)
    pi_sub /= pi_sub.sum()
    pi = np.zeros(n)
    pi[members] = pi_sub
    return states, pi
