"""Command-line interface: single solves, parameter sweeps and simulation.

Subcommands:
  solve      fixed point -> product form -> measures for one configuration.
  sweep      repeat a solve over a parameter grid or (M, Z) pairs.
  simulate   run the discrete-event oracle.

Reports are CSV files plus matplotlib figures written next to them.  Every
flag has an environment-variable override named BIKEQNET_<FLAG> (for
example BIKEQNET_EPSILON); the flag wins when both are given.

Exit codes: 0 success, 2 invalid configuration, 3 fixed point did not
converge, 4 state space above the cap, 1 anything else.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import dataclass

from .measures import MarginalTables, MeasureReport, compute_measures, decomposition_tables
from .model import (
    DEFAULT_STATE_CAP,
    StateSpaceCapExceeded,
    SystemConfig,
    Topology,
    config_from_dict,
    config_to_dict,
    load_config,
    validate_config,
)
from .product_form import build_product_form, marginal_tables
from .routing import FixedPointError, FixedPointTrace, RelativeRates, solve_nodes, solve_relative_rates
from .simulator import SimConfig, simulate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_STATE_CAP = 4

ENV_PREFIX = "BIKEQNET_"


@dataclass
class SolveResult:
    config: SystemConfig
    topology: Topology
    rates: RelativeRates
    trace: FixedPointTrace
    tables: MarginalTables
    report: MeasureReport
    mode: str  # "product-form" or "decomposition"
    state_count: int


def run_solve(
    config: SystemConfig,
    topology: Topology | None = None,
    epsilon: float = 1e-10,
    max_iterations: int = 10000,
    anchor: str = "e1",
    max_states: int = DEFAULT_STATE_CAP,
    node_marginal_only: bool = False,
) -> SolveResult:
    """Full analytic pipeline for one configuration.

    With ``node_marginal_only`` the product-form normalization over the
    joint state space is skipped and measures come from the per-node laws
    alone, labelled as a decomposition approximation.
    """
    if topology is None:
        topology = Topology.from_config(config)
    rates, trace = solve_relative_rates(
        config, topology, epsilon=epsilon, max_iterations=max_iterations,
        anchor=anchor, keep_rate_history=True,
    )
    regions, shop = solve_nodes(config, topology, rates)
    if node_marginal_only:
        tables = decomposition_tables(config, topology, rates, regions, shop)
        mode = "decomposition"
        state_count = 0
    else:
        pf = build_product_form(config, topology, rates, regions, shop, cap=max_states)
        tables = marginal_tables(pf)
        mode = "product-form"
        state_count = pf.state_count
    report = compute_measures(tables, config)
    return SolveResult(config, topology, rates, trace, tables, report, mode, state_count)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _csv(rows: list[dict], columns: list[str]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    return "\n".join(lines) + "\n"


def _write_rates(result: SolveResult, out_dir: str) -> None:
    rows = [{"node": label, "rate": value} for label, value in result.rates.labelled()]
    _atomic_write(os.path.join(out_dir, "relative_rates.csv"), _csv(rows, ["node", "rate"]))


def _write_trace(result: SolveResult, out_dir: str) -> None:
    import io

    buf = io.StringIO()
    result.trace.write_csv(buf, result.topology)
    _atomic_write(os.path.join(out_dir, "trace.csv"), buf.getvalue())


def _write_measures(result: SolveResult, out_dir: str) -> None:
    row = dict(result.report.as_row())
    row["mode"] = result.mode
    row["residual"] = result.trace.residuals[-1]
    row["iterations"] = result.trace.iterations
    columns = [
        "eta", "xi", "F_A", "gamma1", "gamma2", "E_unusable", "E_usable",
        "audit_gap", "mode", "residual", "iterations",
    ]
    _atomic_write(os.path.join(out_dir, "measures.csv"), _csv([row], columns))
    audit_rows = [
        {"category": name, "expected_count": value}
        for name, value in result.report.audit.items()
    ]
    _atomic_write(
        os.path.join(out_dir, "audit.csv"), _csv(audit_rows, ["category", "expected_count"])
    )


def _write_marginals(tables: MarginalTables, out_dir: str, prefix: str = "") -> None:
    config, topology = tables.config, tables.topology
    rows = []
    for i in range(config.N):
        table = tables.region[i]
        for g in range(table.shape[0]):
            for b in range(table.shape[1]):
                if table[g, b] > 0:
                    rows.append({"region": i + 1, "good": g, "bad": b, "probability": table[g, b]})
    _atomic_write(
        os.path.join(out_dir, f"{prefix}region_marginals.csv"),
        _csv(rows, ["region", "good", "bad", "probability"]),
    )
    rows = []
    for g in range(tables.shop.shape[0]):
        for b in range(tables.shop.shape[1]):
            if tables.shop[g, b] > 0:
                rows.append({"good": g, "bad": b, "probability": tables.shop[g, b]})
    _atomic_write(
        os.path.join(out_dir, f"{prefix}shop_marginals.csv"),
        _csv(rows, ["good", "bad", "probability"]),
    )
    rows = []
    for pos, (i, j) in enumerate(topology.ride_roads):
        for m, p in enumerate(tables.ride[pos]):
            if p > 0:
                rows.append({"road": f"{i}->{j}", "count": m, "probability": p})
    for i in range(1, config.N + 1):
        for k, p in enumerate(tables.remove[i - 1]):
            if p > 0:
                rows.append({"road": f"{i}->0", "count": k * config.M, "probability": p})
    for pos, i in enumerate(topology.return_regions):
        zi = config.z_batch[i - 1]
        for l, p in enumerate(tables.ret[pos]):
            if p > 0:
                rows.append({"road": f"0->{i}", "count": l * zi, "probability": p})
    _atomic_write(
        os.path.join(out_dir, f"{prefix}road_marginals.csv"),
        _csv(rows, ["road", "count", "probability"]),
    )


def _plot_convergence(trace: FixedPointTrace, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(range(1, trace.iterations + 1), trace.residuals)
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title("fixed-point convergence")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_sweep(rows: list[dict], xkey: str, out_dir: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [row for row in rows if not row.get("error")]
    if not ok:
        return
    xs = list(range(len(ok)))
    labels = [str(row[xkey]) for row in ok]
    for measure in ("eta", "xi", "F_A"):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, [row[measure] for row in ok], marker="o")
        if f"sim_{measure}" in ok[0]:
            ax.errorbar(
                xs,
                [row[f"sim_{measure}"] for row in ok],
                yerr=[3 * row[f"sim_{measure}_se"] for row in ok],
                fmt="s",
                capsize=3,
                label="simulation (3 s.e.)",
            )
            ax.legend()
        ax.set_xticks(xs, labels)
        ax.set_xlabel(xkey)
        ax.set_ylabel(measure)
        ax.set_title(f"{measure} vs {xkey}")
        fig.tight_layout()
        name = measure.lower().replace("_", "")
        fig.savefig(os.path.join(out_dir, f"sweep_{name}.png"), dpi=120)
        plt.close(fig)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_solve(args) -> int:
    config = load_config(args.config)
    topology = Topology.from_config(config)
    violations = validate_config(config, topology)
    if violations:
        for v in violations:
            print(f"invalid configuration: {v}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    try:
        result = run_solve(
            config,
            topology,
            epsilon=args.epsilon,
            max_iterations=args.max_iterations,
            anchor=args.anchor,
            max_states=args.max_states,
            node_marginal_only=args.node_marginal_only,
        )
    except FixedPointError as exc:
        print(f"fixed point did not converge: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except StateSpaceCapExceeded as exc:
        print(f"{exc}\nhint: pass --node-marginal-only or raise --max-states", file=sys.stderr)
        return EXIT_STATE_CAP

    os.makedirs(args.out, exist_ok=True)
    _write_rates(result, args.out)
    _write_trace(result, args.out)
    _write_measures(result, args.out)
    if args.marginals:
        _write_marginals(result.tables, args.out)
    _plot_convergence(result.trace, os.path.join(args.out, "convergence.png"))
    meta = {
        "config": config_to_dict(config),
        "mode": result.mode,
        "anchor": args.anchor,
        "epsilon": args.epsilon,
        "iterations": result.trace.iterations,
        "residual": result.trace.residuals[-1],
        "state_count": result.state_count,
    }
    _atomic_write(
        os.path.join(args.out, "run_meta.json"),
        json.dumps(meta, indent=2, sort_keys=True) + "\n",
    )
    print(
        f"converged in {result.trace.iterations} iterations "
        f"(residual {result.trace.residuals[-1]:.3e}, mode {result.mode}); "
        f"eta={result.report.eta:.6g} xi={result.report.xi:.6g} F_A={result.report.f_a:.6g}"
    )
    return EXIT_OK


def _parse_sweep(expr: str) -> tuple[str, list[float]]:
    name, _, values = expr.partition("=")
    if not values:
        raise ValueError(f"--sweep expects PARAM=v1,v2,..., got {expr!r}")
    return name.strip(), [float(v) for v in values.split(",")]


def _parse_pairs(expr: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in expr.split(";"):
        chunk = chunk.strip().strip("()")
        if not chunk:
            continue
        m_str, z_str = chunk.split(",")
        pairs.append((int(m_str), int(z_str)))
    if not pairs:
        raise ValueError(f"--pairs expects '(M,Z);(M,Z);...', got {expr!r}")
    return pairs


def _apply_override(config: SystemConfig, name: str, value: float) -> SystemConfig:
    scalars = {"alpha", "w", "K", "r", "M", "Z"}
    if name in scalars:
        cast = int if name in {"K", "r", "M", "Z"} else float
        return config.replace(**{name: cast(value)})
    raise ValueError(f"unsupported sweep parameter {name!r} (one of {sorted(scalars)})")


def _solve_point(payload: dict) -> dict:
    """One sweep point; runs in a worker process, returns a CSV row."""
    config = config_from_dict(payload["config"])
    row: dict = dict(payload["labels"])
    started = time.perf_counter()
    try:
        violations = validate_config(config)
        if violations:
            raise ValueError("; ".join(violations))
        result = run_solve(
            config,
            epsilon=payload["epsilon"],
            max_iterations=payload["max_iterations"],
            anchor=payload["anchor"],
            max_states=payload["max_states"],
            node_marginal_only=payload["node_marginal_only"],
        )
        row.update(result.report.as_row())
        row["residual"] = result.trace.residuals[-1]
        row["mode"] = result.mode
        if payload["simulate"]:
            sim = SimConfig(**payload["simulate"])
            est = simulate(config, sim=sim)
            for name in ("eta", "xi", "F_A"):
                row[f"sim_{name}"] = est.measures[name]
                row[f"sim_{name}_se"] = est.stderr[name]
        row["error"] = ""
    except Exception as exc:  # a failed point is recorded, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = time.perf_counter() - started
    return row


def _cmd_sweep(args) -> int:
    base = load_config(args.config)
    violations = validate_config(base)
    if violations and not args.pairs:
        for v in violations:
            print(f"invalid configuration: {v}", file=sys.stderr)
        return EXIT_INVALID_CONFIG

    points: list[dict] = []
    if args.sweep:
        name, values = _parse_sweep(args.sweep)
        xkey = name
        for value in values:
            config = _apply_override(base, name, value)
            points.append({"labels": {name: value}, "config": config_to_dict(config)})
    elif args.pairs:
        xkey = "MZ"
        for m, z in _parse_pairs(args.pairs):
            config = base.replace(M=m, Z=z)
            points.append({"labels": {"M": m, "Z": z, "MZ": f"({m},{z})"}, "config": config_to_dict(config)})
    else:
        print("sweep needs --sweep or --pairs", file=sys.stderr)
        return EXIT_ERROR

    sim_payload = None
    if args.simulate:
        sim_payload = {
            "horizon": args.horizon,
            "warmup": args.warmup,
            "seed": args.seed,
            "replications": args.replications,
        }
    for point in points:
        point.update(
            epsilon=args.epsilon,
            max_iterations=args.max_iterations,
            anchor=args.anchor,
            max_states=args.max_states,
            node_marginal_only=args.node_marginal_only,
            simulate=sim_payload,
        )

    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_solve_point, points))
    else:
        rows = [_solve_point(point) for point in points]

    os.makedirs(args.out, exist_ok=True)
    label_keys = list(points[0]["labels"].keys())
    columns = label_keys + [
        "eta", "xi", "F_A", "gamma1", "gamma2", "E_unusable", "E_usable",
        "audit_gap", "residual", "mode",
    ]
    if sim_payload:
        columns += ["sim_eta", "sim_eta_se", "sim_xi", "sim_xi_se", "sim_F_A", "sim_F_A_se"]
    columns += ["wall_time", "error"]
    _atomic_write(os.path.join(args.out, "sweep.csv"), _csv(rows, columns))
    _plot_sweep(rows, xkey, args.out)
    failures = sum(1 for row in rows if row["error"])
    print(f"sweep finished: {len(rows) - failures}/{len(rows)} points solved, output in {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    topology = Topology.from_config(config)
    violations = validate_config(config, topology)
    if violations:
        for v in violations:
            print(f"invalid configuration: {v}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    sim = SimConfig(
        horizon=args.horizon, warmup=args.warmup, seed=args.seed, replications=args.replications
    )
    est = simulate(config, topology, sim)
    os.makedirs(args.out, exist_ok=True)
    rows = [
        {"measure": name, "mean": est.measures[name], "stderr": est.stderr[name]}
        for name in est.measures
    ]
    _atomic_write(
        os.path.join(args.out, "sim_measures.csv"), _csv(rows, ["measure", "mean", "stderr"])
    )
    _write_marginals(est.tables, args.out, prefix="sim_")
    lost = ",".join(f"{x:.6g}" for x in est.lost_rate)
    print(
        f"simulated {est.replications} replications, {est.events} events; "
        f"eta={est.measures['eta']:.6g} (se {est.stderr['eta']:.2g}); "
        f"lost-user rate per region [{lost}]"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _env_default(name: str, fallback, cast):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    return cast(raw)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to a JSON configuration")
    parser.add_argument(
        "--out", default=_env_default("OUT", "out", str), help="output directory"
    )


def _add_solver_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--epsilon", type=float, default=_env_default("EPSILON", 1e-10, float),
        help="fixed-point stop tolerance",
    )
    parser.add_argument(
        "--max-iterations", type=int, default=_env_default("MAX_ITERATIONS", 10000, int)
    )
    parser.add_argument(
        "--anchor", choices=("e1", "total"), default=_env_default("ANCHOR", "e1", str),
        help="normalization anchor of the relative rates",
    )
    parser.add_argument(
        "--max-states", type=int, default=_env_default("MAX_STATES", DEFAULT_STATE_CAP, int),
        help="refuse product-form enumeration above this state count",
    )
    parser.add_argument(
        "--node-marginal-only", action="store_true",
        help="skip the joint normalization; report decomposition approximations",
    )


def _add_sim_options(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--horizon", type=float, required=required, default=None)
    parser.add_argument("--warmup", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=_env_default("SEED", 0, int))
    parser.add_argument("--replications", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bikeqnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one configuration")
    _add_common(p_solve)
    _add_solver_options(p_solve)
    p_solve.add_argument("--marginals", action="store_true", help="write marginal tables")
    p_solve.set_defaults(func=_cmd_solve)

    p_sweep = sub.add_parser("sweep", help="sweep a parameter or (M,Z) pairs")
    _add_common(p_sweep)
    _add_solver_options(p_sweep)
    p_sweep.add_argument("--sweep", help="PARAM=v1,v2,... (alpha, w, K, r, M, Z)")
    p_sweep.add_argument("--pairs", help="'(M,Z);(M,Z);...' batch-size pairs")
    p_sweep.add_argument(
        "--workers", type=int, default=_env_default("WORKERS", 1, int),
        help="parallel sweep points",
    )
    p_sweep.add_argument("--simulate", action="store_true", help="run the oracle per point")
    _add_sim_options(p_sweep, required=False)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_sim = sub.add_parser("simulate", help="run the discrete-event oracle")
    _add_common(p_sim)
    _add_sim_options(p_sim, required=True)
    p_sim.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "simulate", False) and args.horizon is None:
        print("--simulate requires --horizon", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
