"""Stationary analysis of dockless bike-sharing fleets with unusable bikes.

The fleet circulates as a closed network: parking regions, ride roads,
batch removal of unusable bikes to a maintenance shop and batch
redistribution of repaired bikes back out.  Regions and the shop are
level-structured Markov chains solved by an RG-factorization; the relative
arrival rates solve a nonlinear routing fixed point; the joint stationary
law is a product over node factors; and a discrete-event simulator provides
the independent oracle.
"""

from .markov_core import (
    BlockGenerator,
    NotIrreducibleError,
    RGFactors,
    SingularBlockError,
    SingularChainError,
    censored_corner,
    censored_level0,
    reconstruct,
    rg_factorize,
    stationary_vector,
)
from .measures import MarginalTables, MeasureReport, compute_measures, decomposition_tables
from .model import (
    DEFAULT_STATE_CAP,
    NetworkState,
    StateSpaceCapExceeded,
    SystemConfig,
    Topology,
    count_states,
    enumerate_states,
    in_state_space,
    load_config,
    save_config,
    validate_config,
)
from .product_form import (
    ProductFormSolution,
    build_product_form,
    joint_probability,
    marginal,
    marginal_slice_sum,
    marginal_tables,
    normalization_constant,
)
from .region_chain import RegionSolution, build_region_generator, solve_region
from .routing import (
    FixedPointError,
    FixedPointTrace,
    RelativeRates,
    build_routing_matrix,
    fixed_point_residual,
    solve_nodes,
    solve_relative_rates,
)
from .shop_chain import ShopSolution, build_shop_generator, level_supports, solve_shop
from .simulator import (
    SimConfig,
    SimEstimates,
    build_exact_generator,
    exact_stationary,
    reachable_states,
    simulate,
    transitions,
)

__version__ = "0.1.0"

__all__ = [
    "BlockGenerator",
    "DEFAULT_STATE_CAP",
    "FixedPointError",
    "FixedPointTrace",
    "MarginalTables",
    "MeasureReport",
    "NetworkState",
    "NotIrreducibleError",
    "ProductFormSolution",
    "RGFactors",
    "RegionSolution",
    "RelativeRates",
    "ShopSolution",
    "SimConfig",
    "SimEstimates",
    "SingularBlockError",
    "SingularChainError",
    "StateSpaceCapExceeded",
    "SystemConfig",
    "Topology",
    "build_exact_generator",
    "build_product_form",
    "build_region_generator",
    "build_routing_matrix",
    "build_shop_generator",
    "censored_corner",
    "censored_level0",
    "compute_measures",
    "count_states",
    "decomposition_tables",
    "enumerate_states",
    "exact_stationary",
    "fixed_point_residual",
    "in_state_space",
    "joint_probability",
    "level_supports",
    "load_config",
    "marginal",
    "marginal_slice_sum",
    "marginal_tables",
    "normalization_constant",
    "reachable_states",
    "reconstruct",
    "rg_factorize",
    "save_config",
    "simulate",
    "solve_nodes",
    "solve_region",
    "solve_relative_rates",
    "solve_shop",
    "stationary_vector",
    "transitions",
    "validate_config",
]
