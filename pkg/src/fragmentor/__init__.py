"""Fragmentation chains on partition closures and their recombination dynamics.

The package computes the exact law of the continuous-time partition
fragmentation chain three independent ways (per-tree closed form,
uniformized semigroup, Monte Carlo), solves the finite-alphabet
recombination dynamics, and characterizes the long-time behaviour
conditioned on survival.
"""

__version__ = "0.1.0"

from .errors import CapacityError, ConsistencyError, ValidationError
from .law import (
    LawReport,
    Trajectory,
    TreeLawTerm,
    classify_trajectory,
    law_distribution,
    semigroup_distribution,
    simulate,
    tree_law,
    uniformized_matrix,
    uniformized_row,
)
from .longtime import (
    DecayReport,
    QProcess,
    QuasiLimitReport,
    conditional_distribution,
    decay_certificate,
    hit_transform,
    qprocess,
    quasi_limit,
)
from .partitions import (
    FragStep,
    SetPartition,
    SiteSet,
    fragmentations,
    join,
    refines,
    restrict,
)
from .process import (
    HoldTable,
    ProcessModel,
    RateFamily,
    closure,
    generic_rates_check,
    hold_probability,
    marginal_model,
    marginal_rate,
    partition_hold_probability,
    rate_family_from_obj,
    rate_family_to_obj,
    split_rate,
)
from .recomb import (
    AlphabetSpec,
    Measure,
    SolutionReport,
    approx_solution,
    marginal,
    measure_from_obj,
    measure_to_obj,
    ode_oracle,
    product,
    recombine,
    solve,
    stationary_measure,
    tv_norm,
)
from .trees import (
    BareTree,
    FragTree,
    TreeNode,
    augment,
    count_trees,
    enumerate_trees,
    erase,
    tree_to_obj,
)

__all__ = [
    "AlphabetSpec",
    "BareTree",
    "CapacityError",
    "ConsistencyError",
    "DecayReport",
    "FragStep",
    "FragTree",
    "HoldTable",
    "LawReport",
    "Measure",
    "ProcessModel",
    "QProcess",
    "QuasiLimitReport",
    "RateFamily",
    "SetPartition",
    "SiteSet",
    "SolutionReport",
    "Trajectory",
    "TreeLawTerm",
    "TreeNode",
    "ValidationError",
    "approx_solution",
    "augment",
    "classify_trajectory",
    "closure",
    "conditional_distribution",
    "count_trees",
    "decay_certificate",
    "enumerate_trees",
    "erase",
    "fragmentations",
    "generic_rates_check",
    "hit_transform",
    "hold_probability",
    "join",
    "law_distribution",
    "marginal",
    "marginal_model",
    "marginal_rate",
    "measure_from_obj",
    "measure_to_obj",
    "ode_oracle",
    "partition_hold_probability",
    "product",
    "qprocess",
    "quasi_limit",
    "rate_family_from_obj",
    "rate_family_to_obj",
    "recombine",
    "refines",
    "restrict",
    "semigroup_distribution",
    "simulate",
    "solve",
    "split_rate",
    "stationary_measure",
    "tree_law",
    "tree_to_obj",
    "tv_norm",
    "uniformized_matrix",
    "uniformized_row",
]
