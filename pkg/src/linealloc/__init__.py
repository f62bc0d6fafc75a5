"""Allocation of users to capacitated servers on a line.

Submodules: :mod:`distributions`, :mod:`policies`, :mod:`numerics`,
:mod:`analytic`, :mod:`simulate`, :mod:`cli`.
"""

from .analytic import (
    BulkMM1Model,
    GrpsModel,
    HetCapModel,
    PrgsModel,
    bulk_mm1_expected_distance,
    grps_expected_distance,
    heavy_traffic_estimate,
    hetcap_expected_distance,
    prgs_expected_distance,
    uncapacitated_expected_distance,
)
from .distributions import (
    Deterministic,
    Exponential,
    HyperExponential,
    Uniform,
    exceptional,
    h2_from_cv,
    parse_distribution,
)
from .errors import InfeasibleInstanceError, NumericalError, RootMultiplicityError, UnstableModelError
from .policies import SpatialInstance, gale_shapley, mtr, optimal_dp, ugs
from .simulate import SimConfig, run

__version__ = "0.1.0"
