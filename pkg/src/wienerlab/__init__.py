"""Numerical laboratory for shifted Wiener measures.

The library side is importable without the CLI:

    from wienerlab import ChannelDrift, TimeGrid, RngStream
    from wienerlab.entropy import mutual_information
"""

from ._dist_info import __version__
from .drifts import (
    ChannelDrift,
    DeterministicDrift,
    DriftModel,
    LambdaParametrization,
    MarkovDrift,
    PathFunctionalDrift,
    RandomParameter,
    ZeroDrift,
)
from .errors import (
    DriftModelError,
    GridMismatchError,
    InsufficientHistoryError,
    NumericalCollapseError,
    RawDriftError,
    ScenarioError,
    SingularOperatorError,
    WienerLabError,
)
from .montecarlo import SimulationPlan
from .scenario import ScenarioConfig, load_scenario, parse_scenario
from .stats import Estimate
from .wiener import CameronMartinPath, RngStream, TimeGrid, WienerPath

__all__ = [
    "__version__",
    "CameronMartinPath",
    "ChannelDrift",
    "DeterministicDrift",
    "DriftModel",
    "DriftModelError",
    "Estimate",
    "GridMismatchError",
    "InsufficientHistoryError",
    "LambdaParametrization",
    "MarkovDrift",
    "NumericalCollapseError",
    "PathFunctionalDrift",
    "RandomParameter",
    "RawDriftError",
    "RngStream",
    "ScenarioConfig",
    "ScenarioError",
    "SimulationPlan",
    "SingularOperatorError",
    "TimeGrid",
    "WienerLabError",
    "WienerPath",
    "ZeroDrift",
    "load_scenario",
    "parse_scenario",
]
