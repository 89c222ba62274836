"""Exceptions raised by wienerlab."""


class WienerLabError(Exception): ...


class ScenarioError(WienerLabError):
    """Invalid scenario configuration. The CLI exits with status 2."""


class GridMismatchError(WienerLabError, ValueError):
    """Two objects living on different time grids were combined."""


class InsufficientHistoryError(WienerLabError, ValueError): ...


class DriftModelError(WienerLabError, ValueError):
    """Bad drift parameters, NaN drift values or unsupported derivative order."""


class RawDriftError(WienerLabError):
    """Filtering requires an observation-form drift."""


class SingularOperatorError(WienerLabError): ...


class NumericalCollapseError(WienerLabError):
    """Particle weights collapsed. The CLI exits with status 3."""
