"""Scenario files: one JSON (or TOML) document describing a whole experiment.

Example:

    {
      "schema_version": 1,
      "name": "channel",
      "model": {"kind": "gauss_channel", "parameter": {"law": "gaussian", "sigma": 1.0}},
      "grid": {"n_steps": 1024},
      "lambda_grid": {"start": 0.0, "stop": 1.0, "count": 5},
      "engine": {"kind": "quadrature", "nodes": 64},
      "n_paths": 4096,
      "seed": 7,
      "outputs": {"directory": "out", "formats": ["csv", "json"]}
    }

Unknown keys are rejected at every level. The only environment variable read
is WIENERLAB_OUTPUT_DIR, which overrides `outputs.directory`.
"""

from dataclasses import dataclass, field, fields
import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from . import _constants
from ._dist_info import OUTPUT_DIR_ENV, SCENARIO_SCHEMA_VERSION
from .drifts import MODEL_KINDS, DriftModel, LambdaParametrization, RandomParameter
from .errors import DriftModelError, ScenarioError
from .filtering import ConditioningEngine, ParticleEngine, QuadratureEngine
from .wiener import TimeGrid

# Identity checks run by `verify`, in report order.
CHECK_NAMES = (
    "divergence_ito",
    "anticipative_divergence",
    "resolvent",
    "quasi_nilpotency",
    "carleman",
    "novikov",
    "entropy",
    "accounting",
    "conjugate_identity",
    "innovation",
    "density",
    "derivatives",
    "information",
    "roundtrip",
    "homotopy",
)

# Quantity groups computed by `sweep`. The first ones are the default.
SWEEP_GROUPS = (
    "girsanov",
    "entropy",
    "errors",
    "gap",
    "information",
    "immse",
    "derivatives",
    "continuity",
    "tau",
    "beta",
    "convexity",
    "information_curvature",
)
DEFAULT_SWEEP_GROUPS = SWEEP_GROUPS[:8]

DEFAULT_VERIFY_LAMBDAS = (0.25, 0.5, 1.0)

# Keyword options accepted by each model kind, on top of the common keys.
MODEL_OPTIONS = {
    "zero": (),
    "deterministic": ("profile", "scale"),
    "gauss_channel": (),
    "markov": ("function",),
    "path_functional": ("function",),
}

_MODEL_KEYS = {"kind", "parametrization", "exponent", "parameter"}


def _check_keys(data: Any, allowed, where: str) -> dict:
    if not isinstance(data, dict):
        raise ScenarioError(f"'{where}' must be a table, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ScenarioError(f"Unknown key(s) {unknown} in '{where}'")
    return data


def _positive_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ScenarioError(f"'{where}' must be a positive integer, got {value!r}")
    return value


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"'{where}' must be a number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    parametrization: str = "linear"
    exponent: int = 1
    parameter: RandomParameter | None = None
    options: dict = field(default_factory=dict)

    def build(self) -> DriftModel:
        cls = MODEL_KINDS[self.kind]
        kwargs = dict(self.options)
        if self.parameter is not None:
            kwargs["parameter"] = self.parameter
        try:
            kwargs["parametrization"] = LambdaParametrization(
                self.parametrization, self.exponent
            )
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"Invalid model block: {e}") from e

    @staticmethod
    def parse(data: Any) -> "ModelSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise ScenarioError("'model' must be a table with a 'kind'")
        kind = data["kind"]
        if kind not in MODEL_KINDS:
            raise ScenarioError(
                f"Unknown model kind '{kind}', expected one of {sorted(MODEL_KINDS)}"
            )
        _check_keys(data, _MODEL_KEYS | set(MODEL_OPTIONS[kind]), "model")
        parameter = None
        if "parameter" in data:
            raw = _check_keys(
                data["parameter"],
                [f.name for f in fields(RandomParameter)],
                "model.parameter",
            )
            try:
                parameter = RandomParameter(**raw)
            except (DriftModelError, TypeError) as e:
                raise ScenarioError(f"Invalid 'model.parameter': {e}") from e
        exponent = data.get("exponent", 1)
        if isinstance(exponent, bool) or not isinstance(exponent, int):
            raise ScenarioError(f"'model.exponent' must be an integer, got {exponent!r}")
        return ModelSpec(
            kind=kind,
            parametrization=data.get("parametrization", "linear"),
            exponent=exponent,
            parameter=parameter,
            options={k: data[k] for k in MODEL_OPTIONS[kind] if k in data},
        )


@dataclass(frozen=True)
class GridSpec:
    n_steps: int

    def build(self) -> TimeGrid:
        return TimeGrid(self.n_steps)


@dataclass(frozen=True)
class LambdaGridSpec:
    start: float
    stop: float
    count: int

    def __post_init__(self):
        if self.count > 1 and not self.stop > self.start:
            raise ScenarioError(
                f"lambda_grid must be increasing, got start={self.start} stop={self.stop}"
            )

    @property
    def values(self) -> list[float]:
        if self.count == 1:
            return [self.start]
        return [float(v) for v in np.linspace(self.start, self.stop, self.count)]


@dataclass(frozen=True)
class EngineSpec:
    kind: str = "quadrature"
    nodes: int = 64
    particles: int = 512

    def build(self) -> ConditioningEngine:
        if self.kind == "particle":
            return ParticleEngine(self.particles)
        return QuadratureEngine(self.nodes)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "wienerlab-out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class MatrixCheckSpec:
    """Grid and sample size of the checks that assemble full Jacobians."""

    n_steps: int = 64
    n_paths: int = 16


@dataclass(frozen=True)
class ToleranceSpec:
    divergence_ito: float = _constants.TOL_DIVERGENCE_ITO
    resolvent_residual: float = _constants.TOL_RESOLVENT_RESIDUAL
    accounting: float = _constants.TOL_ACCOUNTING
    conjugate_identity: float = _constants.TOL_CONJUGATE_IDENTITY
    entropy_agreement: float = _constants.TOL_ENTROPY_AGREEMENT
    density_deterministic: float = _constants.TOL_DENSITY_DETERMINISTIC
    density_gauss: float = _constants.TOL_DENSITY_GAUSS
    innovation_variance: float = _constants.TOL_INNOVATION_VARIANCE
    innovation_lag1: float = _constants.TOL_INNOVATION_LAG1
    derivative_first: float = _constants.TOL_DERIVATIVE_FIRST
    derivative_second: float = _constants.TOL_DERIVATIVE_SECOND
    oracle_relative: float = _constants.TOL_ORACLE_RELATIVE
    roundtrip: float = _constants.TOL_ROUNDTRIP
    se_multiplier: float = _constants.SE_MULTIPLIER


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: ModelSpec
    grid: GridSpec
    lambda_grid: LambdaGridSpec
    engine: EngineSpec
    n_paths: int
    seed: int
    outputs: OutputSpec = field(default_factory=OutputSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    checks: tuple[str, ...] = CHECK_NAMES
    verify_lambdas: tuple[float, ...] = DEFAULT_VERIFY_LAMBDAS
    matrix_checks: MatrixCheckSpec = field(default_factory=MatrixCheckSpec)
    refinement_levels: tuple[int, ...] = ()
    sweep: tuple[str, ...] = DEFAULT_SWEEP_GROUPS
    source: str | None = None

    def build_model(self) -> DriftModel:
        return self.model.build()

    def output_dir(self, override: str | None = None) -> Path:
        """--out, then WIENERLAB_OUTPUT_DIR, then outputs.directory."""
        if override:
            return Path(override)
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        return Path(self.outputs.directory)

    def levels(self) -> tuple[int, ...]:
        """Grid levels of the inversion refinement study."""
        if self.refinement_levels:
            return self.refinement_levels
        n = self.grid.n_steps
        return tuple(k for k in (n // 16, n // 4, n) if k >= 1)


_TOP_KEYS = {
    "schema_version",
    "name",
    "model",
    "grid",
    "lambda_grid",
    "engine",
    "n_paths",
    "seed",
    "outputs",
    "tolerances",
    "checks",
    "verify_lambdas",
    "matrix_checks",
    "refinement_levels",
    "sweep",
}


def parse_scenario(data: Any, source: str | None = None) -> ScenarioConfig:
    """Validates a decoded scenario document."""
    data = _check_keys(data, _TOP_KEYS, "scenario")
    for key in ("model", "grid", "lambda_grid", "n_paths", "seed"):
        if key not in data:
            raise ScenarioError(f"Missing required key '{key}'")

    version = data.get("schema_version", SCENARIO_SCHEMA_VERSION)
    if version != SCENARIO_SCHEMA_VERSION:
        raise ScenarioError(
            f"Unsupported schema_version {version!r}, expected {SCENARIO_SCHEMA_VERSION}"
        )

    grid = _check_keys(data["grid"], {"n_steps"}, "grid")
    lam = _check_keys(data["lambda_grid"], {"start", "stop", "count"}, "lambda_grid")
    engine = _check_keys(data.get("engine", {}), {"kind", "nodes", "particles"}, "engine")
    outputs = _check_keys(data.get("outputs", {}), {"directory", "formats"}, "outputs")
    tolerances = _check_keys(
        data.get("tolerances", {}), [f.name for f in fields(ToleranceSpec)], "tolerances"
    )
    matrix = _check_keys(data.get("matrix_checks", {}), {"n_steps", "n_paths"}, "matrix_checks")

    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ScenarioError(f"'seed' must be an unsigned 64-bit integer, got {seed!r}")

    engine_kind = engine.get("kind", "quadrature")
    if engine_kind not in ("quadrature", "particle"):
        raise ScenarioError(f"Unknown engine kind '{engine_kind}'")

    formats = tuple(outputs.get("formats", ("csv", "json")))
    bad = sorted(set(formats) - {"csv", "json"})
    if bad or not formats:
        raise ScenarioError(f"'outputs.formats' must be a non-empty subset of [csv, json], got {list(formats)}")

    checks = tuple(data.get("checks", CHECK_NAMES))
    unknown_checks = sorted(set(checks) - set(CHECK_NAMES))
    if unknown_checks:
        raise ScenarioError(f"Unknown check(s) {unknown_checks}")

    sweep = tuple(data.get("sweep", DEFAULT_SWEEP_GROUPS))
    unknown_groups = sorted(set(sweep) - set(SWEEP_GROUPS))
    if unknown_groups:
        raise ScenarioError(f"Unknown sweep group(s) {unknown_groups}")

    levels = tuple(
        _positive_int(v, "refinement_levels") for v in data.get("refinement_levels", ())
    )

    config = ScenarioConfig(
        name=str(data.get("name", "scenario")),
        model=ModelSpec.parse(data["model"]),
        grid=GridSpec(_positive_int(grid.get("n_steps"), "grid.n_steps")),
        lambda_grid=LambdaGridSpec(
            start=_number(lam.get("start", 0.0), "lambda_grid.start"),
            stop=_number(lam.get("stop", lam.get("start", 0.0)), "lambda_grid.stop"),
            count=_positive_int(lam.get("count", 1), "lambda_grid.count"),
        ),
        engine=EngineSpec(
            kind=engine_kind,
            nodes=_positive_int(engine.get("nodes", 64), "engine.nodes"),
            particles=_positive_int(engine.get("particles", 512), "engine.particles"),
        ),
        n_paths=_positive_int(data["n_paths"], "n_paths"),
        seed=seed,
        outputs=OutputSpec(
            directory=str(outputs.get("directory", OutputSpec.directory)), formats=formats
        ),
        tolerances=ToleranceSpec(
            **{k: _number(v, f"tolerances.{k}") for k, v in tolerances.items()}
        ),
        checks=checks,
        verify_lambdas=tuple(
            _number(v, "verify_lambdas")
            for v in data.get("verify_lambdas", DEFAULT_VERIFY_LAMBDAS)
        ),
        matrix_checks=MatrixCheckSpec(
            n_steps=_positive_int(matrix.get("n_steps", 64), "matrix_checks.n_steps"),
            n_paths=_positive_int(matrix.get("n_paths", 16), "matrix_checks.n_paths"),
        ),
        refinement_levels=levels,
        sweep=sweep,
        source=source,
    )
    config.build_model()
    return config


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        if path.suffix == ".toml":
            # Python version compatibility for TOML parsing
            try:
                import tomllib
            except ModuleNotFoundError:
                # Python <= 3.10 compatibility (requires install of 'tomli' package)
                import tomli as tomllib

            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ScenarioError(f"Scenario file not found: {path}") from e
    except ValueError as e:
        # json.JSONDecodeError and tomllib.TOMLDecodeError are both ValueErrors.
        raise ScenarioError(f"Cannot parse {path}: {e}") from e
    return parse_scenario(data, source=str(path))
