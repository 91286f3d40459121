"""
JSON run configuration: parsing with field-level errors, defaults, the
hypothesis gate, normalized emission, and initial-condition presets.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

import gch_model.coefficient_lib as cl
from gch_model.gch_model import (
    CoefficientDomainError,
    CoefficientFamily,
    CoefficientSpec,
    CoefficientValidation,
    NonlinearityVariant,
    require_hypotheses,
)
from grid_ops.grid_ops import BCClass, Field, Grid1D, GridSizingError, make_grid
from integrator.integrator import SchemeConfig, SchemeConfigError, SchemeKind

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str, line: int | None = None):
        where = f"line {line}" if line is not None else field_path
        super().__init__(f"{where}: {message}")
        self.field_path = field_path
        self.line = line


class InitialPreset(enum.StrEnum):
    SCALED_SINE = "scaled_sine"
    RANDOM_SMOOTH = "random_smooth"


_PRESET_PARAMS = {
    InitialPreset.SCALED_SINE: {"A": 0.5, "k": 1},
    InitialPreset.RANDOM_SMOOTH: {"seed": None, "modes": 8, "amplitude": 0.5},
}


@dataclass(frozen=True)
class InitialCondition:
    preset: InitialPreset = InitialPreset.SCALED_SINE
    params: dict[str, Any] = field(
        default_factory=lambda: dict(_PRESET_PARAMS[InitialPreset.SCALED_SINE])
    )

    def __post_init__(self):
        object.__setattr__(self, "preset", InitialPreset(self.preset))

    def build(self, grid: Grid1D) -> Field:
        x = grid.nodes
        if self.preset is InitialPreset.SCALED_SINE:
            values = float(self.params["A"]) * np.sin(int(self.params["k"]) * np.pi * x)
            return Field(grid, values, BCClass.PINNED)

        rng = np.random.default_rng(int(self.params["seed"]))
        modes = int(self.params["modes"])
        coefficients = rng.standard_normal(modes)
        k = np.arange(1, modes + 1)
        values = (coefficients / k**2) @ np.sin(np.pi * np.outer(k, x))
        peak = np.max(np.abs(values))
        if peak > 0:
            values = values * (float(self.params["amplitude"]) / peak)
        return Field(grid, values, BCClass.PINNED)

    def to_dict(self) -> dict[str, Any]:
        return {"preset": str(self.preset), **self.params}


@dataclass(frozen=True)
class RunConfig:
    n_interior: int = 127
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    cadence: int = 100
    t_final: float = 1.0
    coefficient: CoefficientSpec = field(
        default_factory=lambda: CoefficientSpec(
            CoefficientFamily.RATIONAL_BUMP, {"base": 2.0, "gain": 1.0}, 2.0, 3.0
        )
    )
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN
    initial_condition: InitialCondition = field(default_factory=InitialCondition)
    output_dir: str | None = None
    run_name: str = "run"
    override_hypotheses: bool = False
    seed: int = 0
    validation_range: tuple[float, float] = (-5.0, 5.0)
    validation_samples: int = 1001
    mass_balance_window: int = 100

    @property
    def grid(self) -> Grid1D:
        return make_grid(self.n_interior)

    def validate_hypotheses(self) -> CoefficientValidation:
        return require_hypotheses(
            self.coefficient,
            self.validation_range,
            self.validation_samples,
            override=self.override_hypotheses,
        )


_TOP_KEYS = {
    "grid", "scheme", "T_final", "coefficient", "variant", "initial_condition",
    "output_dir", "run_name", "override_hypotheses", "seed", "validation_range",
    "validation_samples", "mass_balance_window",
}
_SCHEME_KEYS = {"scheme", "dt", "stabilization_S", "cadence", "max_iters", "nonlinear_tol"}
_COEFFICIENT_KEYS = {"family", "params", "declared_M1", "declared_M2"}


def _table(raw: Any, path: str) -> dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected a table, got {type(raw).__name__}")
    return raw


def _reject_unknown(table: dict, allowed: set[str], path: str):
    unknown = sorted(set(table) - allowed)
    if unknown:
        prefix = f"{path}." if path else ""
        raise ConfigError(f"{prefix}{unknown[0]}", f"unknown key(s) {unknown}")


def _number(table: dict, key: str, path: str, default: Any, integer: bool = False) -> Any:
    value = table.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return value


def _boolean(table: dict, key: str, path: str, default: bool) -> bool:
    value = table.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _choice(value: Any, enum_type: type[enum.StrEnum], path: str):
    try:
        return enum_type(value)
    except ValueError:
        raise ConfigError(path, f"expected one of {[str(e) for e in enum_type]}, got {value!r}") from None


def _parse_scheme(raw: Any) -> tuple[SchemeConfig, int]:
    table = _table(raw, "scheme")
    _reject_unknown(table, _SCHEME_KEYS, "scheme")
    cadence = _number(table, "cadence", "scheme.cadence", 100, integer=True)
    if cadence < 1:
        raise ConfigError("scheme.cadence", f"must be at least 1, got {cadence}")
    try:
        cfg = SchemeConfig(
            scheme=_choice(table.get("scheme", "imex_stabilized"), SchemeKind, "scheme.scheme"),
            dt=_number(table, "dt", "scheme.dt", 1e-5),
            stabilization_s=_number(table, "stabilization_S", "scheme.stabilization_S", None),
            max_iters=_number(table, "max_iters", "scheme.max_iters", 1, integer=True),
            nonlinear_tol=_number(table, "nonlinear_tol", "scheme.nonlinear_tol", 1e-10),
        )
    except SchemeConfigError as e:
        raise ConfigError("scheme", str(e)) from e
    return cfg, cadence


def _default_bounds(family: CoefficientFamily, params: dict[str, Any]) -> tuple[float, float]:
    match family:
        case CoefficientFamily.CONSTANT:
            return float(params["M"]), float(params["M"])
        case CoefficientFamily.KHAIN_SANDER:
            q = float(params["q"])
            if not 0.0 < q < 1.0:
                raise CoefficientDomainError(f"Adhesion parameter q={q} must lie in (0, 1)")
            m = cl.khain_sander_diffusion(q)
            return m, m
        case CoefficientFamily.RATIONAL_BUMP:
            ends = (float(params["base"]), float(params["base"]) + float(params["gain"]))
            return min(ends), max(ends)
        case CoefficientFamily.TABULATED:
            return float(min(params["a"])), float(max(params["a"]))


def parse_coefficient(raw: Any, path: str = "coefficient") -> CoefficientSpec:
    table = _table(raw, path)
    if not table:
        return RunConfig().coefficient
    _reject_unknown(table, _COEFFICIENT_KEYS, path)
    if "family" not in table:
        raise ConfigError(f"{path}.family", "missing")
    family = _choice(table["family"], CoefficientFamily, f"{path}.family")
    params = _table(table.get("params"), f"{path}.params")

    try:
        default_m1, default_m2 = _default_bounds(family, params)
    except KeyError as e:
        raise ConfigError(f"{path}.params.{e.args[0]}", "missing") from None
    except CoefficientDomainError as e:
        raise ConfigError(f"{path}.params.q", str(e)) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}.params", str(e)) from e

    try:
        return CoefficientSpec(
            family,
            params,
            _number(table, "declared_M1", f"{path}.declared_M1", default_m1),
            _number(table, "declared_M2", f"{path}.declared_M2", default_m2),
        )
    except CoefficientDomainError as e:
        raise ConfigError(f"{path}.params.q", str(e)) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}.params", str(e)) from e


def _parse_initial_condition(raw: Any, seed: int) -> InitialCondition:
    table = dict(_table(raw, "initial_condition"))
    preset = _choice(table.pop("preset", "scaled_sine"), InitialPreset, "initial_condition.preset")
    defaults = _PRESET_PARAMS[preset]
    _reject_unknown(table, set(defaults), "initial_condition")

    params = {}
    for key, default in defaults.items():
        path = f"initial_condition.{key}"
        integer = key in ("k", "modes", "seed")
        params[key] = _number(table, key, path, seed if key == "seed" else default, integer=integer)
    if "k" in params and params["k"] < 1:
        raise ConfigError("initial_condition.k", f"mode must be at least 1, got {params['k']}")
    if "modes" in params and params["modes"] < 1:
        raise ConfigError("initial_condition.modes", f"must be at least 1, got {params['modes']}")
    return InitialCondition(preset, params)


def config_from_dict(raw: dict[str, Any], gate: bool = True) -> RunConfig:
    """
    Build a validated RunConfig from a parsed JSON document.

    Parameters:
        raw (dict): Parsed configuration; missing keys take their defaults.
        gate (bool): Reject coefficients failing the well-posedness hypotheses
            unless the config sets override_hypotheses.

    Raises:
        ConfigError: Naming the offending field.
        HypothesisViolationError: Naming the violated hypotheses.
    """
    raw = _table(raw, "<root>")
    _reject_unknown(raw, _TOP_KEYS, "")

    grid_table = _table(raw.get("grid"), "grid")
    _reject_unknown(grid_table, {"n_interior"}, "grid")
    n_interior = _number(grid_table, "n_interior", "grid.n_interior", 127, integer=True)
    try:
        make_grid(n_interior)
    except GridSizingError as e:
        raise ConfigError("grid.n_interior", str(e)) from e

    scheme, cadence = _parse_scheme(raw.get("scheme"))
    t_final = _number(raw, "T_final", "T_final", 1.0)
    if t_final <= 0:
        raise ConfigError("T_final", f"must be positive, got {t_final}")

    seed = _number(raw, "seed", "seed", 0, integer=True)
    if seed < 0:
        raise ConfigError("seed", f"must be nonnegative, got {seed}")

    validation_range = raw.get("validation_range", [-5.0, 5.0])
    if (
        not isinstance(validation_range, list)
        or len(validation_range) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in validation_range)
        or not validation_range[0] < validation_range[1]
    ):
        raise ConfigError("validation_range", f"expected [lo, hi] with lo < hi, got {validation_range!r}")
    samples = _number(raw, "validation_samples", "validation_samples", 1001, integer=True)
    if samples < 101:
        raise ConfigError("validation_samples", f"must be at least 101, got {samples}")
    window = _number(raw, "mass_balance_window", "mass_balance_window", 100, integer=True)
    if window < 0:
        raise ConfigError("mass_balance_window", f"must be nonnegative, got {window}")

    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir", f"expected a path string, got {output_dir!r}")
    run_name = raw.get("run_name", "run")
    if not isinstance(run_name, str) or not run_name or "/" in run_name:
        raise ConfigError("run_name", f"expected a plain directory name, got {run_name!r}")

    cfg = RunConfig(
        n_interior=n_interior,
        scheme=scheme,
        cadence=cadence,
        t_final=t_final,
        coefficient=parse_coefficient(raw.get("coefficient")),
        variant=_choice(raw.get("variant", "plain"), NonlinearityVariant, "variant"),
        initial_condition=_parse_initial_condition(raw.get("initial_condition"), seed),
        output_dir=output_dir,
        run_name=run_name,
        override_hypotheses=_boolean(raw, "override_hypotheses", "override_hypotheses", False),
        seed=seed,
        validation_range=(float(validation_range[0]), float(validation_range[1])),
        validation_samples=samples,
        mass_balance_window=window,
    )
    try:
        cfg.scheme.resolved_stabilization(cfg.coefficient)
    except SchemeConfigError as e:
        raise ConfigError("scheme.stabilization_S", str(e)) from e
    if gate:
        cfg.validate_hypotheses()
    return cfg


def parse_config(path: Path, overrides: dict[str, Any] | None = None, gate: bool = True) -> RunConfig:
    """
    Read a JSON run configuration.

    Parameters:
        path (Path): Config file.
        overrides (dict | None): Top-level keys replacing the file's values (CLI flags).
        gate (bool): Apply the hypothesis gate.

    Raises:
        ConfigError: On a missing file, malformed JSON (with line) or a bad field.
        HypothesisViolationError: When the coefficient fails validation without override.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), e.msg, line=e.lineno) from e
    if overrides:
        raw = {**_table(raw, "<root>"), **overrides}
    return config_from_dict(raw, gate=gate)


def emit_config(cfg: RunConfig) -> dict[str, Any]:
    """Normalized JSON form; config_from_dict(emit_config(cfg)) reproduces cfg."""
    return {
        "grid": {"n_interior": cfg.n_interior},
        "scheme": {
            "scheme": str(cfg.scheme.scheme),
            "dt": cfg.scheme.dt,
            "stabilization_S": cfg.scheme.resolved_stabilization(cfg.coefficient),
            "cadence": cfg.cadence,
            "max_iters": cfg.scheme.max_iters,
            "nonlinear_tol": cfg.scheme.nonlinear_tol,
        },
        "T_final": cfg.t_final,
        "coefficient": cfg.coefficient.to_dict(),
        "variant": str(cfg.variant),
        "initial_condition": cfg.initial_condition.to_dict(),
        "output_dir": cfg.output_dir,
        "run_name": cfg.run_name,
        "override_hypotheses": cfg.override_hypotheses,
        "seed": cfg.seed,
        "validation_range": list(cfg.validation_range),
        "validation_samples": cfg.validation_samples,
        "mass_balance_window": cfg.mass_balance_window,
    }
