"""
Manufactured-solution verification.

The decaying mode u_e = A exp(-lambda t) sin(k pi x) satisfies the pinned
conditions exactly. Adding the forcing S = d/dt u_e - rhs(u_e) makes it a
solution of the forced problem, so the distance to u_e at the final time
measures the discretization error alone.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from gch_model.gch_model import (
    CoefficientFamily,
    CoefficientSpec,
    NonlinearityVariant,
    rhs_divergence_form,
)
from grid_ops.grid_ops import BCClass, Field, Grid1D, NormKind, make_grid, norm
from integrator.integrator import IntegratorError, SchemeConfig, SchemeKind, run

logger = logging.getLogger(__name__)

DEGENERATE_ERROR = 1e-13


class ConvergenceStudyError(RuntimeError):
    def __init__(self, message: str, resolution: tuple[int, float] | None = None):
        super().__init__(message)
        self.resolution = resolution


class ManufacturedForm(enum.StrEnum):
    DECAYING_MODE = "decaying_mode"


class StudyKind(enum.StrEnum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


class ForcingKind(enum.StrEnum):
    DISCRETE = "discrete"
    SYMBOLIC = "symbolic"


@dataclass(frozen=True)
class ManufacturedSolution:
    amplitude: float = 1.0
    decay_rate: float = 1.0
    mode: int = 1
    form: ManufacturedForm = ManufacturedForm.DECAYING_MODE

    def __post_init__(self):
        object.__setattr__(self, "form", ManufacturedForm(self.form))
        if int(self.mode) != self.mode or self.mode < 1:
            raise ValueError(f"Manufactured mode k={self.mode} must be an integer >= 1")

    def _envelope(self, t: float) -> float:
        return self.amplitude * math.exp(-self.decay_rate * t)

    def exact(self, t: float, grid: Grid1D) -> Field:
        values = self._envelope(t) * np.sin(self.mode * np.pi * grid.nodes)
        return Field(grid, values, BCClass.PINNED)

    def time_derivative(self, t: float, grid: Grid1D) -> Field:
        return -self.decay_rate * self.exact(t, grid)

    def to_dict(self) -> dict[str, Any]:
        return {
            "form": str(self.form),
            "A": self.amplitude,
            "lambda": self.decay_rate,
            "k": self.mode,
        }


def manufactured_forcing(
    ms: ManufacturedSolution,
    spec: CoefficientSpec,
    variant: NonlinearityVariant,
    t: float,
    grid: Grid1D,
) -> Field:
    """S = d/dt u_e - rhs_h(u_e), with the discrete spatial operator applied to samples of u_e."""
    u_e = ms.exact(t, grid)
    values = ms.time_derivative(t, grid).values - rhs_divergence_form(u_e, spec, variant).values
    return Field(grid, values, BCClass.FREE)


def symbolic_forcing(
    ms: ManufacturedSolution,
    spec: CoefficientSpec,
    variant: NonlinearityVariant,
    t: float,
    grid: Grid1D,
) -> Field:
    """
    Closed-form forcing for constant coefficients:
    S = -lambda u + a (k pi)^4 u - D^2 f(u) + g(u), with sin^3 = (3 sin - sin 3)/4.
    """
    if spec.family not in (CoefficientFamily.CONSTANT, CoefficientFamily.KHAIN_SANDER):
        raise ValueError(f"Symbolic forcing needs a constant coefficient, got '{spec.family}'")

    a = float(spec.coefficient.a(np.zeros(1))[0])
    kpi = ms.mode * np.pi
    e = ms._envelope(t)
    s1 = np.sin(kpi * grid.nodes)
    s3 = np.sin(3.0 * kpi * grid.nodes)
    u = e * s1

    # D^2 sin^3 = (-3 (k pi)^2 sin + 9 (k pi)^2 sin 3) / 4
    d2_cubic = e**3 * kpi**2 * (-3.0 * s1 + 9.0 * s3) / 4.0
    d2_f = d2_cubic if variant is NonlinearityVariant.PLAIN else d2_cubic + kpi**2 * u

    values = -ms.decay_rate * u + a * kpi**4 * u - d2_f + variant.g(u)
    return Field(grid, values, BCClass.FREE)


@dataclass
class ConvergenceReport:
    kind: StudyKind
    resolutions: list[tuple[int, float]]
    errors: list[float]
    fitted_spatial_order: float | None = None
    fitted_temporal_order: float | None = None
    fit_residual: float | None = None
    degenerate: bool = False
    settings: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "resolutions": [list(r) for r in self.resolutions],
            "errors": self.errors,
            "fitted_spatial_order": self.fitted_spatial_order,
            "fitted_temporal_order": self.fitted_temporal_order,
            "fit_residual": self.fit_residual,
            "degenerate": self.degenerate,
            "settings": self.settings,
        }


def _final_error(
    ms: ManufacturedSolution,
    spec: CoefficientSpec,
    variant: NonlinearityVariant,
    n_interior: int,
    dt: float,
    t_final: float,
    scheme: SchemeKind,
    forcing_kind: ForcingKind,
) -> float:
    grid = make_grid(n_interior)
    build = symbolic_forcing if forcing_kind is ForcingKind.SYMBOLIC else manufactured_forcing

    def forcing(t: float) -> Field:
        return build(ms, spec, variant, t, grid)

    cfg = SchemeConfig(scheme=scheme, dt=dt)
    n_steps = max(1, math.ceil(t_final / dt - 1e-9))
    traj = run(ms.exact(0.0, grid), t_final, cfg, spec, variant, cadence=n_steps, forcing=forcing)
    if traj.failed:
        raise ConvergenceStudyError(
            f"Forced run blew up at n={n_interior}, dt={dt:g}: {traj.failure.message}",
            (n_interior, dt),
        )
    final = traj.final
    return norm(final.u - ms.exact(final.t, grid), NormKind.L2)


def _error_task(args) -> float:
    return _final_error(*args)


def convergence_study(
    ms: ManufacturedSolution,
    spec: CoefficientSpec,
    variant: NonlinearityVariant,
    resolutions: list[tuple[int, float]],
    t_final: float,
    kind: StudyKind,
    scheme: SchemeKind = SchemeKind.IMEX_STABILIZED,
    forcing_kind: ForcingKind | None = None,
    workers: int = 1,
) -> ConvergenceReport:
    """
    Run the forced problem from u_e(0) at each (n_interior, dt) and fit the
    order of the final-time L2 error.

    A spatial study fits against h and defaults to symbolic forcing; a temporal
    study fits against dt with the discrete forcing. Resolutions run in a
    process pool when workers > 1.

    Raises:
        ValueError: On fewer than 3 resolutions.
        ConvergenceStudyError: When a resolution fails; names that resolution.
    """
    kind = StudyKind(kind)
    if len(resolutions) < 3:
        raise ValueError(f"A convergence study needs at least 3 resolutions, got {len(resolutions)}")
    if forcing_kind is None:
        forcing_kind = ForcingKind.SYMBOLIC if kind is StudyKind.SPATIAL else ForcingKind.DISCRETE
    forcing_kind = ForcingKind(forcing_kind)

    tasks = [
        (ms, spec, variant, int(n), float(dt), t_final, SchemeKind(scheme), forcing_kind)
        for n, dt in resolutions
    ]
    logger.info(f"{kind} study over {len(tasks)} resolutions ({forcing_kind} forcing)")
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                errors = list(pool.map(_error_task, tasks))
        else:
            errors = [_error_task(task) for task in tasks]
    except IntegratorError as e:
        logger.error(f"Convergence study failed: {e}")
        raise ConvergenceStudyError(str(e)) from e

    report = ConvergenceReport(
        kind=kind,
        resolutions=[(int(n), float(dt)) for n, dt in resolutions],
        errors=[float(e) for e in errors],
        settings={
            "manufactured_solution": ms.to_dict(),
            "coefficient": spec.to_dict(),
            "variant": str(variant),
            "T_final": t_final,
            "scheme": str(scheme),
            "forcing": str(forcing_kind),
        },
    )
    if max(errors) <= DEGENERATE_ERROR:
        report.degenerate = True
        logger.warning("All study errors are at roundoff level; orders not fitted")
        return report

    if kind is StudyKind.SPATIAL:
        steps = np.array([1.0 / (n + 1) for n, _ in report.resolutions])
    else:
        steps = np.array([dt for _, dt in report.resolutions])
    log_x, log_e = np.log(steps), np.log(np.maximum(report.errors, np.finfo(float).tiny))
    slope, intercept = np.polyfit(log_x, log_e, 1)
    report.fit_residual = float(np.sqrt(np.mean((log_e - (slope * log_x + intercept)) ** 2)))
    if kind is StudyKind.SPATIAL:
        report.fitted_spatial_order = float(slope)
    else:
        report.fitted_temporal_order = float(slope)
    logger.info(f"Fitted {kind} order {slope:.3f} (fit residual {report.fit_residual:.2e})")
    return report
