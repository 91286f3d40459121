"""
Time stepping for the pinned generalized Cahn-Hilliard problem.

Two first-order schemes share one flux form: every step can be written as

    u^{m+1} - u^m = -dt L B_eff + dt (source)

with L the Dirichlet three-point Laplacian and B_eff an effective bracket
that vanishes at the endpoints, so the discrete mass balance telescopes to
the boundary fluxes B_eff[0]/h and -B_eff[-1]/h stored on the new State.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy import linalg, sparse

from gch_model.gch_model import (
    CoefficientSpec,
    NonlinearityVariant,
    divergence_bracket,
    frozen_coefficients,
    require_hypotheses,
)
from grid_ops.grid_ops import (
    BCClass,
    Field,
    Grid1D,
    NonFiniteFieldError,
    NormKind,
    apply_derivative,
    apply_inverse_neg_laplacian,
    inner_product,
    norm,
)

logger = logging.getLogger(__name__)

Forcing = Callable[[float], Field]
Recorder = Callable[["State", "State | None"], Any]


class IntegratorError(RuntimeError):
    def __init__(self, message: str, step_index: int | None = None, t: float | None = None):
        super().__init__(message)
        self.step_index = step_index
        self.t = t

    def __str__(self):
        base = super().__str__()
        if self.step_index is None:
            return base
        return f"{base} (step {self.step_index}, t={self.t:.6g})"


class NonFiniteStepError(IntegratorError):
    pass


class LinearSolveFailure(IntegratorError):
    pass


class NoConvergence(IntegratorError):
    pass


class SchemeConfigError(ValueError):
    pass


class SchemeKind(enum.StrEnum):
    IMEX_STABILIZED = "imex_stabilized"
    LINEARIZED_IMPLICIT = "linearized_implicit"


@dataclass(frozen=True)
class SchemeConfig:
    scheme: SchemeKind = SchemeKind.IMEX_STABILIZED
    dt: float = 1e-5
    stabilization_s: float | None = None
    max_iters: int = 1
    nonlinear_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "scheme", SchemeKind(self.scheme))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise SchemeConfigError(f"Time step dt={self.dt} must be positive and finite")
        if self.max_iters < 1:
            raise SchemeConfigError(f"max_iters={self.max_iters} must be at least 1")
        if not self.nonlinear_tol > 0:
            raise SchemeConfigError(f"nonlinear_tol={self.nonlinear_tol} must be positive")
        if self.stabilization_s is not None and not math.isfinite(self.stabilization_s):
            raise SchemeConfigError(f"stabilization_S={self.stabilization_s} must be finite")

    def resolved_stabilization(self, spec: CoefficientSpec) -> float:
        s = spec.declared_m2 if self.stabilization_s is None else float(self.stabilization_s)
        if s < spec.declared_m2:
            raise SchemeConfigError(
                f"stabilization_S={s} is below the declared upper bound M2={spec.declared_m2}"
            )
        return s


@dataclass(frozen=True)
class StepBalance:
    """Boundary fluxes and forcing mass of the step that produced a State."""

    flux_left: float
    flux_right: float
    forcing_mass: float = 0.0


@dataclass(frozen=True)
class State:
    t: float
    u: Field
    balance: StepBalance | None = None
    # running sum of dt |(u^{k+1} - u^k)/dt|_{-1}^2 over every step taken
    ut_hm1_integral: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise ValueError(f"State time t={self.t} must be finite and nonnegative")


@dataclass(frozen=True)
class FailureInfo:
    step_index: int
    t: float
    message: str


@dataclass
class Trajectory:
    states: list[State]
    records: list[Any]
    config: dict[str, Any]
    cadence: int
    dt: float
    step_window: list[State] = field(default_factory=list)
    failed: bool = False
    failure: FailureInfo | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def grid(self) -> Grid1D:
        return self.states[0].u.grid

    @property
    def final(self) -> State:
        return self.states[-1]


@functools.lru_cache(maxsize=8)
def _laplacian(grid: Grid1D) -> sparse.csr_matrix:
    n, h = grid.n_interior, grid.h
    return sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr") / h**2


@functools.lru_cache(maxsize=16)
def _stabilized_factor(grid: Grid1D, dt: float, s: float) -> np.ndarray:
    """Upper banded Cholesky factor of I + dt S L^2."""
    n, h = grid.n_interior, grid.h
    c = dt * s / h**4
    ab = np.zeros((3, n))
    ab[0, 2:] = c
    ab[1, 1:] = -4.0 * c
    ab[2, :] = 1.0 + 6.0 * c
    ab[2, 0] = ab[2, -1] = 1.0 + 5.0 * c
    try:
        factor = linalg.cholesky_banded(ab, lower=False)
    except linalg.LinAlgError as e:
        raise LinearSolveFailure(f"Stabilized operator not positive definite: {e}") from e
    factor.setflags(write=False)
    logger.debug(f"Factorized I + dt*S*D^4 for n={n}, dt={dt:g}, S={s:g}")
    return factor


def _to_banded(matrix: sparse.spmatrix, lower: int, upper: int) -> np.ndarray:
    n = matrix.shape[0]
    ab = np.zeros((lower + upper + 1, n))
    for k in range(-lower, upper + 1):
        diagonal = matrix.diagonal(k)
        if k >= 0:
            ab[upper - k, k:] = diagonal
        else:
            ab[upper - k, : n + k] = diagonal
    return ab


def _laplace(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    return apply_derivative(Field(grid, values, BCClass.PINNED), 2).values


def _pinned(values: np.ndarray, grid: Grid1D) -> Field:
    try:
        return Field(grid, values, BCClass.PINNED)
    except NonFiniteFieldError as e:
        raise NonFiniteStepError(f"Solution blew up: {e}") from e


def _imex_step(u: Field, dt: float, s: float, spec, variant, source: np.ndarray):
    grid = u.grid
    bracket = divergence_bracket(u, spec, variant).values
    explicit = -_laplace(bracket, grid) + source
    d4u = apply_derivative(u, 4).values
    b = u.values + dt * (s * d4u + explicit)
    x = linalg.cho_solve_banded((_stabilized_factor(grid, dt, s), False), b)
    if not np.all(np.isfinite(x)):
        raise NonFiniteStepError("Stabilized solve produced non-finite values")
    b_eff = bracket + s * _laplace(x - u.values, grid)
    return x, b_eff


def _linearized_step(u: Field, cfg: SchemeConfig, spec, variant, source: np.ndarray):
    """
    Conservative linearization D^2(A1 D^2 x) - D^2(A4 x) with A1, A4 frozen at
    the iterate; A2 and A3 are the terms its product rule generates.
    """
    grid, dt = u.grid, cfg.dt
    n = grid.n_interior
    lap = _laplacian(grid)
    identity = sparse.identity(n, format="csr")

    u_star = u
    for iteration in range(1, cfg.max_iters + 1):
        frozen = frozen_coefficients(u_star, spec, variant)
        a1, a4 = frozen.a1.values, frozen.a4.values
        matrix = identity + dt * (lap @ sparse.diags(a1) @ lap - lap @ sparse.diags(a4))
        f_star = variant.f(u_star.values)
        rhs = u.values + dt * (lap @ (f_star - a4 * u_star.values)) + dt * source
        try:
            x = linalg.solve_banded((2, 2), _to_banded(matrix, 2, 2), rhs)
        except (linalg.LinAlgError, ValueError) as e:
            raise LinearSolveFailure(f"Linearized banded system failed: {e}") from e
        if not np.all(np.isfinite(x)):
            raise NonFiniteStepError("Linearized solve produced non-finite values")

        b_eff = a1 * _laplace(x, grid) - f_star - a4 * (x - u_star.values)
        if cfg.max_iters == 1:
            return x, b_eff

        change = float(np.max(np.abs(x - u_star.values)))
        u_star = _pinned(x, grid)
        if change <= cfg.nonlinear_tol * max(1.0, float(np.max(np.abs(x)))):
            logger.debug(f"Picard iteration converged after {iteration} solves")
            return x, b_eff

    raise NoConvergence(
        f"Picard iteration did not reach tol={cfg.nonlinear_tol:g} in {cfg.max_iters} iterations"
    )


def step(
    s: State,
    cfg: SchemeConfig,
    spec: CoefficientSpec,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
    forcing: Field | None = None,
) -> State:
    """
    Advance one time step of size cfg.dt.

    Parameters:
        s (State): Current state, u pinned.
        cfg (SchemeConfig): Scheme and step size.
        spec (CoefficientSpec): Diffusion coefficient a(u).
        variant (NonlinearityVariant): Choice of f and g.
        forcing (Field | None): Source term evaluated at s.t, treated explicitly.

    Returns:
        State: New state at s.t + dt carrying the step's boundary fluxes.

    Raises:
        NonFiniteStepError, LinearSolveFailure, NoConvergence, SchemeConfigError
    """
    stabilization = cfg.resolved_stabilization(spec)
    u, grid, dt = s.u, s.u.grid, cfg.dt

    with np.errstate(over="ignore", invalid="ignore"):
        source = -variant.g(u.values)
        forcing_mass = 0.0
        if forcing is not None:
            source = source + forcing.values
            forcing_mass = float(grid.h * np.sum(forcing.values))
        if not np.all(np.isfinite(source)):
            raise NonFiniteStepError("Explicit source is not finite")

        try:
            if cfg.scheme is SchemeKind.IMEX_STABILIZED:
                x, b_eff = _imex_step(u, dt, stabilization, spec, variant, source)
            else:
                x, b_eff = _linearized_step(u, cfg, spec, variant, source)
        except NonFiniteFieldError as e:
            raise NonFiniteStepError(f"Intermediate field blew up: {e}") from e

    if not np.all(np.isfinite(b_eff)):
        raise NonFiniteStepError("Effective bracket is not finite")
    balance = StepBalance(
        flux_left=float(b_eff[0] / grid.h),
        flux_right=float(-b_eff[-1] / grid.h),
        forcing_mass=forcing_mass,
    )
    new_u = _pinned(x, grid)

    with np.errstate(over="ignore", invalid="ignore"):
        ut = (new_u - u) / dt
        ut_hm1_sq = inner_product(ut, apply_inverse_neg_laplacian(ut))
    if not math.isfinite(ut_hm1_sq):
        raise NonFiniteStepError("Time derivative norm overflowed")
    return State(s.t + dt, new_u, balance, s.ut_hm1_integral + dt * ut_hm1_sq)


def check_initial_compatibility(u0: Field) -> bool:
    """
    Warn when u0 does not look like samples of a function with u = D^2 u = 0
    at the endpoints. Extrapolated endpoint values and curvatures are compared
    against a tolerance proportional to h.
    """
    grid = u0.grid
    scale = max(1.0, norm(u0, NormKind.LINF))
    free = Field(grid, u0.values, BCClass.FREE)
    values = np.abs(np.asarray(free.endpoint_values))
    curvature = np.abs(np.asarray(apply_derivative(free, 2).edges))

    ok = bool(values.max() <= 10.0 * grid.h * scale and curvature.max() <= 100.0 * grid.h * scale)
    if not ok:
        logger.warning(
            f"Initial data is not compatible with u = D^2u = 0 at the endpoints: "
            f"|u| ~ {values.max():.3g}, |D^2u| ~ {curvature.max():.3g}"
        )
    return ok


def run(
    u0: Field,
    t_final: float,
    cfg: SchemeConfig,
    spec: CoefficientSpec,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
    cadence: int = 100,
    *,
    recorder: Recorder | None = None,
    forcing: Forcing | None = None,
    keep_steps: int = 0,
    override_hypotheses: bool = False,
    validation_range: tuple[float, float] = (-5.0, 5.0),
    validation_samples: int = 1001,
) -> Trajectory:
    """
    Integrate from u0 at t=0 up to t_final.

    States (and `recorder(state, previous_step_state)` outputs) are kept every
    `cadence` steps and at the final step. The first `keep_steps` step-level
    states are kept separately in `step_window`. A blow-up returns the partial
    trajectory flagged failed; other step errors are re-raised with the step
    index and time attached.
    """
    if not (math.isfinite(t_final) and t_final > 0):
        raise ValueError(f"T_final={t_final} must be positive and finite")
    if cadence < 1:
        raise ValueError(f"cadence={cadence} must be at least 1")
    if u0.bc_class is not BCClass.PINNED:
        raise ValueError("Initial data must be a pinned field")

    require_hypotheses(spec, validation_range, validation_samples, override=override_hypotheses)
    cfg.resolved_stabilization(spec)
    check_initial_compatibility(u0)

    dt = cfg.dt
    n_steps = max(1, math.ceil(t_final / dt - 1e-9))
    config_echo = {
        "scheme": str(cfg.scheme),
        "dt": dt,
        "stabilization_S": cfg.resolved_stabilization(spec),
        "cadence": cadence,
        "T_final": t_final,
        "n_steps": n_steps,
        "n_interior": u0.grid.n_interior,
        "variant": str(variant),
        "coefficient": spec.to_dict(),
    }

    state = State(0.0, u0)
    trajectory = Trajectory(
        states=[state],
        records=[recorder(state, None)] if recorder else [],
        config=config_echo,
        cadence=cadence,
        dt=dt,
        step_window=[state] if keep_steps > 0 else [],
    )
    logger.info(f"Integrating {n_steps} steps of {cfg.scheme} (n={u0.grid.n_interior}, dt={dt:g})")

    for m in range(n_steps):
        t = m * dt
        try:
            new = step(state, cfg, spec, variant, forcing(t) if forcing else None)
        except NonFiniteStepError as e:
            e.step_index, e.t = m + 1, t + dt
            logger.error(f"Run aborted: {e}")
            trajectory.failed = True
            trajectory.failure = FailureInfo(m + 1, t + dt, str(e))
            return trajectory
        except IntegratorError as e:
            e.step_index, e.t = m + 1, t + dt
            logger.error(f"Run failed: {e}")
            raise

        new = replace(new, t=(m + 1) * dt)
        if m + 1 <= keep_steps:
            trajectory.step_window.append(new)
        if (m + 1) % cadence == 0 or m + 1 == n_steps:
            try:
                rec = recorder(new, state) if recorder else None
            except NonFiniteFieldError as e:
                logger.error(f"Run aborted: diagnostics overflowed at step {m + 1}: {e}")
                trajectory.failed = True
                trajectory.failure = FailureInfo(m + 1, new.t, f"Diagnostics overflowed: {e}")
                return trajectory
            trajectory.states.append(new)
            if recorder:
                trajectory.records.append(rec)
        state = new

    logger.info(f"Integration finished at t={state.t:.6g}")
    return trajectory


def step_doubling_error(
    s: State,
    cfg: SchemeConfig,
    spec: CoefficientSpec,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
) -> float:
    """L2 distance between one dt step and two dt/2 steps from s."""
    full = step(s, cfg, spec, variant)
    half = replace(cfg, dt=cfg.dt / 2.0)
    two_halves = step(step(s, half, spec, variant), half, spec, variant)
    return norm(full.u - two_halves.u, NormKind.L2)


def select_dt(
    s: State,
    cfg: SchemeConfig,
    spec: CoefficientSpec,
    target_local_error: float,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
) -> float:
    if not target_local_error > 0:
        raise ValueError(f"target_local_error={target_local_error} must be positive")
    dt = cfg.dt
    try:
        estimate = step_doubling_error(s, cfg, spec, variant)
    except NonFiniteStepError:
        logger.warning(f"Step-doubling trial blew up at dt={dt:g}; keeping dt")
        return dt
    if estimate == 0.0:
        return 2.0 * dt
    return float(np.clip(dt * math.sqrt(target_local_error / estimate), dt / 4.0, 2.0 * dt))
