"""
The generalized Cahn-Hilliard model

    u_t + D^2[a(u) D^2 u - f(u)] + g(u) = 0   on (0, 1),   u = D^2 u = 0 at x = 0, 1

Coefficient specifications and their hypothesis validation, the f/g variants,
right-hand-side assembly in divergence and expanded form, and the frozen
coefficients of the quasilinear form used by the linearized scheme.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

import gch_model.coefficient_lib as cl
from grid_ops.grid_ops import BCClass, Field, apply_derivative

logger = logging.getLogger(__name__)

APRIME_U_TOLERANCE = 1e-12
MIN_VALIDATION_SAMPLES = 101


class CoefficientDomainError(ValueError):
    pass


class HypothesisViolationError(ValueError):
    def __init__(self, message: str, failures: tuple[str, ...] = ()):
        super().__init__(message)
        self.failures = tuple(failures)


class CoefficientFamily(enum.StrEnum):
    CONSTANT = "constant"
    RATIONAL_BUMP = "rational_bump"
    KHAIN_SANDER = "khain_sander"
    TABULATED = "tabulated"


class CoefficientWhich(enum.StrEnum):
    A = "a"
    A_PRIME = "a_prime"
    A_DOUBLEPRIME = "a_doubleprime"
    A_ANTIDERIVATIVE = "A_antiderivative"


class NonlinearityVariant(enum.StrEnum):
    PLAIN = "plain"
    SHIFTED = "shifted"

    def f(self, s: np.ndarray) -> np.ndarray:
        return cl.cubic(s) if self is NonlinearityVariant.PLAIN else cl.shifted_cubic(s)

    def f_prime(self, s: np.ndarray) -> np.ndarray:
        if self is NonlinearityVariant.PLAIN:
            return cl.cubic_prime(s)
        return cl.shifted_cubic_prime(s)

    def g(self, s: np.ndarray) -> np.ndarray:
        return cl.square(s) if self is NonlinearityVariant.PLAIN else cl.shifted_square(s)


_REQUIRED_PARAMS = {
    CoefficientFamily.CONSTANT: ("M",),
    CoefficientFamily.RATIONAL_BUMP: ("base", "gain"),
    CoefficientFamily.KHAIN_SANDER: ("q",),
    CoefficientFamily.TABULATED: ("u", "a"),
}


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    family: CoefficientFamily
    params: dict[str, Any] = field(default_factory=dict)
    declared_m1: float = 1.0
    declared_m2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", CoefficientFamily(self.family))
        object.__setattr__(self, "params", dict(self.params))
        self._validate_params()
        object.__setattr__(self, "declared_m1", float(self.declared_m1))
        object.__setattr__(self, "declared_m2", float(self.declared_m2))
        if not (np.isfinite(self.declared_m1) and np.isfinite(self.declared_m2)):
            raise ValueError(
                f"Declared bounds must be finite, got M1={self.declared_m1}, M2={self.declared_m2}"
            )
        # builds the evaluator eagerly so bad tables fail at construction
        _ = self.coefficient

    def _validate_params(self):
        missing = [k for k in _REQUIRED_PARAMS[self.family] if k not in self.params]
        if missing:
            raise ValueError(f"Coefficient family '{self.family}' is missing params {missing}")
        unknown = sorted(set(self.params) - set(_REQUIRED_PARAMS[self.family]))
        if unknown:
            raise ValueError(f"Coefficient family '{self.family}' got unknown params {unknown}")
        if self.family is CoefficientFamily.KHAIN_SANDER:
            q = float(self.params["q"])
            if not 0.0 < q < 1.0:
                raise CoefficientDomainError(f"Adhesion parameter q={q} must lie in (0, 1)")

    @cached_property
    def coefficient(self):
        p = self.params
        match self.family:
            case CoefficientFamily.CONSTANT:
                return cl.ConstantCoefficient(p["M"])
            case CoefficientFamily.RATIONAL_BUMP:
                return cl.RationalBumpCoefficient(p["base"], p["gain"])
            case CoefficientFamily.KHAIN_SANDER:
                return cl.ConstantCoefficient(cl.khain_sander_diffusion(float(p["q"])))
            case CoefficientFamily.TABULATED:
                return cl.TabulatedCoefficient(p["u"], p["a"])

    @property
    def valid_for_theorem(self) -> bool:
        return self.declared_m1 > 1.0

    def to_dict(self) -> dict[str, Any]:
        params = {
            k: (list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else float(v))
            for k, v in self.params.items()
        }
        return {
            "family": str(self.family),
            "params": params,
            "declared_M1": self.declared_m1,
            "declared_M2": self.declared_m2,
        }


@dataclass(frozen=True)
class CoefficientValidation:
    passed: bool
    min_a: float
    max_a: float
    min_aprime_u: float
    min_aprime: float
    strictly_increasing: bool
    failures: tuple[str, ...]
    smoothness: str
    u_range: tuple[float, float]
    samples: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "min_a": self.min_a,
            "max_a": self.max_a,
            "min_aprime_u": self.min_aprime_u,
            "min_aprime": self.min_aprime,
            "aprime_positive": self.strictly_increasing,
            "failures": list(self.failures),
            "smoothness": self.smoothness,
            "u_range": list(self.u_range),
            "samples": self.samples,
        }


def validate_coefficient(
    spec: CoefficientSpec,
    u_range: tuple[float, float] = (-5.0, 5.0),
    samples: int = 1001,
) -> CoefficientValidation:
    """
    Check the well-posedness hypotheses on a(u) over a sample of u_range:
    1 < M1 <= a(u) <= M2 and a'(u) u >= 0.

    Parameters:
        spec (CoefficientSpec): Coefficient to check.
        u_range (tuple[float, float]): Closed sampling interval.
        samples (int): Number of equispaced samples, at least 101.

    Returns:
        CoefficientValidation: Extremes found and the names of violated hypotheses.
            Whether a'(u) > 0 holds is reported but never decides pass/fail.

    Raises:
        ValueError: If the interval is empty or too few samples are requested.
    """
    lo, hi = (float(v) for v in u_range)
    if not lo < hi:
        raise ValueError(f"Validation range [{lo}, {hi}] is empty")
    if samples < MIN_VALIDATION_SAMPLES:
        raise ValueError(f"Validation needs at least {MIN_VALIDATION_SAMPLES} samples, got {samples}")

    u = np.linspace(lo, hi, samples)
    coeff = spec.coefficient
    a = coeff.a(u)
    aprime = coeff.a_prime(u)
    aprime_u = aprime * u

    failures = []
    if not spec.declared_m1 > 1.0:
        failures.append("M1>1 violated")
    if spec.declared_m2 < spec.declared_m1:
        failures.append("M2>=M1 violated")
    if a.min() < spec.declared_m1:
        failures.append("a(u)>=M1 violated")
    if a.max() > spec.declared_m2:
        failures.append("a(u)<=M2 violated")
    if aprime_u.min() < -APRIME_U_TOLERANCE:
        failures.append("a'(u)u>=0 violated")

    return CoefficientValidation(
        passed=not failures,
        min_a=float(a.min()),
        max_a=float(a.max()),
        min_aprime_u=float(aprime_u.min()),
        min_aprime=float(aprime.min()),
        strictly_increasing=bool(np.all(aprime > 0.0)),
        failures=tuple(failures),
        smoothness=coeff.smoothness,
        u_range=(lo, hi),
        samples=int(samples),
    )


def require_hypotheses(
    spec: CoefficientSpec,
    u_range: tuple[float, float] = (-5.0, 5.0),
    samples: int = 1001,
    override: bool = False,
) -> CoefficientValidation:
    """Validate and reject failing coefficients unless `override` is set."""
    report = validate_coefficient(spec, u_range, samples)
    if report.passed:
        return report
    if override:
        logger.warning(
            f"Coefficient '{spec.family}' fails {list(report.failures)}; continuing under override"
        )
        return report
    logger.error(f"Coefficient '{spec.family}' rejected: {list(report.failures)}")
    raise HypothesisViolationError(
        f"Coefficient '{spec.family}' violates {', '.join(report.failures)}", report.failures
    )


def khain_sander_coefficient(q: float) -> CoefficientSpec:
    if not 0.0 < q < 1.0:
        raise CoefficientDomainError(f"Adhesion parameter q={q} must lie in (0, 1)")
    m = cl.khain_sander_diffusion(q)
    spec = CoefficientSpec(CoefficientFamily.KHAIN_SANDER, {"q": float(q)}, m, m)
    if not spec.valid_for_theorem:
        logger.warning(f"q={q} gives diffusion {m:.6g} <= 1; outside the well-posedness hypotheses")
    return spec


def eval_coefficient(spec: CoefficientSpec, u: Field, which: CoefficientWhich) -> Field:
    coeff = spec.coefficient
    fn = {
        CoefficientWhich.A: coeff.a,
        CoefficientWhich.A_PRIME: coeff.a_prime,
        CoefficientWhich.A_DOUBLEPRIME: coeff.a_doubleprime,
        CoefficientWhich.A_ANTIDERIVATIVE: coeff.antiderivative,
    }[CoefficientWhich(which)]
    return u.map(fn)


def divergence_bracket(u: Field, spec: CoefficientSpec, variant: NonlinearityVariant) -> Field:
    """a(u) D^2 u - f(u), which vanishes at the endpoints under the pinned conditions."""
    d2u = apply_derivative(u, 2).values
    values = spec.coefficient.a(u.values) * d2u - variant.f(u.values)
    return Field(u.grid, values, BCClass.PINNED)


def rhs_divergence_form(
    u: Field, spec: CoefficientSpec, variant: NonlinearityVariant = NonlinearityVariant.PLAIN
) -> Field:
    bracket = divergence_bracket(u, spec, variant)
    values = -apply_derivative(bracket, 2).values - variant.g(u.values)
    return Field(u.grid, values, BCClass.FREE)


def rhs_expanded_form(
    u: Field, spec: CoefficientSpec, variant: NonlinearityVariant = NonlinearityVariant.PLAIN
) -> Field:
    """-D[a(u) D^3u + a'(u) Du D^2u - f'(u) Du] - g(u)"""
    coeff = spec.coefficient
    du, d2u, d3u = (apply_derivative(u, k) for k in (1, 2, 3))

    def flux(v, dv, d2v, d3v):
        return coeff.a(v) * d3v + coeff.a_prime(v) * dv * d2v - variant.f_prime(v) * dv

    ends = np.asarray(u.endpoint_values)
    edges = flux(ends, np.asarray(du.edges), np.asarray(d2u.edges), np.asarray(d3u.edges))
    q = Field(
        u.grid,
        flux(u.values, du.values, d2u.values, d3u.values),
        BCClass.FREE,
        edges=(edges[0], edges[1]),
    )
    values = -apply_derivative(q, 1).values - variant.g(u.values)
    return Field(u.grid, values, BCClass.FREE)


@dataclass(frozen=True)
class FrozenCoefficients:
    a1: Field
    a2: Field
    a3: Field
    a4: Field


def frozen_coefficients(
    u: Field, spec: CoefficientSpec, variant: NonlinearityVariant = NonlinearityVariant.PLAIN
) -> FrozenCoefficients:
    """A1 = a(u), A2 = 2a'(u) Du, A3 = a''(u) |Du|^2 and A4 = f'(u), frozen at u."""
    du = apply_derivative(u, 1)
    a1 = eval_coefficient(spec, u, CoefficientWhich.A)
    a2 = 2.0 * eval_coefficient(spec, u, CoefficientWhich.A_PRIME) * du
    a3 = eval_coefficient(spec, u, CoefficientWhich.A_DOUBLEPRIME) * du * du
    a4 = u.map(variant.f_prime)
    return FrozenCoefficients(a1, a2, a3, a4)
