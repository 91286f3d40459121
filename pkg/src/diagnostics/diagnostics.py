"""
Per-state diagnostics and whole-trajectory estimate checks.

Records hold every norm, dissipation, energy and pairing that enters the
a priori estimates. Trajectory-level functions turn those records into
identity residuals, a fitted Gronwall constant with its envelope margin,
time-integrated dissipations, Holder moduli and interpolation ratios.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from gch_model.gch_model import (
    CoefficientSpec,
    CoefficientWhich,
    NonlinearityVariant,
    eval_coefficient,
)
from grid_ops.grid_ops import (
    BCClass,
    Field,
    NormKind,
    apply_derivative,
    apply_inverse_neg_laplacian,
    boundary_flux,
    inner_product,
    integral,
    norm,
)
from integrator.integrator import State, Trajectory

logger = logging.getLogger(__name__)

MAX_HOLDER_PAIRS = 1_000_000
ZERO_MASS_BALANCE_SCALE = 1.0


class InsufficientRecordsError(ValueError):
    pass


class CadenceError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    norm_L2: float = 0.0
    norm_L4: float = 0.0
    norm_L8: float = 0.0
    norm_Linf: float = 0.0
    norm_Hm1: float = 0.0
    grad_L2: float = 0.0
    gradL4: float = 0.0
    dissipation_a_D1: float = 0.0
    dissipation_a_D2: float = 0.0
    dissipation_a_D3: float = 0.0
    energy_quartic: float = 0.0
    energy_A: float = 0.0
    lyapunov: float = 0.0
    pairing_g_Nu: float = 0.0
    ut_Hm1_sq: float = 0.0
    flux_left: float = 0.0
    flux_right: float = 0.0
    mass: float = 0.0
    d3_L2: float = 0.0
    dissipation_aprime_u_D1: float = 0.0
    pairing_f_u: float = 0.0
    gradient_weight_f: float = 0.0
    pairing_g_u: float = 0.0
    triple_aprime: float = 0.0
    cross_f_D3: float = 0.0
    pairing_g_D2u: float = 0.0
    pairing_s_Nu: float = 0.0
    pairing_s_u: float = 0.0
    pairing_s_D2u: float = 0.0
    ut_Hm1_sq_integral: float = 0.0
    ut_available: bool = False

    def as_row(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> DiagnosticsRecord:
        values = {}
        for f in dataclasses.fields(cls):
            if f.name not in row:
                raise KeyError(f"Diagnostics row is missing column '{f.name}'")
            raw = row[f.name]
            if f.name == "ut_available":
                values[f.name] = raw if isinstance(raw, bool) else str(raw).lower() == "true"
            else:
                values[f.name] = float(raw)
        return cls(**values)


DIAGNOSTIC_COLUMNS = tuple(f.name for f in dataclasses.fields(DiagnosticsRecord))


def record(
    s: State,
    s_prev: State | None,
    spec: CoefficientSpec,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
    forcing: Field | None = None,
) -> DiagnosticsRecord:
    """
    Evaluate every monitored quantity at one state.

    Parameters:
        s (State): State to evaluate.
        s_prev (State | None): State one step earlier; gives the backward-difference u_t.
        spec (CoefficientSpec): Diffusion coefficient.
        variant (NonlinearityVariant): Choice of f and g.
        forcing (Field | None): Source term at s.t, for the forced pairings.

    Returns:
        DiagnosticsRecord
    """
    u = s.u
    du, d2u, d3u = (apply_derivative(u, k) for k in (1, 2, 3))
    nu = apply_inverse_neg_laplacian(u)
    a_u = eval_coefficient(spec, u, CoefficientWhich.A)
    aprime_u = eval_coefficient(spec, u, CoefficientWhich.A_PRIME)
    f_u = u.map(variant.f)
    fprime_u = u.map(variant.f_prime)
    g_u = u.map(variant.g)

    ut_hm1_sq, ut_available = 0.0, False
    if s_prev is not None and s.t > s_prev.t:
        ut = (u - s_prev.u) / (s.t - s_prev.t)
        ut_hm1_sq = inner_product(ut, apply_inverse_neg_laplacian(ut))
        ut_available = True

    pairings_s = (0.0, 0.0, 0.0)
    if forcing is not None:
        pairings_s = (
            inner_product(forcing, nu),
            inner_product(forcing, u),
            inner_product(forcing, d2u),
        )

    energy_quartic = 0.25 * integral(u * u * u * u)
    energy_a = integral(eval_coefficient(spec, u, CoefficientWhich.A_ANTIDERIVATIVE))
    flux_left, flux_right = boundary_flux(u, spec)

    return DiagnosticsRecord(
        t=s.t,
        norm_L2=norm(u, NormKind.L2),
        norm_L4=norm(u, NormKind.L4),
        norm_L8=norm(u, NormKind.L8),
        norm_Linf=norm(u, NormKind.LINF),
        norm_Hm1=norm(u, NormKind.HMINUS1),
        grad_L2=norm(du, NormKind.L2),
        gradL4=norm(du, NormKind.L4),
        dissipation_a_D1=integral(a_u * du * du),
        dissipation_a_D2=integral(a_u * d2u * d2u),
        dissipation_a_D3=integral(a_u * d3u * d3u),
        energy_quartic=energy_quartic,
        energy_A=energy_a,
        lyapunov=energy_quartic - energy_a,
        pairing_g_Nu=inner_product(g_u, nu),
        ut_Hm1_sq=ut_hm1_sq,
        flux_left=flux_left,
        flux_right=flux_right,
        mass=integral(u),
        d3_L2=norm(d3u, NormKind.L2),
        dissipation_aprime_u_D1=integral(aprime_u * u * du * du),
        pairing_f_u=inner_product(f_u, u),
        gradient_weight_f=integral(fprime_u * du * du),
        pairing_g_u=inner_product(g_u, u),
        triple_aprime=integral(aprime_u * du * d2u * d3u),
        cross_f_D3=integral(fprime_u * du * d3u),
        pairing_g_D2u=inner_product(g_u, d2u),
        pairing_s_Nu=pairings_s[0],
        pairing_s_u=pairings_s[1],
        pairing_s_D2u=pairings_s[2],
        ut_Hm1_sq_integral=s.ut_hm1_integral,
        ut_available=ut_available,
    )


def _column(records: Sequence[DiagnosticsRecord], name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in records], dtype=float)


def _require_records(records: Sequence[DiagnosticsRecord], minimum: int, what: str):
    if len(records) < minimum:
        raise InsufficientRecordsError(
            f"{what} needs at least {minimum} records, trajectory has {len(records)}"
        )


class IdentityKind(enum.StrEnum):
    HMINUS1 = "hminus1"
    HMINUS1_PRINTED = "hminus1_printed"
    L2 = "l2"
    GRADIENT = "gradient"


@dataclass(frozen=True)
class IdentityResidual:
    which: IdentityKind
    times: np.ndarray
    series: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.series))) if self.series.size else 0.0


def energy_identity_residual(
    traj: Trajectory, which: IdentityKind = IdentityKind.HMINUS1
) -> IdentityResidual:
    """
    Residual of an energy identity along the recorded states, with d/dt taken
    by second-order differences on the recording times.

    hminus1:          d/dt 1/2|u|_{-1}^2 + (f(u),u) + int (a + a'u)|Du|^2 + (g(u),Nu) - (S,Nu)
    hminus1_printed:  same with -(g(u),Nu)
    l2:               d/dt 1/2|u|^2 + int a|D^2u|^2 + int f'(u)|Du|^2 + (g(u),u) - (S,u)
    gradient:         d/dt 1/2|Du|^2 + int a|D^3u|^2 + int a'Du D^2u D^3u
                      - int f'(u)Du D^3u - (g(u),D^2u) + (S,D^2u)
    """
    records = traj.records
    _require_records(records, 3, "An identity residual")
    which = IdentityKind(which)
    t = _column(records, "t")
    col = _columns(records)

    if which in (IdentityKind.HMINUS1, IdentityKind.HMINUS1_PRINTED):
        energy = 0.5 * col("norm_Hm1") ** 2
        sign = 1.0 if which is IdentityKind.HMINUS1 else -1.0
        rest = (
            col("pairing_f_u")
            + col("dissipation_a_D1")
            + col("dissipation_aprime_u_D1")
            + sign * col("pairing_g_Nu")
            - col("pairing_s_Nu")
        )
    elif which is IdentityKind.L2:
        energy = 0.5 * col("norm_L2") ** 2
        rest = (
            col("dissipation_a_D2")
            + col("gradient_weight_f")
            + col("pairing_g_u")
            - col("pairing_s_u")
        )
    else:
        energy = 0.5 * col("grad_L2") ** 2
        rest = (
            col("dissipation_a_D3")
            + col("triple_aprime")
            - col("cross_f_D3")
            - col("pairing_g_D2u")
            + col("pairing_s_D2u")
        )

    series = np.gradient(energy, t, edge_order=2) + rest
    return IdentityResidual(which, t, series)


def _columns(records: Sequence[DiagnosticsRecord]) -> Callable[[str], np.ndarray]:
    return functools.partial(_column, records)


@dataclass(frozen=True)
class GronwallFit:
    fitted_c2: float
    times: np.ndarray
    y: np.ndarray
    margins: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else 0.0


def gronwall_fit(traj: Trajectory) -> GronwallFit:
    """
    Smallest C2 >= 0 with dy/dt + 2P <= 2 C2 y between consecutive records,
    where y = |u|_{-1}^2 + |u|^2 and P = D1 + D2 + 1/2|u|_{L4}^4 + int f'(u)|Du|^2.

    y is differenced forward and P is taken at the later record, the level the
    implicit part of the step acts on. The envelope y(0) exp(2 C2 t) then
    dominates y by induction over records.
    """
    records = traj.records
    _require_records(records, 3, "A Gronwall fit")
    col = _columns(records)
    t = col("t")
    y = col("norm_Hm1") ** 2 + col("norm_L2") ** 2
    p = (
        col("dissipation_a_D1")
        + col("dissipation_a_D2")
        + 2.0 * col("energy_quartic")
        + col("gradient_weight_f")
    )

    if not np.any(y > 0):
        return GronwallFit(0.0, t, y, np.zeros_like(y))

    dt = np.diff(t)
    dy = np.diff(y) / dt
    valid = y[:-1] > 0
    ratios = (dy[valid] + 2.0 * np.maximum(p[1:][valid], 0.0)) / (2.0 * y[:-1][valid])
    c2 = max(0.0, float(ratios.max())) if ratios.size else 0.0
    margins = y[0] * np.exp(2.0 * c2 * (t - t[0])) - y
    return GronwallFit(c2, t, y, margins)


def integrated_dissipations(traj: Trajectory) -> dict[str, float]:
    """
    Trapezoid-in-time totals over the recorded states. The |u_t|_{-1}^2 total
    is the per-step sum the integrator carries, so it covers every step
    whatever the recording cadence.
    """
    records = traj.records
    _require_records(records, 2, "Time integration")
    col = _columns(records)
    t = col("t")
    d1, d2, d3 = col("dissipation_a_D1"), col("dissipation_a_D2"), col("dissipation_a_D3")
    running = col("ut_Hm1_sq_integral")
    ut_total = float(running[-1] - running[0])

    return {
        "a_D1": float(trapezoid(d1, t)),
        "a_D2": float(trapezoid(d2, t)),
        "a_D1_D2": float(trapezoid(d1 + d2, t)),
        "ut_Hm1_sq": ut_total,
        "a_D3": float(trapezoid(d3, t)),
        "L4_fourth": float(trapezoid(4.0 * col("energy_quartic"), t)),
    }


def _stride_indices(count: int, max_pairs: int) -> np.ndarray:
    """Evenly strided indices (first and last kept) with at most max_pairs pairs."""
    if count * (count - 1) // 2 <= max_pairs:
        return np.arange(count)
    keep = int((1 + math.isqrt(1 + 8 * max_pairs)) // 2)
    idx = np.unique(np.linspace(0, count - 1, keep).round().astype(int))
    return idx


def _pair_max(positions: np.ndarray, samples: np.ndarray, exponent: float) -> float:
    """max |s_i - s_j| / |p_i - p_j|^exponent over i < j; samples may be 2D (pairs along axis 0)."""
    best = 0.0
    for i in range(positions.size - 1):
        gaps = np.abs(positions[i + 1 :] - positions[i]) ** exponent
        diffs = np.abs(samples[i + 1 :] - samples[i])
        if diffs.ndim > 1:
            diffs = diffs.max(axis=1)
        best = max(best, float(np.max(diffs / gaps)))
    return best


def holder_modulus_space(u: Field, exponent: float = 0.5) -> float:
    """
    All-pairs Holder quotient of u over the nodes. Endpoints join the scan when
    their values are known: zero for pinned fields, the edges for free ones.
    """
    if not 0.0 < exponent <= 1.0:
        raise ValueError(f"Holder exponent {exponent} must lie in (0, 1]")
    x, values = u.grid.nodes, u.values
    if u.bc_class is BCClass.PINNED or u.edges is not None:
        left, right = u.endpoint_values
        x = u.grid.nodes_with_endpoints
        values = np.concatenate([[left], values, [right]])
    idx = _stride_indices(x.size, MAX_HOLDER_PAIRS)
    return _pair_max(x[idx], values[idx], exponent)


def holder_modulus_time(traj: Trajectory, exponent: float = 0.125) -> float:
    if not 0.0 < exponent <= 1.0:
        raise ValueError(f"Holder exponent {exponent} must lie in (0, 1]")
    if len(traj.states) < 2:
        raise InsufficientRecordsError("Time Holder modulus needs at least 2 states")
    t = traj.times
    samples = np.stack([s.u.values for s in traj.states])
    idx = _stride_indices(t.size, MAX_HOLDER_PAIRS)
    return _pair_max(t[idx], samples[idx], exponent)


def nirenberg_ratios(u: Field) -> tuple[float, float]:
    """
    (|u|_{L8} / (|D^3u|^{1/8}|u|^{7/8} + |u|),  |Du|_{L4} / (|D^3u|^{5/12}|u|^{7/12} + |u|))
    """
    l2 = norm(u, NormKind.L2)
    if l2 == 0.0:
        return 0.0, 0.0
    d3 = norm(apply_derivative(u, 3), NormKind.L2)
    r_l8 = norm(u, NormKind.L8) / (d3**0.125 * l2**0.875 + l2)
    r_dl4 = norm(apply_derivative(u, 1), NormKind.L4) / (d3 ** (5 / 12) * l2 ** (7 / 12) + l2)
    return float(r_l8), float(r_dl4)


@dataclass(frozen=True)
class MassBalance:
    series: np.ndarray
    scales: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.series))) if self.series.size else 0.0

    @property
    def max_scaled(self) -> float:
        return float(np.max(np.abs(self.series) / self.scales)) if self.series.size else 0.0


def mass_balance_residual(
    traj: Trajectory,
    spec: CoefficientSpec | None = None,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
) -> MassBalance:
    """
    Per step: h sum(u^{m+1} - u^m) + dt (h sum g(u^m) + flux_right - flux_left - forcing mass),
    with the fluxes each step stored on its State.

    Uses the trajectory's step window, or the recorded states when every step
    was recorded.
    """
    if len(traj.step_window) >= 2:
        states = traj.step_window
    elif traj.cadence == 1:
        states = traj.states
    else:
        raise CadenceError(
            f"Mass balance needs step-level states; cadence is {traj.cadence} and no step window was kept"
        )

    h = traj.grid.h
    series, scales = [], []
    for before, after in zip(states[:-1], states[1:]):
        if after.balance is None:
            raise CadenceError(f"State at t={after.t:g} carries no step fluxes")
        b = after.balance
        change = h * np.sum(after.u.values - before.u.values)
        source = h * np.sum(variant.g(before.u.values))
        series.append(change + traj.dt * (source + b.flux_right - b.flux_left - b.forcing_mass))
        scales.append(max(ZERO_MASS_BALANCE_SCALE, norm(before.u, NormKind.LINF)))
    return MassBalance(np.array(series), np.array(scales))


@dataclass
class EstimateReport:
    identity_residuals: dict[str, float]
    fitted_c2: float
    gronwall_margin: float
    gronwall_y0: float
    integrated_dissipation: dict[str, float]
    holder_space_modulus: float
    holder_time_modulus: float
    nirenberg_ratio_L8: float
    nirenberg_ratio_DL4: float
    linf_qt: float
    sup_grad_L2: float
    holder_space_excess: float
    mass_initial: float
    lyapunov: dict[str, float]
    mass_balance_max: float | None = None
    n_interior: int | None = None
    dt: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> EstimateReport:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in names})


def build_estimate_report(
    traj: Trajectory,
    variant: NonlinearityVariant = NonlinearityVariant.PLAIN,
) -> EstimateReport:
    records = traj.records
    _require_records(records, 3, "An estimate report")
    col = _columns(records)

    residuals = {str(k): energy_identity_residual(traj, k).max_abs for k in IdentityKind}
    fit = gronwall_fit(traj)

    holder_space, excess, r_l8, r_dl4 = 0.0, -math.inf, 0.0, 0.0
    for state, rec in zip(traj.states, records):
        modulus = holder_modulus_space(state.u, 0.5)
        holder_space = max(holder_space, modulus)
        excess = max(excess, modulus - rec.grad_L2)
        ratios = nirenberg_ratios(state.u)
        r_l8, r_dl4 = max(r_l8, ratios[0]), max(r_dl4, ratios[1])

    mass_balance_max = None
    if len(traj.step_window) >= 2 or traj.cadence == 1:
        mass_balance_max = mass_balance_residual(traj, variant=variant).max_scaled

    lyapunov = col("lyapunov")
    return EstimateReport(
        identity_residuals=residuals,
        fitted_c2=fit.fitted_c2,
        gronwall_margin=fit.min_margin,
        gronwall_y0=float(fit.y[0]),
        integrated_dissipation=integrated_dissipations(traj),
        holder_space_modulus=holder_space,
        holder_time_modulus=holder_modulus_time(traj, 0.125),
        nirenberg_ratio_L8=r_l8,
        nirenberg_ratio_DL4=r_dl4,
        linf_qt=float(col("norm_Linf").max()),
        sup_grad_L2=float(col("grad_L2").max()),
        holder_space_excess=float(excess),
        mass_initial=float(records[0].mass),
        lyapunov={
            "initial": float(lyapunov[0]),
            "final": float(lyapunov[-1]),
            "max": float(lyapunov.max()),
        },
        mass_balance_max=mass_balance_max,
        n_interior=traj.grid.n_interior,
        dt=traj.dt,
    )


@dataclass(frozen=True)
class CheckLine:
    name: str
    status: str
    detail: str


HOLDER_SPACE_TOLERANCE = 1e-6
GRONWALL_TOLERANCE = 1e-8
MASS_BALANCE_TOLERANCE = 1e-11


def estimate_checks(report: EstimateReport) -> list[CheckLine]:
    """Pass/warn lines for the boundedness and modulus estimates of one run."""

    def line(name, ok, detail):
        return CheckLine(name, "pass" if ok else "warn", detail)

    totals = report.integrated_dissipation
    lines = [
        line("Linf(Q_T) bounded", math.isfinite(report.linf_qt), f"max |u| = {report.linf_qt:.6g}"),
        line(
            "sup_t |Du| bounded",
            math.isfinite(report.sup_grad_L2),
            f"sup |Du| = {report.sup_grad_L2:.6g}",
        ),
        line(
            "dissipation integrals finite",
            all(math.isfinite(v) for v in totals.values()),
            ", ".join(f"{k}={v:.6g}" for k, v in totals.items()),
        ),
        line(
            "Gronwall envelope",
            report.gronwall_margin >= -GRONWALL_TOLERANCE * max(report.gronwall_y0, 1e-300),
            f"C2 = {report.fitted_c2:.6g}, min margin = {report.gronwall_margin:.3e}",
        ),
        line(
            "space Holder(1/2) <= |Du|",
            report.holder_space_excess <= HOLDER_SPACE_TOLERANCE,
            f"modulus = {report.holder_space_modulus:.6g}, excess = {report.holder_space_excess:.3e}",
        ),
        line(
            "time Holder(1/8) finite",
            math.isfinite(report.holder_time_modulus),
            f"modulus = {report.holder_time_modulus:.6g}",
        ),
        line(
            "interpolation ratios finite",
            math.isfinite(report.nirenberg_ratio_L8) and math.isfinite(report.nirenberg_ratio_DL4),
            f"L8 = {report.nirenberg_ratio_L8:.4g}, DL4 = {report.nirenberg_ratio_DL4:.4g}",
        ),
        line(
            "H^-1 identity residual",
            math.isfinite(report.identity_residuals["hminus1"]),
            f"max |r| = {report.identity_residuals['hminus1']:.3e} "
            f"(printed sign: {report.identity_residuals['hminus1_printed']:.3e})",
        ),
    ]
    if report.mass_balance_max is not None:
        lines.append(
            line(
                "discrete mass balance",
                report.mass_balance_max <= MASS_BALANCE_TOLERANCE,
                f"max scaled residual = {report.mass_balance_max:.3e}",
            )
        )
    return lines


_GRID_STABILITY = (
    ("linf_qt", 0.05),
    ("sup_grad_L2", 0.05),
    ("a_D3", 0.05),
    ("fitted_c2", 0.20),
)


def _quantity(report: EstimateReport, name: str) -> float:
    if name in report.integrated_dissipation:
        return report.integrated_dissipation[name]
    return float(getattr(report, name))


def compare_reports(coarse: EstimateReport, fine: EstimateReport) -> list[CheckLine]:
    """Grid-stability lines between two resolutions of the same problem."""
    lines = []
    for name, tolerance in _GRID_STABILITY:
        a, b = _quantity(coarse, name), _quantity(fine, name)
        scale = max(abs(a), abs(b))
        rel = abs(a - b) / scale if scale > 0 else 0.0
        lines.append(
            CheckLine(
                f"{name} grid-stable",
                "pass" if rel <= tolerance else "warn",
                f"{a:.6g} vs {b:.6g} (rel diff {rel:.2%}, tol {tolerance:.0%})",
            )
        )

    a, b = coarse.holder_time_modulus, fine.holder_time_modulus
    lines.append(
        CheckLine(
            "time Holder(1/8) non-increasing",
            "pass" if b <= 1.10 * a else "warn",
            f"{a:.6g} -> {b:.6g}",
        )
    )
    a, b = coarse.identity_residuals["hminus1"], fine.identity_residuals["hminus1"]
    lines.append(
        CheckLine(
            "H^-1 identity residual shrinks",
            "pass" if b <= a else "warn",
            f"{a:.3e} -> {b:.3e}",
        )
    )
    return lines
