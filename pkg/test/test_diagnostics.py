import dataclasses
import functools
import itertools

import numpy as np
import pytest

from diagnostics.diagnostics import (
    DIAGNOSTIC_COLUMNS,
    CadenceError,
    DiagnosticsRecord,
    EstimateReport,
    IdentityKind,
    InsufficientRecordsError,
    _stride_indices,
    build_estimate_report,
    compare_reports,
    energy_identity_residual,
    estimate_checks,
    gronwall_fit,
    holder_modulus_space,
    holder_modulus_time,
    integrated_dissipations,
    mass_balance_residual,
    nirenberg_ratios,
    record,
)
from gch_model.gch_model import CoefficientFamily, CoefficientSpec, NonlinearityVariant
from grid_ops.grid_ops import BCClass, Field, make_grid, sample_field
from integrator.integrator import SchemeConfig, SchemeKind, State, Trajectory, run

CONSTANT_TWO = CoefficientSpec(CoefficientFamily.CONSTANT, {"M": 2.0}, 2.0, 2.0)
BUMP = CoefficientSpec(CoefficientFamily.RATIONAL_BUMP, {"base": 2.0, "gain": 1.0}, 2.0, 3.0)


def _sine(n, amplitude=0.5):
    return sample_field(make_grid(n), lambda x: amplitude * np.sin(np.pi * x))


def _recorded_run(u0, t_final, dt, spec=BUMP, cadence=10, **kwargs):
    recorder = functools.partial(record, spec=spec)
    return run(u0, t_final, SchemeConfig(dt=dt), spec, cadence=cadence, recorder=recorder, **kwargs)


def test_record_of_zero_state_is_zero():
    rec = record(State(0.0, _sine(31, 0.0)), None, BUMP)
    for name in DIAGNOSTIC_COLUMNS:
        assert getattr(rec, name) == 0.0, name


def test_gradient_dissipation_of_sine():
    rec = record(State(0.0, _sine(127, 1.0)), None, CONSTANT_TWO)
    assert rec.dissipation_a_D1 == pytest.approx(np.pi**2, abs=1e-2)
    assert rec.norm_L2 == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert rec.mass == pytest.approx(2.0 / np.pi, rel=1e-4)
    assert rec.lyapunov == pytest.approx(rec.energy_quartic - rec.energy_A)
    assert not rec.ut_available


def test_record_converges_to_a_fine_grid_oracle():
    coarse = record(State(0.0, _sine(255)), None, BUMP)
    oracle = record(State(0.0, _sine(2047)), None, BUMP)
    skip = {
        "t",
        "ut_available",
        "ut_Hm1_sq",
        "ut_Hm1_sq_integral",
        "pairing_s_Nu",
        "pairing_s_u",
        "pairing_s_D2u",
    }
    for name in DIAGNOSTIC_COLUMNS:
        if name in skip:
            continue
        expected = getattr(oracle, name)
        assert abs(expected) > 1e-8, name
        assert getattr(coarse, name) == pytest.approx(expected, rel=1e-3), name


def test_record_with_previous_state_has_time_derivative():
    u0 = _sine(63)
    traj = _recorded_run(u0, 2e-5, 1e-5, cadence=1)
    assert traj.records[1].ut_available
    assert traj.records[1].ut_Hm1_sq > 0.0


def test_forcing_pairings():
    u = _sine(63)
    forcing = sample_field(u.grid, lambda x: np.sin(np.pi * x))
    rec = record(State(0.0, u), None, BUMP, forcing=forcing)
    assert rec.pairing_s_u == pytest.approx(0.25, rel=1e-12)
    assert rec.pairing_s_Nu > 0.0
    assert rec.pairing_s_D2u < 0.0


def test_record_row_round_trip_parses_text_booleans():
    rec = record(State(0.5, _sine(31)), None, BUMP)
    row = {k: (str(v).lower() if isinstance(v, bool) else v) for k, v in rec.as_row().items()}
    assert DiagnosticsRecord.from_row(row) == rec
    assert list(rec.as_row()) == list(DIAGNOSTIC_COLUMNS)


def test_identity_residuals_vanish_on_the_zero_trajectory():
    traj = _recorded_run(_sine(31, 0.0), 1e-3, 1e-5)
    for kind in IdentityKind:
        assert energy_identity_residual(traj, kind).max_abs == 0.0


def test_identity_residual_needs_three_records():
    traj = _recorded_run(_sine(31), 2e-5, 1e-5, cadence=10)
    assert len(traj.records) == 2
    with pytest.raises(InsufficientRecordsError):
        energy_identity_residual(traj)


@pytest.mark.parametrize("kind", [IdentityKind.HMINUS1, IdentityKind.L2, IdentityKind.GRADIENT])
def test_identity_residual_shrinks_under_refinement(kind):
    coarse = _recorded_run(_sine(31), 0.01, 4e-5)
    fine = _recorded_run(_sine(63), 0.01, 1e-5)
    r_coarse = energy_identity_residual(coarse, kind).max_abs
    r_fine = energy_identity_residual(fine, kind).max_abs
    assert r_fine * 3.0 <= r_coarse


def test_printed_sign_differs_only_in_the_source_pairing():
    traj = _recorded_run(_sine(31), 1e-3, 1e-5)
    derived = energy_identity_residual(traj, IdentityKind.HMINUS1).series
    printed = energy_identity_residual(traj, IdentityKind.HMINUS1_PRINTED).series
    pairing = np.array([r.pairing_g_Nu for r in traj.records])
    np.testing.assert_allclose(derived - printed, 2.0 * pairing, rtol=1e-10, atol=1e-14)


def test_gronwall_fit_of_zero_trajectory():
    fit = gronwall_fit(_recorded_run(_sine(31, 0.0), 1e-3, 1e-5))
    assert fit.fitted_c2 == 0.0
    assert np.all(fit.margins == 0.0)


def test_gronwall_constant_vanishes_for_small_linear_decay():
    traj = _recorded_run(_sine(63, 1e-7), 1e-3, 1e-5, spec=CONSTANT_TWO, cadence=1)
    fit = gronwall_fit(traj)
    assert fit.fitted_c2 <= 1e-6
    assert fit.min_margin >= -1e-8 * fit.y[0]


def test_gronwall_envelope_dominates_a_nonlinear_run():
    fit = gronwall_fit(_recorded_run(_sine(31), 0.05, 2e-5))
    assert fit.fitted_c2 >= 0.0
    assert fit.min_margin >= -1e-12 * fit.y[0]


def test_integrated_dissipations_of_zero_trajectory():
    totals = integrated_dissipations(_recorded_run(_sine(31, 0.0), 1e-3, 1e-5))
    assert set(totals) == {"a_D1", "a_D2", "a_D1_D2", "ut_Hm1_sq", "a_D3", "L4_fourth"}
    assert all(v == 0.0 for v in totals.values())


def test_integrated_dissipations_match_linear_decay():
    eps, t_final, a = 1e-3, 0.01, 2.0
    traj = _recorded_run(_sine(127, eps), t_final, 1e-5, spec=CONSTANT_TWO)
    totals = integrated_dissipations(traj)

    kappa = a * np.pi**4
    time_factor = (1.0 - np.exp(-2.0 * kappa * t_final)) / (2.0 * kappa)
    assert totals["a_D1"] == pytest.approx(a * eps**2 * np.pi**2 / 2.0 * time_factor, rel=1e-2)
    assert totals["a_D2"] == pytest.approx(a * eps**2 * np.pi**4 / 2.0 * time_factor, rel=1e-2)
    assert totals["a_D1_D2"] == pytest.approx(totals["a_D1"] + totals["a_D2"])
    assert totals["ut_Hm1_sq"] == pytest.approx(
        kappa**2 * eps**2 / (2.0 * np.pi**2) * time_factor, rel=1e-2
    )


def test_time_derivative_total_does_not_depend_on_cadence():
    totals = [
        integrated_dissipations(_recorded_run(_sine(127), 5e-3, 1e-5, cadence=cadence))["ut_Hm1_sq"]
        for cadence in (1, 10, 100)
    ]
    assert totals[0] > 0.0
    assert totals[1] == pytest.approx(totals[0], rel=1e-12)
    assert totals[2] == pytest.approx(totals[0], rel=1e-12)


def test_holder_space_modulus_of_square_root_is_one():
    grid = make_grid(127)
    root = sample_field(grid, np.sqrt, BCClass.FREE)
    assert holder_modulus_space(root, 0.5) == pytest.approx(1.0, abs=1e-12)


def test_holder_space_modulus_matches_brute_force():
    u = _sine(31, 1.0)
    x = u.grid.nodes_with_endpoints
    values = np.concatenate([[0.0], u.values, [0.0]])
    expected = max(
        abs(values[i] - values[j]) / abs(x[i] - x[j]) ** 0.5
        for i, j in itertools.combinations(range(x.size), 2)
    )
    assert holder_modulus_space(u, 0.5) == pytest.approx(expected, rel=1e-14)
    assert 1.0 / np.sqrt(0.5) - 1e-12 <= expected <= np.pi / np.sqrt(2.0)


def test_holder_space_modulus_is_zero_for_zero_and_rejects_bad_exponents():
    assert holder_modulus_space(_sine(31, 0.0)) == 0.0
    with pytest.raises(ValueError):
        holder_modulus_space(_sine(31), 1.5)


def test_space_modulus_stays_below_gradient_norm_along_a_run():
    traj = _recorded_run(_sine(63), 0.01, 1e-5, cadence=100)
    for state, rec in zip(traj.states, traj.records):
        assert holder_modulus_space(state.u, 0.5) <= rec.grad_L2 + 1e-6


def test_holder_time_modulus_of_single_decaying_mode():
    eps, rate = 0.5, 40.0
    grid = make_grid(31)
    times = np.linspace(0.0, 0.1, 21)
    states = [
        State(t, sample_field(grid, lambda x, t=t: eps * np.exp(-rate * t) * np.sin(np.pi * x)))
        for t in times
    ]
    traj = Trajectory(states=states, records=[], config={}, cadence=1, dt=0.005)

    expected = max(
        eps * abs(np.exp(-rate * ti) - np.exp(-rate * tj)) / abs(ti - tj) ** 0.125
        for ti, tj in itertools.combinations(times, 2)
    )
    assert holder_modulus_time(traj, 0.125) == pytest.approx(expected, rel=1e-12)


def test_holder_time_modulus_of_stationary_trajectory_is_zero():
    traj = _recorded_run(_sine(31, 0.0), 1e-3, 1e-5)
    assert holder_modulus_time(traj) == 0.0


def test_stride_indices_cap_the_number_of_pairs():
    idx = _stride_indices(2000, 1_000_000)
    assert idx.size * (idx.size - 1) // 2 <= 1_000_000
    assert idx[0] == 0 and idx[-1] == 1999
    assert np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(_stride_indices(100, 1_000_000), np.arange(100))


def test_nirenberg_ratios():
    assert nirenberg_ratios(_sine(31, 0.0)) == (0.0, 0.0)
    r_l8, r_dl4 = nirenberg_ratios(_sine(127, 1.0))
    assert r_l8 == pytest.approx(0.4743, abs=5e-3)
    assert r_dl4 == pytest.approx(0.6710, abs=5e-3)


def test_mass_balance_of_zero_trajectory():
    traj = _recorded_run(_sine(31, 0.0), 1e-4, 1e-5, cadence=1)
    balance = mass_balance_residual(traj)
    assert balance.max_abs == 0.0
    assert balance.series.size == 10


@pytest.mark.parametrize("scheme", list(SchemeKind))
@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_mass_balance_holds_to_roundoff_over_first_hundred_steps(scheme, variant):
    traj = run(
        _sine(127),
        1e-3,
        SchemeConfig(scheme=scheme, dt=1e-5),
        BUMP,
        variant,
        cadence=100,
        keep_steps=100,
    )
    balance = mass_balance_residual(traj, variant=variant)
    assert balance.series.size == 100
    assert balance.max_scaled <= 1e-11


def test_mass_balance_with_forcing():
    u0 = _sine(63)
    forcing = sample_field(u0.grid, lambda x: 10.0 * np.sin(np.pi * x))
    traj = run(u0, 1e-4, SchemeConfig(dt=1e-5), BUMP, cadence=1, forcing=lambda t: forcing)
    assert traj.final.balance.forcing_mass > 0.0
    assert mass_balance_residual(traj).max_scaled <= 1e-11


def test_mass_balance_needs_step_level_states():
    traj = _recorded_run(_sine(31), 1e-3, 1e-5, cadence=10)
    with pytest.raises(CadenceError):
        mass_balance_residual(traj)


def test_estimate_report_of_zero_trajectory_passes_every_check():
    traj = _recorded_run(_sine(31, 0.0), 1e-4, 1e-5, cadence=1)
    report = build_estimate_report(traj)

    assert report.fitted_c2 == 0.0
    assert report.linf_qt == 0.0
    assert report.mass_balance_max == 0.0
    lines = estimate_checks(report)
    assert "discrete mass balance" in [line.name for line in lines]
    assert all(line.status == "pass" for line in lines)


def test_estimate_report_dict_round_trip_and_comparison():
    report = build_estimate_report(_recorded_run(_sine(31), 2e-3, 1e-5, cadence=20))
    again = EstimateReport.from_dict({**report.to_dict(), "unrelated": 1})
    assert dataclasses.asdict(again) == dataclasses.asdict(report)

    lines = compare_reports(report, again)
    assert [line.name for line in lines][:4] == [
        "linf_qt grid-stable",
        "sup_grad_L2 grid-stable",
        "a_D3 grid-stable",
        "fitted_c2 grid-stable",
    ]
    assert all(line.status == "pass" for line in lines)


def test_comparison_warns_on_unstable_quantities():
    report = build_estimate_report(_recorded_run(_sine(31), 2e-3, 1e-5, cadence=20))
    drifted = dataclasses.replace(report, linf_qt=report.linf_qt * 1.5)
    status = {line.name: line.status for line in compare_reports(report, drifted)}
    assert status["linf_qt grid-stable"] == "warn"
    assert status["sup_grad_L2 grid-stable"] == "pass"


def test_field_construction_guards_snapshots():
    with pytest.raises(ValueError):
        Field(make_grid(7), np.zeros(8))
