import numpy as np
import pytest

from gch_model.gch_model import (
    CoefficientDomainError,
    CoefficientFamily,
    CoefficientSpec,
    CoefficientWhich,
    HypothesisViolationError,
    NonlinearityVariant,
    eval_coefficient,
    frozen_coefficients,
    khain_sander_coefficient,
    require_hypotheses,
    rhs_divergence_form,
    rhs_expanded_form,
    validate_coefficient,
)
from grid_ops.grid_ops import BCClass, apply_derivative, make_grid, sample_field


def _constant(m, m1=None, m2=None):
    m1 = m if m1 is None else m1
    m2 = m if m2 is None else m2
    return CoefficientSpec(CoefficientFamily.CONSTANT, {"M": m}, m1, m2)


def _bump(base=2.0, gain=1.0, m1=2.0, m2=3.0):
    return CoefficientSpec(CoefficientFamily.RATIONAL_BUMP, {"base": base, "gain": gain}, m1, m2)


def test_constant_coefficient_passes():
    report = validate_coefficient(_constant(2.5), (-3.0, 3.0))
    assert report.passed
    assert report.min_a == report.max_a == 2.5
    assert report.failures == ()
    assert report.smoothness == "closed form"


def test_rational_bump_passes_with_zero_slope_at_origin_reported():
    report = validate_coefficient(_bump())
    assert report.passed
    assert report.min_a == pytest.approx(2.0)
    assert 2.9 < report.max_a < 3.0
    assert report.min_aprime_u >= 0.0
    assert not report.strictly_increasing
    assert report.to_dict()["aprime_positive"] is False


def test_diffusion_below_one_is_rejected():
    report = validate_coefficient(_constant(0.5))
    assert not report.passed
    assert "M1>1 violated" in report.failures

    with pytest.raises(HypothesisViolationError) as err:
        require_hypotheses(_constant(0.5))
    assert "M1>1 violated" in err.value.failures


def test_override_returns_failing_report():
    report = require_hypotheses(_constant(0.5), override=True)
    assert not report.passed


def test_decreasing_away_from_origin_is_rejected():
    report = validate_coefficient(_bump(base=3.0, gain=-0.5, m1=2.5, m2=3.0))
    assert "a'(u)u>=0 violated" in report.failures


def test_declared_bounds_are_checked_against_samples():
    report = validate_coefficient(_bump(m1=2.5, m2=2.5))
    assert "a(u)>=M1 violated" in report.failures
    assert "a(u)<=M2 violated" in report.failures
    assert "M2>=M1 violated" not in report.failures

    assert "M2>=M1 violated" in validate_coefficient(_constant(2.0, 2.0, 1.5)).failures


def test_validation_rejects_bad_sampling():
    with pytest.raises(ValueError):
        validate_coefficient(_constant(2.0), samples=100)
    with pytest.raises(ValueError):
        validate_coefficient(_constant(2.0), (1.0, 1.0))


def test_tabulated_coefficient_is_monotone_and_clamped():
    spec = CoefficientSpec(
        CoefficientFamily.TABULATED,
        {"u": [-5.0, -1.0, 0.0, 1.0, 5.0], "a": [2.8, 2.2, 2.0, 2.2, 2.8]},
        1.9,
        2.9,
    )
    report = validate_coefficient(spec)
    assert report.passed
    assert report.smoothness == "assumed"

    coeff = spec.coefficient
    assert coeff.a(np.array([10.0]))[0] == pytest.approx(2.8)
    assert coeff.a_prime(np.array([10.0]))[0] == 0.0
    u = np.linspace(-0.9, 0.9, 19)
    step = 1e-6
    np.testing.assert_allclose(
        (coeff.antiderivative(u + step) - coeff.antiderivative(u - step)) / (2 * step),
        coeff.a(u),
        rtol=1e-7,
    )
    assert coeff.antiderivative(np.array([0.0]))[0] == 0.0


def test_tabulated_coefficient_rejects_unordered_samples():
    with pytest.raises(ValueError):
        CoefficientSpec(CoefficientFamily.TABULATED, {"u": [0.0, -1.0], "a": [2.0, 2.0]}, 2.0, 2.0)


def test_khain_sander_mapping():
    spec = khain_sander_coefficient(1.0 - np.exp(-2.0))
    assert spec.declared_m1 == pytest.approx(2.0, rel=1e-12)
    assert spec.valid_for_theorem
    assert validate_coefficient(spec).passed

    weak = khain_sander_coefficient(0.5)
    assert weak.declared_m1 == pytest.approx(np.log(2.0))
    assert not weak.valid_for_theorem
    assert "M1>1 violated" in validate_coefficient(weak).failures


@pytest.mark.parametrize("q", [0.0, 1.0, 1.2, -0.1])
def test_khain_sander_rejects_q_outside_unit_interval(q):
    with pytest.raises(CoefficientDomainError):
        khain_sander_coefficient(q)


def test_eval_coefficient_pointwise_values():
    grid = make_grid(7)
    u = sample_field(grid, lambda x: np.ones_like(x), BCClass.FREE)
    spec = _bump()

    assert eval_coefficient(spec, u, CoefficientWhich.A).values == pytest.approx(np.full(7, 2.5))
    antiderivative = eval_coefficient(spec, u, CoefficientWhich.A_ANTIDERIVATIVE)
    assert antiderivative.values == pytest.approx(np.full(7, 3.0 - np.pi / 4.0))
    assert antiderivative.edges == pytest.approx((3.0 - np.pi / 4.0, 3.0 - np.pi / 4.0))


def test_closed_form_derivatives_match_finite_differences():
    coeff = _bump().coefficient
    u = np.linspace(-3.0, 3.0, 61)
    step = 1e-5
    np.testing.assert_allclose((coeff.a(u + step) - coeff.a(u - step)) / (2 * step), coeff.a_prime(u), atol=1e-8)
    np.testing.assert_allclose(
        (coeff.a_prime(u + step) - coeff.a_prime(u - step)) / (2 * step), coeff.a_doubleprime(u), atol=1e-7
    )
    np.testing.assert_allclose(
        (coeff.antiderivative(u + step) - coeff.antiderivative(u - step)) / (2 * step), coeff.a(u), atol=1e-8
    )


@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_zero_is_a_fixed_point_of_the_right_hand_side(variant):
    u = sample_field(make_grid(31), np.zeros_like)
    assert np.all(rhs_divergence_form(u, _bump(), variant).values == 0.0)
    assert np.all(rhs_expanded_form(u, _bump(), variant).values == 0.0)


def test_small_amplitude_linearization():
    grid = make_grid(255)
    eps = 1e-6
    u = sample_field(grid, lambda x: eps * np.sin(np.pi * x))

    rhs = rhs_divergence_form(u, _constant(2.0)).values

    expected = -2.0 * np.pi**4 * u.values
    assert np.max(np.abs(rhs - expected)) <= 1e-4 * np.max(np.abs(expected))


def test_constant_coefficient_rhs_converges_to_symbolic_value():
    errors = []
    for n in (63, 127):
        grid = make_grid(n)
        x = grid.nodes
        u = sample_field(grid, lambda x: np.sin(np.pi * x))
        s, c = np.sin(np.pi * x), np.cos(np.pi * x)
        # -D^2[2 D^2u - u^3] - u^2 for u = sin(pi x)
        d2_cube = np.pi**2 * (6.0 * s * c**2 - 3.0 * s**3)
        exact = -2.0 * np.pi**4 * s + d2_cube - s**2
        errors.append(np.max(np.abs(rhs_divergence_form(u, _constant(2.0)).values - exact)))
    assert 3.5 <= errors[0] / errors[1] <= 4.5


@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_divergence_and_expanded_forms_agree_under_refinement(variant):
    gaps = []
    for n in (63, 127, 255):
        u = sample_field(make_grid(n), lambda x: 0.5 * np.sin(np.pi * x))
        div = rhs_divergence_form(u, _bump(), variant).values
        exp = rhs_expanded_form(u, _bump(), variant).values
        gaps.append(np.max(np.abs(div - exp)))
    assert gaps[0] / gaps[1] > 3.0
    assert gaps[1] / gaps[2] > 3.0


def test_frozen_coefficients():
    grid = make_grid(127)
    u = sample_field(grid, lambda x: np.sin(np.pi * x))

    frozen = frozen_coefficients(u, _constant(2.0))
    assert np.all(frozen.a1.values == 2.0)
    assert np.all(frozen.a2.values == 0.0)
    assert np.all(frozen.a3.values == 0.0)
    np.testing.assert_allclose(frozen.a4.values, 3.0 * u.values**2, rtol=1e-15)

    v = sample_field(grid, lambda x: 0.3 * np.sin(np.pi * x))
    bump = frozen_coefficients(v, _bump())
    exact = 2.0 * bump_prime(v.values) * 0.3 * np.pi * np.cos(np.pi * grid.nodes)
    assert np.max(np.abs(bump.a2.values - exact)) < 1e-3
    assert bump.a2.bc_class is BCClass.FREE
    assert apply_derivative(v, 1).edges[0] == pytest.approx(0.3 * np.pi, rel=1e-3)


def bump_prime(u):
    return 2.0 * u / (1.0 + u**2) ** 2
