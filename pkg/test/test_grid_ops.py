import numpy as np
import pytest

from gch_model.gch_model import CoefficientFamily, CoefficientSpec
from grid_ops.grid_ops import (
    BCClass,
    Field,
    GridMismatchError,
    GridSizingError,
    NonFiniteFieldError,
    NormKind,
    apply_derivative,
    apply_inverse_neg_laplacian,
    boundary_flux,
    boundary_third_derivative,
    inner_product,
    integral,
    make_grid,
    norm,
    sample_field,
)


def _dense_neg_laplacian(grid):
    n, h = grid.n_interior, grid.h
    return (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2


def test_make_grid_rejects_too_few_nodes():
    with pytest.raises(GridSizingError):
        make_grid(6)
    grid = make_grid(7)
    assert grid.h == pytest.approx(1.0 / 8.0)
    np.testing.assert_allclose(grid.nodes, np.arange(1, 8) / 8.0)
    assert grid.nodes_with_endpoints[0] == 0.0 and grid.nodes_with_endpoints[-1] == 1.0


def test_grid_is_hashable_and_compares_by_size():
    assert make_grid(31) == make_grid(31)
    assert len({make_grid(31), make_grid(31), make_grid(63)}) == 2


@pytest.mark.parametrize("k", [1, 2, 3])
def test_inverse_laplacian_eigen_relation(k):
    grid = make_grid(127)
    mode = sample_field(grid, lambda x: np.sin(k * np.pi * x))
    lam_h = (2.0 / grid.h**2) * (1.0 - np.cos(k * np.pi * grid.h))

    w = apply_inverse_neg_laplacian(mode)

    expected = mode.values / lam_h
    assert w.bc_class is BCClass.PINNED
    assert np.max(np.abs(w.values - expected)) <= 1e-11 * np.max(np.abs(expected))


def test_inverse_laplacian_matches_dense_solve_on_random_fields():
    grid = make_grid(127)
    dense = _dense_neg_laplacian(grid)
    rng = np.random.default_rng(7)
    for _ in range(50):
        values = rng.standard_normal(grid.n_interior)
        w = apply_inverse_neg_laplacian(Field(grid, values))
        reference = np.linalg.solve(dense, values)
        assert np.linalg.norm(w.values - reference) <= 1e-10 * np.linalg.norm(reference)


def test_fourth_derivative_of_pinned_field_is_laplacian_squared():
    grid = make_grid(31)
    u = Field(grid, np.random.default_rng(1).standard_normal(grid.n_interior))

    d4 = apply_derivative(u, 4).values
    lap = apply_derivative(u, 2).values
    lap_lap = apply_derivative(Field(grid, lap), 2).values

    np.testing.assert_allclose(d4, lap_lap, rtol=0, atol=1e-11 * np.max(np.abs(d4)))
    dense = _dense_neg_laplacian(grid)
    np.testing.assert_allclose(d4, dense @ dense @ u.values, rtol=0, atol=1e-11 * np.max(np.abs(d4)))


def test_second_derivative_of_pinned_field_vanishes_at_endpoints():
    grid = make_grid(31)
    d2 = apply_derivative(sample_field(grid, lambda x: np.sin(np.pi * x)), 2)
    assert d2.bc_class is BCClass.FREE
    assert d2.edges == (0.0, 0.0)


@pytest.mark.parametrize(
    "order, exact",
    [
        (1, lambda x: np.pi * np.cos(np.pi * x)),
        (2, lambda x: -(np.pi**2) * np.sin(np.pi * x)),
        (3, lambda x: -(np.pi**3) * np.cos(np.pi * x)),
        (4, lambda x: np.pi**4 * np.sin(np.pi * x)),
    ],
)
def test_derivatives_converge_at_second_order(order, exact):
    errors = []
    for n in (31, 63):
        grid = make_grid(n)
        d = apply_derivative(sample_field(grid, lambda x: np.sin(np.pi * x)), order)
        interior = np.max(np.abs(d.values - exact(grid.nodes)))
        edges = np.max(np.abs(np.asarray(d.edges) - exact(np.array([0.0, 1.0]))))
        errors.append(max(interior, edges))
    assert 3.5 <= errors[0] / errors[1] <= 4.5


def test_free_field_ghosts_are_exact_for_low_degree_polynomials():
    grid = make_grid(15)
    u = sample_field(grid, lambda x: x**2, BCClass.FREE)
    du = apply_derivative(u, 1)
    np.testing.assert_allclose(du.values, 2.0 * grid.nodes, atol=1e-10)
    assert du.edges == pytest.approx((0.0, 2.0), abs=1e-8)

    without_edges = Field(grid, u.values, BCClass.FREE)
    assert without_edges.endpoint_values == pytest.approx((0.0, 1.0), abs=1e-10)


def test_inner_product_of_orthogonal_modes_is_roundoff():
    grid = make_grid(127)
    s1 = sample_field(grid, lambda x: np.sin(np.pi * x))
    s2 = sample_field(grid, lambda x: np.sin(2 * np.pi * x))
    assert abs(inner_product(s1, s2)) <= 1e-16 * grid.n_interior
    assert inner_product(s1, s1) == pytest.approx(0.5, rel=1e-12)


def test_trapezoid_uses_free_field_edges():
    grid = make_grid(127)
    cos2 = sample_field(grid, lambda x: 2.0 * np.pi**2 * np.cos(np.pi * x) ** 2, BCClass.FREE)
    assert integral(cos2) == pytest.approx(np.pi**2, abs=1e-10)


def test_inner_product_rejects_mismatched_grids():
    with pytest.raises(GridMismatchError):
        inner_product(Field(make_grid(7), np.ones(7)), Field(make_grid(15), np.ones(15)))


def test_field_rejects_non_finite_values():
    values = np.ones(7)
    values[3] = np.nan
    with pytest.raises(NonFiniteFieldError):
        Field(make_grid(7), values)


def test_field_values_are_read_only():
    u = Field(make_grid(7), np.ones(7))
    with pytest.raises(ValueError):
        u.values[0] = 2.0


@pytest.mark.parametrize("kind", list(NormKind))
def test_norms_are_absolutely_homogeneous(kind):
    grid = make_grid(63)
    u = sample_field(grid, lambda x: np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x))
    for c in (-2.5, 0.0, 3.0):
        assert norm(c * u, kind) == pytest.approx(abs(c) * norm(u, kind), rel=1e-13, abs=1e-300)


def test_known_norm_values_for_sine():
    grid = make_grid(127)
    u = sample_field(grid, lambda x: np.sin(np.pi * x))
    assert norm(u, NormKind.L2) == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert norm(u, NormKind.LINF) == pytest.approx(1.0, rel=1e-15)
    assert norm(u, NormKind.L4) == pytest.approx((3.0 / 8.0) ** 0.25, rel=1e-10)
    lam_h = (2.0 / grid.h**2) * (1.0 - np.cos(np.pi * grid.h))
    assert norm(u, NormKind.HMINUS1) == pytest.approx(np.sqrt(0.5 / lam_h), rel=1e-10)


def test_linf_includes_free_edges():
    grid = make_grid(7)
    u = Field(grid, np.zeros(7), BCClass.FREE, edges=(0.0, -4.0))
    assert norm(u, NormKind.LINF) == 4.0


def test_boundary_flux_is_exact_for_quartics():
    grid = make_grid(127)
    u = sample_field(grid, lambda x: x**2 * (1.0 - x) ** 2)
    assert boundary_third_derivative(u) == pytest.approx((-12.0, 12.0), rel=1e-7)

    spec = CoefficientSpec(CoefficientFamily.CONSTANT, {"M": 2.0}, 2.0, 2.0)
    assert boundary_flux(u, spec) == pytest.approx((-24.0, 24.0), rel=1e-7)


def test_inner_product_ignores_endpoints_while_integral_uses_them():
    grid = make_grid(9)
    ones = Field(grid, np.ones(9), BCClass.FREE)
    assert inner_product(ones, ones) == pytest.approx(0.9, rel=1e-14)
    assert integral(ones * ones) == pytest.approx(1.0, rel=1e-12)


def test_inverse_neg_laplacian_is_symmetric_and_positive():
    grid = make_grid(127)
    rng = np.random.default_rng(11)
    for _ in range(20):
        f = Field(grid, rng.standard_normal(127))
        g = Field(grid, rng.standard_normal(127))
        left = inner_product(f, apply_inverse_neg_laplacian(g))
        right = inner_product(apply_inverse_neg_laplacian(f), g)
        ff = inner_product(f, apply_inverse_neg_laplacian(f))
        gg = inner_product(g, apply_inverse_neg_laplacian(g))
        assert ff > 0.0
        assert abs(left - right) <= 1e-12 * np.sqrt(ff * gg)
