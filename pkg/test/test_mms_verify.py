import numpy as np
import pytest

from gch_model.gch_model import CoefficientFamily, CoefficientSpec, NonlinearityVariant
from grid_ops.grid_ops import make_grid
from mms_verify.mms_verify import (
    ForcingKind,
    ManufacturedSolution,
    StudyKind,
    convergence_study,
    manufactured_forcing,
    symbolic_forcing,
)

CONSTANT_TWO = CoefficientSpec(CoefficientFamily.CONSTANT, {"M": 2.0}, 2.0, 2.0)
BUMP = CoefficientSpec(CoefficientFamily.RATIONAL_BUMP, {"base": 2.0, "gain": 1.0}, 2.0, 3.0)


@pytest.mark.parametrize("build", [manufactured_forcing, symbolic_forcing])
def test_zero_amplitude_gives_zero_forcing(build):
    ms = ManufacturedSolution(amplitude=0.0)
    forcing = build(ms, CONSTANT_TWO, NonlinearityVariant.PLAIN, 0.3, make_grid(31))
    assert np.all(forcing.values == 0.0)


@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_discrete_forcing_approaches_symbolic_forcing(variant):
    ms = ManufacturedSolution(amplitude=1.0, decay_rate=1.0)
    gaps = []
    for n in (63, 127):
        grid = make_grid(n)
        discrete = manufactured_forcing(ms, CONSTANT_TWO, variant, 0.0, grid).values
        symbolic = symbolic_forcing(ms, CONSTANT_TWO, variant, 0.0, grid).values
        gaps.append(np.max(np.abs(discrete - symbolic)))
    assert 3.0 <= gaps[0] / gaps[1] <= 5.0


def test_forcing_vanishes_at_late_times():
    ms = ManufacturedSolution(amplitude=1.0, decay_rate=1.0)
    forcing = manufactured_forcing(ms, BUMP, NonlinearityVariant.PLAIN, 50.0, make_grid(31))
    assert np.max(np.abs(forcing.values)) < 1e-15


def test_symbolic_forcing_needs_a_constant_coefficient():
    with pytest.raises(ValueError):
        symbolic_forcing(ManufacturedSolution(), BUMP, NonlinearityVariant.PLAIN, 0.0, make_grid(31))


def test_manufactured_solution_rejects_fractional_modes():
    with pytest.raises(ValueError):
        ManufacturedSolution(mode=1.5)
    assert ManufacturedSolution(amplitude=0.5, decay_rate=2.0, mode=3).to_dict() == {
        "form": "decaying_mode",
        "A": 0.5,
        "lambda": 2.0,
        "k": 3,
    }


@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_spatial_order_is_two(variant):
    ms = ManufacturedSolution(amplitude=0.5, decay_rate=0.5)
    report = convergence_study(
        ms,
        CONSTANT_TWO,
        variant,
        [(31, 1e-5), (63, 1e-5), (127, 1e-5)],
        t_final=0.02,
        kind=StudyKind.SPATIAL,
    )
    assert not report.degenerate
    assert report.settings["forcing"] == "symbolic"
    assert report.fitted_spatial_order == pytest.approx(2.0, abs=0.3)
    assert report.fitted_temporal_order is None


@pytest.mark.parametrize("variant", list(NonlinearityVariant))
def test_temporal_order_is_one(variant):
    ms = ManufacturedSolution(amplitude=0.5, decay_rate=2.0)
    report = convergence_study(
        ms,
        BUMP,
        variant,
        [(63, 4e-5), (63, 2e-5), (63, 1e-5)],
        t_final=0.02,
        kind=StudyKind.TEMPORAL,
    )
    assert report.settings["forcing"] == "discrete"
    assert report.fitted_temporal_order == pytest.approx(1.0, abs=0.2)
    assert report.errors[0] > report.errors[1] > report.errors[2]


def test_zero_amplitude_study_is_flagged_degenerate():
    report = convergence_study(
        ManufacturedSolution(amplitude=0.0),
        CONSTANT_TWO,
        NonlinearityVariant.PLAIN,
        [(15, 1e-4), (31, 1e-4), (63, 1e-4)],
        t_final=1e-3,
        kind=StudyKind.SPATIAL,
        forcing_kind=ForcingKind.DISCRETE,
    )
    assert report.degenerate
    assert report.fitted_spatial_order is None
    assert report.to_dict()["degenerate"] is True


def test_study_needs_three_resolutions():
    with pytest.raises(ValueError):
        convergence_study(
            ManufacturedSolution(),
            CONSTANT_TWO,
            NonlinearityVariant.PLAIN,
            [(15, 1e-4), (31, 1e-4)],
            t_final=1e-3,
            kind=StudyKind.SPATIAL,
        )
