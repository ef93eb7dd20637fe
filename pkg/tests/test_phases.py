import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastophase.phases import (
    LATTICE_ANISOTROPY,
    DegeneratePairError,
    PhaseSystem,
    UnsupportedDimensionError,
    check_triangle,
    eval_potential,
    geodesic_distance,
    phase_distance_matrix,
    well_distance_fn,
    write_distance_csv,
)

D12 = 4 * np.sqrt(2) / 3


def test_double_well_values(double_well):
    assert eval_potential(double_well, [1.0]) == 0.0
    assert eval_potential(double_well, [0.0]) == pytest.approx(1.0, abs=1e-15)


def test_product_potential_vanishes_at_wells():
    sys = PhaseSystem.from_family("product-of-squared-distances", [[0.0, 0.0], [1.0, 0.5]], R=2.0)
    assert eval_potential(sys, sys.wells[1]) == 0.0
    assert sys.check_potential() > 0


def test_potential_rejects_nonfinite(double_well):
    with pytest.raises(ValueError):
        eval_potential(double_well, [np.nan])


def test_zero_length_path(double_well):
    assert geodesic_distance(double_well, [-1.0], [-1.0]) == 0.0


@pytest.mark.parametrize("a, b, expected", [(-1.0, 1.0, D12), (0.0, 1.0, D12 / 2)])
def test_double_well_closed_form(double_well, a, b, expected):
    assert geodesic_distance(double_well, [a], [b]) == pytest.approx(expected, abs=1e-3)


def test_distance_matrix_double_well(double_well):
    d = phase_distance_matrix(double_well)
    assert np.all(np.diag(d) == 0.0)
    assert d[0, 1] == d[1, 0] == pytest.approx(D12, abs=1e-3)


def test_collinear_wells_add_up():
    sys = PhaseSystem.from_family("product-of-squared-distances", [[0.0], [1.0], [2.0]], R=2.5)
    d = phase_distance_matrix(sys, closure=False)

    # independent 1-D quadrature of sqrt(2 Phi) between consecutive wells
    def integral(lo, hi):
        x = np.linspace(lo, hi, 20001)
        f = np.sqrt(2 * sys.phi(x[:, None]))
        return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x)))

    assert d[0, 1] == pytest.approx(integral(0, 1), rel=1e-6)
    assert d[0, 2] == pytest.approx(d[0, 1] + d[1, 2], rel=1e-9)


def test_check_triangle_examples():
    assert check_triangle([[0, 1], [1, 0]]) == []
    bad = check_triangle(np.array([[0, 1, 3], [1, 0, 1], [3, 1, 0]]), 1e-9)
    assert (1, 2, 3) in bad and (3, 2, 1) in bad
    assert len(bad) == 2


@pytest.mark.parametrize("family", ["double-well", "product-of-squared-distances",
                                    "perturbed-quadratic-wells"])
def test_no_triangle_violations_2d(family):
    if family == "double-well":
        sys = PhaseSystem.from_family(family, [[-0.5], [1.0]], R=1.6)
    else:
        wells = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.9, 0.8]]
        sys = PhaseSystem.from_family(family, wells, R=1.6, lattice=81)
    d = phase_distance_matrix(sys)
    assert check_triangle(d, 1e-6) == []
    assert np.all(d[~np.eye(len(d), dtype=bool)] > 0)


def test_well_distance_fn(double_well):
    assert well_distance_fn(double_well, 0, [-1.0]) == 0.0
    assert well_distance_fn(double_well, 0, [0.0]) == pytest.approx(D12 / 2, abs=1e-3)
    d = double_well.distance_matrix
    assert well_distance_fn(double_well, 0, [1.0]) == pytest.approx(d[0, 1], abs=1e-6)


def test_unsupported_dimension():
    wells = np.eye(4)
    sys = PhaseSystem.from_family("product-of-squared-distances", wells, R=1.5)
    with pytest.raises(UnsupportedDimensionError):
        sys.geodesic_distance(wells[0], wells[1])


def test_invalid_systems():
    with pytest.raises(ValueError):
        PhaseSystem.from_family("double-well", [[1.0], [1.0]], R=2.0)
    with pytest.raises(ValueError):
        PhaseSystem.from_family("double-well", [[-1.0], [1.0]], R=1.0)
    with pytest.raises(ValueError):
        PhaseSystem.from_family("no-such-family", [[-1.0], [1.0]], R=2.0)
    assert issubclass(DegeneratePairError, ValueError)


@pytest.fixture(scope="module")
def planar():
    return PhaseSystem.from_family("perturbed-quadratic-wells",
                                   [[0.0, 0.0], [1.0, 0.0], [0.3, 0.9]], R=1.5, lattice=101)


def test_symmetry_and_refinement(planar):
    a, b = planar.wells[0], planar.wells[2]
    assert planar.geodesic_distance(a, b) == pytest.approx(planar.geodesic_distance(b, a), abs=1e-3)
    res = planar._solver.distance(a, b)
    assert res.distance <= res.raw + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.4, 1.4), min_size=2, max_size=2))
def test_reverse_triangle_and_lipschitz(planar, z):
    z = np.array([z])
    d = planar.distance_matrix
    tables = planar.well_tables
    for i, j in itertools.product(range(planar.m), repeat=2):
        # tabulated values carry the lattice anisotropy of 8-connectivity
        tol = LATTICE_ANISOTROPY * np.max(d) + 1e-2
        assert abs(tables[i](z)[0] - tables[j](z)[0]) <= d[i, j] + tol
    for t in tables:
        assert np.linalg.norm(t.gradient(z)) <= planar.speed(z)[0] + 1e-12


def test_distance_csv(tmp_path):
    path = tmp_path / "d.csv"
    write_distance_csv(path, [[0, D12], [D12, 0]], ["note"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# note"
    assert lines[1] == "0,1.88561808"
