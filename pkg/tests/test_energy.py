import numpy as np
import pytest

from elastophase.energy import (
    EnergyModel,
    diffuse_report,
    interface_energy_sharp,
    liminf_diagnostic,
    sharp_report,
)
from elastophase.fields import DeformationField, Grid
from elastophase.interfacial import PhasePartition
from elastophase.verify import (
    change_of_variables_error,
    rotation_invariance_error,
    smooth_deformation,
    smooth_phase_field,
)

D12 = 4 * np.sqrt(2) / 3


def test_sharp_vertical_interface(double_well):
    grid = Grid(16, 8, 1.0, 0.5)
    part = PhasePartition.stripes(grid, 2, 2, axis=0)
    e = interface_energy_sharp(DeformationField.affine(grid, np.eye(2)), part, double_well.distance_matrix)
    assert e == pytest.approx(double_well.distance_matrix[0, 1] * 0.5, abs=1e-9)


def test_sharp_horizontal_interface_stretched(double_well):
    grid = Grid(8, 8, 1.2, 1.0)
    part = PhasePartition.stripes(grid, 2, 2, axis=1)
    d = double_well.distance_matrix
    e = interface_energy_sharp(DeformationField.affine(grid, np.diag([1.0, 3.0])), part, d)
    assert e == pytest.approx(d[0, 1] * 1.2, abs=1e-9)


def test_sharp_report_single_phase_has_no_interface(elastic_sys, spec):
    grid = Grid(6, 6)
    part = PhasePartition(np.zeros(grid.cell_shape, dtype=int), 2)
    rep = sharp_report(DeformationField.affine(grid, np.eye(2)), part, spec, elastic_sys)
    assert rep.interface == 0.0
    assert rep.bulk == pytest.approx(spec.well_minimum(0) * 1.0, abs=1e-12)


def test_inverted_state_is_infinite(elastic_sys, spec):
    grid = Grid(4, 4)
    defo = DeformationField.affine(grid, np.diag([1.0, -1.0]))
    rep = diffuse_report(defo, np.zeros(grid.node_shape + (1,)), 0.1, spec, elastic_sys)
    assert rep.total == np.inf
    assert rep.to_dict()["total"] == "+infinity"


def test_total_is_sum(elastic_sys, spec):
    rng = np.random.default_rng(0)
    grid = Grid(10, 8)
    rep = diffuse_report(smooth_deformation(grid, rng), smooth_phase_field(grid, elastic_sys, rng),
                         0.1, spec, elastic_sys)
    assert rep.total == rep.bulk + rep.interface


def test_liminf_random_states(double_well):
    rng = np.random.default_rng(1)
    grid = Grid(12, 10)
    for _ in range(20):
        defo = smooth_deformation(grid, rng)
        z = smooth_phase_field(grid, double_well, rng)
        lhs, rhs = liminf_diagnostic(defo, z, rng.uniform(0.02, 0.3), double_well)
        assert lhs >= rhs - 1e-8


def test_rotation_invariance(elastic_sys, spec):
    rng = np.random.default_rng(2)
    assert rotation_invariance_error(elastic_sys, spec, rng, 0.1) < 1e-9


def test_change_of_variables(double_well):
    assert change_of_variables_error(double_well, np.random.default_rng(3), 0.15) < 1e-10


@pytest.mark.parametrize("mass_weight", [0.0, 3.0])
def test_gradient_matches_finite_differences(elastic_sys, spec, mass_weight):
    rng = np.random.default_rng(4)
    grid = Grid(5, 4)
    defo = smooth_deformation(grid, rng)
    y = defo.values
    z = smooth_phase_field(grid, elastic_sys, rng)
    model = EnergyModel(grid, spec, elastic_sys, 0.2, mass_weight, [0.3] if mass_weight else None)
    gy, gz = model.gradient(y, z)
    h = 1e-6
    for arr, g in ((y, gy), (z, gz)):
        for _ in range(15):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            if arr is y:
                fd = (model.objective(plus, z) - model.objective(minus, z)) / (2 * h)
            else:
                fd = (model.objective(y, plus) - model.objective(y, minus)) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_model_requires_matching_h(double_well):
    from elastophase.stored_energy import StoredEnergySpec

    three = StoredEnergySpec([1, 1, 1], [np.eye(2)] * 3)
    with pytest.raises(ValueError):
        EnergyModel(Grid(4, 4), three, double_well, 0.1)


def test_anisotropic_cells_flagged(elastic_sys, spec):
    grid = Grid(4, 4)
    z = np.full(grid.node_shape + (1,), 0.5)
    mild = diffuse_report(DeformationField.affine(grid, np.diag([1.5, 1.0])), z, 0.1, spec, elastic_sys)
    strong = diffuse_report(DeformationField.affine(grid, np.diag([10.0, 1.0])), z, 0.1, spec, elastic_sys)
    assert mild.diagnostics["anisotropic_cells"] == 0
    assert strong.diagnostics["anisotropic_cells"] == grid.nx * grid.ny
