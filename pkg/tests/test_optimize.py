import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elastophase.energy import EnergyModel
from elastophase.fields import DeformationField, Grid, boundary_map, initial_deformation
from elastophase.optimize import (
    InfeasibleStateError,
    MinimizeConfig,
    initial_phase,
    minimize_eps,
    min_det,
    project_phase,
    safeguarded_step_y,
)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-10, 10)), st.floats(0.1, 5))
def test_projection_idempotent_and_bounded(z, R):
    p = project_phase(z, R)
    assert np.all(np.linalg.norm(p, axis=-1) <= R * (1 + 1e-12))
    assert np.array_equal(project_phase(p, R), p)


def test_config_validation():
    with pytest.raises(ValueError):
        MinimizeConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        MinimizeConfig(epsilon=0.1, backtrack=1.0)
    with pytest.raises(ValueError):
        MinimizeConfig(epsilon=0.1, det_floor=1.0)


@pytest.fixture
def tiny(elastic_sys, spec):
    grid = Grid(2, 2)
    model = EnergyModel(grid, spec, elastic_sys, 0.2)
    y = DeformationField.affine(grid, np.eye(2)).values
    z = np.full(grid.node_shape + (1,), 0.5)
    return model, y, z


def test_step_zero_direction(tiny):
    model, y, z = tiny
    cfg = MinimizeConfig(epsilon=0.2)
    t, trial, f = safeguarded_step_y(model, y, z, np.zeros_like(y), 1.0, cfg)
    assert t == 1.0
    assert np.array_equal(trial, y) and f == model.objective(y, z)


def test_step_halves_on_inversion(tiny):
    model, _, z = tiny
    y = DeformationField.affine(model.grid, np.diag([1.3, 0.9])).values
    y[1, 1] += [0.1, 0.05]
    gy, _ = model.gradient(y, z)
    free = np.zeros_like(y)
    free[1, 1] = 1.0
    # scaled so the full step moves the only free node by 2, far outside its cells
    direction = -gy * free
    direction *= 2.0 / np.linalg.norm(direction)
    assert min_det(model.grid, y + direction) <= 0
    cfg = MinimizeConfig(epsilon=0.2)
    t, trial, f = safeguarded_step_y(model, y, z, direction, 1.0, cfg)
    assert 0 < t < 1.0
    assert min_det(model.grid, trial) > 0 and f < model.objective(y, z)


def test_step_descends(tiny):
    model, _, z = tiny
    y = DeformationField.affine(model.grid, np.diag([1.3, 0.9])).values
    gy, _ = model.gradient(y, z)
    direction = -gy
    cfg = MinimizeConfig(epsilon=0.2)
    f0 = model.objective(y, z)
    t, trial, f = safeguarded_step_y(model, y, z, direction, 1.0, cfg, f0)
    assert t > 0 and f < f0
    assert f <= f0 + cfg.sufficient_decrease * t * float(np.sum(gy * direction))


def test_initial_phase_patterns(elastic_sys):
    grid = Grid(8, 8)
    for pattern in ("stripes", "random", "uniform"):
        z = initial_phase(grid, elastic_sys, pattern, seed=1)
        assert z.shape == grid.node_shape + (1,)
        assert np.max(np.abs(z)) <= elastic_sys.R
    assert np.array_equal(initial_phase(grid, elastic_sys, "random", 4), initial_phase(grid, elastic_sys, "random", 4))
    with pytest.raises(ValueError):
        initial_phase(grid, elastic_sys, "checkerboard")


def test_rejects_infeasible_start(elastic_sys, spec):
    grid = Grid(4, 4)
    bad = DeformationField.affine(grid, np.diag([1.0, -1.0]))
    with pytest.raises(InfeasibleStateError):
        minimize_eps(MinimizeConfig(epsilon=0.2), elastic_sys, spec, bad, np.zeros(grid.node_shape))
    good = DeformationField.affine(grid, np.eye(2))
    with pytest.raises(InfeasibleStateError):
        minimize_eps(MinimizeConfig(epsilon=0.2), elastic_sys, spec, good, np.full(grid.node_shape, 9.0))


def _run(sys, spec, seed=0, n=12, iters=25, **kw):
    grid = Grid(n, n)
    init = initial_deformation(grid, boundary_map("shear", amount=0.1))
    z0 = initial_phase(grid, sys, "random", seed)
    cfg = MinimizeConfig(epsilon=0.15, max_outer_iters=iters, seed=seed, **kw)
    return init, minimize_eps(cfg, sys, spec, init, z0)


def test_minimizer_contracts(elastic_sys, spec):
    init, st_ = _run(elastic_sys, spec)
    obj = np.array([r["objective"] for r in st_.history])
    assert np.all(np.diff(obj) <= 0)
    assert min(r["min_det"] for r in st_.history) > 0
    mask = init.dirichlet_mask
    assert np.array_equal(st_.defo.values[mask], init.boundary_data[mask])
    assert np.max(np.linalg.norm(st_.z, axis=-1)) <= elastic_sys.R
    assert st_.termination in {"max_iters", "stagnation", "stationary", "converged"}


def test_minimizer_deterministic(elastic_sys, spec):
    _, a = _run(elastic_sys, spec, iters=10)
    _, b = _run(elastic_sys, spec, iters=10)
    assert np.array_equal(a.defo.values, b.defo.values) and np.array_equal(a.z, b.z)
    assert a.history == b.history


def test_frozen_deformation(elastic_sys, spec):
    init, st_ = _run(elastic_sys, spec, iters=5, freeze_y=True)
    assert np.array_equal(st_.defo.values, init.values)


def test_mass_penalty_reduces_mass_error(elastic_sys, flat_spec):
    from elastophase.energy import mass_vector

    target = [0.7]
    _, free = _run(elastic_sys, flat_spec, iters=30, freeze_y=True)
    _, pen = _run(elastic_sys, flat_spec, iters=30, freeze_y=True,
                  mass_penalty_weight=50.0, mass_target=target)
    err = lambda s: abs(mass_vector(s.defo, s.z)[0] - target[0])  # noqa: E731
    assert err(pen) < err(free)


def test_checkpoints(tmp_path, elastic_sys, spec):
    grid = Grid(6, 6)
    init = initial_deformation(grid, boundary_map("identity"))
    cfg = MinimizeConfig(epsilon=0.2, max_outer_iters=4, checkpoint_every=2, tol=0.0)
    minimize_eps(cfg, elastic_sys, spec, init, initial_phase(grid, elastic_sys), checkpoint_dir=tmp_path)
    assert (tmp_path / "y_000002.bin").exists() and (tmp_path / "z_000002.bin").exists()
