"""Alternating projected gradient descent for the diffuse energy.

Each outer iteration runs a few safeguarded descent steps in the
deformation (Dirichlet nodes frozen, cell determinants kept above a
fraction of their current minimum) and then a few projected descent steps
in the phase field (projection onto the ball ``|z| <= R``).  Directions
are the nodal gradients divided by the cell area, a lumped-mass scaling
that makes step lengths resolution independent.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .energy import EnergyModel
from .fields import DeformationField, Grid, det_cof, gradient
from .phases import PhaseSystem
from .stored_energy import StoredEnergySpec


class InfeasibleStateError(ValueError):
    pass


@dataclass
class MinimizeConfig:
    epsilon: float
    max_outer_iters: int = 200
    inner_iters_y: int = 5
    inner_iters_z: int = 5
    initial_step: float = 1.0
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 40
    det_floor: float = 0.1
    tol: float = 1e-8
    gradient_tol: float = 1e-8
    stagnation_limit: int = 20
    mass_penalty_weight: float = 0.0
    mass_target: list | None = None
    seed: int = 0
    freeze_y: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        positive = ["epsilon", "initial_step", "max_outer_iters", "max_backtracks", "stagnation_limit"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must lie in (0, 1)")
        if not 0 <= self.det_floor < 1:
            raise ValueError("det_floor must lie in [0, 1)")
        if min(self.inner_iters_y, self.inner_iters_z, self.tol, self.gradient_tol,
               self.mass_penalty_weight, self.checkpoint_every) < 0:
            raise ValueError("iteration counts and tolerances must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MinimizerState:
    defo: DeformationField
    z: np.ndarray
    history: list = field(default_factory=list)
    termination: str = ""

    @property
    def final(self) -> dict:
        return self.history[-1]


HISTORY_COLUMNS = ["iter", "bulk", "interface", "total", "penalty", "objective",
                   "step_y", "step_z", "min_det", "grad_norm"]


def project_phase(z, R: float) -> np.ndarray:
    """Rescale node values with ``|z| > R`` onto the sphere of radius R.

    Points within a few ulps of the sphere are left alone, which makes the
    map exactly idempotent.
    """
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    scale = np.where(norm > R * (1.0 + 1e-14), R / np.where(norm > 0, norm, 1.0), 1.0)
    return z * scale


def min_det(grid: Grid, y) -> float:
    from .fields import cell_gradient

    return float(np.min(det_cof(cell_gradient(grid, y))[0]))


def safeguarded_step_y(model: EnergyModel, y, z, direction, step: float, cfg: MinimizeConfig,
                       f0: float | None = None, slope: float | None = None):
    """Backtrack from ``step`` until the determinant floor and the
    sufficient-decrease condition hold.

    ``direction`` is a descent direction (``y + t direction``).  Returns
    ``(accepted_step, trial_y, trial_objective)``; the step is 0 when no
    trial is accepted.
    """
    grid = model.grid
    current = min_det(grid, y)
    if f0 is None:
        f0 = model.objective(y, z)
    if slope is None:
        gy, _ = model.gradient(y, z)
        slope = float(np.sum(gy * direction))
    t = step
    for _ in range(cfg.max_backtracks + 1):
        trial = y + t * direction
        if min_det(grid, trial) >= cfg.det_floor * current and min_det(grid, trial) > 0:
            ft = model.objective(trial, z)
            if ft <= f0 + cfg.sufficient_decrease * t * slope:
                return t, trial, ft
        t *= cfg.backtrack
    return 0.0, y, f0


def _step_z(model: EnergyModel, y, z, gz, step, cfg, f0):
    R = model.sys.R
    direction = -gz / model.grid.cell_area
    t = step
    for _ in range(cfg.max_backtracks + 1):
        trial = project_phase(z + t * direction, R)
        ft = model.objective(y, trial)
        if ft <= f0 + cfg.sufficient_decrease * float(np.sum(gz * (trial - z))):
            return t, trial, ft
        t *= cfg.backtrack
    return 0.0, z, f0


def _projected_gradient_norm(model, y, z, gy, gz):
    gz_proj = project_phase(z - gz / model.grid.cell_area, model.sys.R) - z
    return float(np.sqrt(np.sum((gy / model.grid.cell_area) ** 2) + np.sum(gz_proj**2)))


def check_feasible(defo: DeformationField, z, R: float):
    det = det_cof(gradient(defo))[0]
    if np.any(det <= 0):
        idx = tuple(int(i) for i in np.argwhere(det <= 0)[0])
        raise InfeasibleStateError(f"initial deformation inverts cell {idx}")
    if np.max(np.linalg.norm(z, axis=-1)) > R + 1e-12:
        raise InfeasibleStateError("initial phase field leaves the ball |z| <= R")
    mask = defo.dirichlet_mask
    if not np.array_equal(defo.values[mask], defo.boundary_data[mask]):
        raise InfeasibleStateError("initial deformation violates Dirichlet data")


def initial_phase(grid: Grid, sys: PhaseSystem, pattern: str = "stripes", seed: int = 0,
                  noise: float = 0.05, n_stripes: int | None = None, values=None) -> np.ndarray:
    """Node phase field: a well assignment plus uniform noise."""
    rng = np.random.default_rng(seed)
    if pattern == "stripes":
        k = sys.m if n_stripes is None else n_stripes
        x = grid.nodes()[..., 0] / grid.lx
        labels = np.minimum((x * k).astype(int), k - 1) % sys.m
    elif pattern == "random":
        labels = rng.integers(0, sys.m, size=grid.node_shape)
    elif pattern == "file":
        if values is None:
            raise ValueError("pattern 'file' needs values")
        base = np.asarray(values, dtype=float).reshape(grid.node_shape + (sys.h,))
        labels = None
    elif pattern == "uniform":
        labels = np.zeros(grid.node_shape, dtype=int)
    else:
        raise ValueError(f"unknown initialization pattern {pattern!r}")
    if labels is not None:
        base = sys.wells[labels]
    z = base + rng.uniform(-noise, noise, size=base.shape)
    return project_phase(z, sys.R)


def minimize_eps(cfg: MinimizeConfig, sys: PhaseSystem, spec: StoredEnergySpec,
                 init_def: DeformationField, init_z, checkpoint_dir=None,
                 callback=None) -> MinimizerState:
    grid = init_def.grid
    z = np.asarray(init_z, dtype=float)
    if z.ndim == 2:
        z = z[..., None]
    check_feasible(init_def, z, sys.R)
    model = EnergyModel(grid, spec, sys, cfg.epsilon, cfg.mass_penalty_weight, cfg.mass_target)
    mask = init_def.dirichlet_mask
    free = (~mask)[..., None].astype(float)
    y = init_def.values.copy()
    z = z.copy()

    terms = model.terms(y, z)
    f = terms["objective"]
    if not np.isfinite(f):
        raise InfeasibleStateError("initial energy is not finite")
    history = [_row(0, terms, 0.0, 0.0, np.nan)]
    step_y = step_z = cfg.initial_step
    failures = 0
    reason = "max_iters"

    for it in range(1, cfg.max_outer_iters + 1):
        f_start = f
        ty_last = tz_last = 0.0
        if not cfg.freeze_y:
            for _ in range(cfg.inner_iters_y):
                gy, _ = model.gradient(y, z)
                direction = -gy * free / grid.cell_area
                slope = float(np.sum(gy * direction))
                if slope == 0.0:
                    break
                t, y_new, f_new = safeguarded_step_y(model, y, z, direction, step_y, cfg, f, slope)
                if t == 0.0:
                    failures += 1
                    step_y = cfg.initial_step
                    if failures >= cfg.stagnation_limit:
                        break
                    continue
                failures = 0
                y = np.where(mask[..., None], init_def.values, y_new)
                f = f_new
                ty_last = t
                step_y = min(2.0 * t, 1e6)
        for _ in range(cfg.inner_iters_z):
            if failures >= cfg.stagnation_limit:
                break
            _, gz = model.gradient(y, z)
            if not np.any(gz):
                break
            t, z_new, f_new = _step_z(model, y, z, gz, step_z, cfg, f)
            if t == 0.0:
                failures += 1
                step_z = cfg.initial_step
                continue
            failures = 0
            z, f = z_new, f_new
            tz_last = t
            step_z = min(2.0 * t, 1e6)

        gy, gz = model.gradient(y, z)
        if cfg.freeze_y:
            gy = np.zeros_like(gy)
        gnorm = _projected_gradient_norm(model, y, z, gy * free, gz)
        terms = model.terms(y, z)
        history.append(_row(it, terms, ty_last, tz_last, gnorm))
        if callback is not None:
            callback(it, y, z, terms)
        if checkpoint_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            _checkpoint(checkpoint_dir, it, grid, y, z)
        if failures >= cfg.stagnation_limit:
            reason = "stagnation"
            break
        if gnorm < cfg.gradient_tol:
            reason = "stationary"
            break
        if f_start - f <= cfg.tol * max(abs(f_start), 1e-300):
            reason = "converged"
            break

    defo = DeformationField(grid, y, mask, init_def.boundary_data)
    return MinimizerState(defo, z, history, reason)


def _row(it, terms, ty, tz, gnorm):
    row = {k: terms[k] for k in ("bulk", "interface", "total", "penalty", "objective", "min_det")}
    row.update(iter=it, step_y=ty, step_z=tz, grad_norm=gnorm)
    return row


def _checkpoint(directory, it, grid, y, z):
    from .io import write_field

    os.makedirs(directory, exist_ok=True)
    write_field(os.path.join(directory, f"y_{it:06d}.bin"), grid, y)
    write_field(os.path.join(directory, f"z_{it:06d}.bin"), grid, z)
