"""Bulk, diffuse-interface and sharp-interface energies in Lagrangian form.

The phase field is stored as ``z = zeta o y`` on reference nodes.  With
``F = grad y`` and ``a = grad z F^{-1}`` (the deformed-configuration
gradient of ``zeta``), the interface density pulled back by the area
formula is ``((eps / 2) |a|^2 + Phi(z) / eps) det F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import (
    DeformationField,
    Grid,
    average_adjoint,
    cell_average,
    cell_gradient,
    det_cof,
    distortion,
    gradient,
    gradient_adjoint,
)
from .interfacial import PhasePartition, deformed_perimeter
from .phases import PhaseSystem
from .stored_energy import StoredEnergySpec, dW_dF, dW_dz, eval_W

SHARP = "sharp"
# cells with |F|^2 / det F above this are counted as strongly anisotropic
ANISOTROPY_FLAG = 10.0


@dataclass
class EnergyReport:
    bulk: float
    interface: float
    total: float
    epsilon: float | str
    perimeters: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "epsilon": self.epsilon,
            "bulk": _jsonable(self.bulk),
            "interface": _jsonable(self.interface),
            "total": _jsonable(self.total),
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }
        if self.perimeters is not None:
            out["perimeters"] = np.asarray(self.perimeters).tolist()
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isinf(v):
            return "+infinity" if v > 0 else "-infinity"
        if np.isnan(v):
            return "nan"
        return v
    if isinstance(v, np.integer):
        return int(v)
    return v


def _as_phase(grid: Grid, z, h: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 2 and h == 1:
        z = z[..., None]
    if z.shape != grid.node_shape + (h,):
        raise ValueError(f"phase field must have shape {grid.node_shape + (h,)}")
    return z


def bulk_energy(defo: DeformationField, z, spec: StoredEnergySpec) -> float:
    """``sum_cells W(grad y, z_cell) |cell|``; ``+inf`` if any cell is
    inverted."""
    grid = defo.grid
    z = _as_phase(grid, z, spec.h)
    F = gradient(defo)
    if np.any(det_cof(F)[0] <= 0):
        return np.inf
    return float(np.sum(eval_W(spec, F, cell_average(grid, z))) * grid.cell_area)


def _deformed_gradient(F, gz):
    """``a = grad z F^{-1}`` per cell, together with ``det F``."""
    det, cof = det_cof(F)
    # F^{-1} = cof^T / det
    a = gz @ np.swapaxes(cof, -1, -2) / det[..., None, None]
    return a, det


def interface_energy_diffuse(defo: DeformationField, z, eps: float, sys: PhaseSystem) -> float:
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    grid = defo.grid
    z = _as_phase(grid, z, sys.h)
    F = gradient(defo)
    det = det_cof(F)[0]
    if np.any(det <= 0):
        return np.inf
    a, det = _deformed_gradient(F, cell_gradient(grid, z))
    dens = 0.5 * eps * np.sum(a**2, axis=(-2, -1)) + sys.phi(cell_average(grid, z)) / eps
    return float(np.sum(dens * det) * grid.cell_area)


def interface_energy_sharp(defo: DeformationField, part: PhasePartition, d) -> float:
    per = deformed_perimeter(defo, part)
    return 0.5 * float(np.sum(np.asarray(d) * per))


def liminf_diagnostic(defo: DeformationField, z, eps: float, sys: PhaseSystem):
    """``(lhs, rhs)`` with ``lhs`` the diffuse interface energy and ``rhs``
    the cellwise supremum over wells of ``|grad (phi_alpha o zeta)|``
    integrated over the deformed domain."""
    grid = defo.grid
    z = _as_phase(grid, z, sys.h)
    lhs = interface_energy_diffuse(defo, z, eps, sys)
    F = gradient(defo)
    a, det = _deformed_gradient(F, cell_gradient(grid, z))
    zc = cell_average(grid, z)
    best = np.zeros(grid.cell_shape)
    for table in sys.well_tables:
        gphi = table.gradient(zc)
        best = np.maximum(best, np.linalg.norm(np.einsum("...i,...ij->...j", gphi, a), axis=-1))
    rhs = float(np.sum(best * det) * grid.cell_area)
    return lhs, rhs


def mass_vector(defo: DeformationField, z) -> np.ndarray:
    grid = defo.grid
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = z[..., None]
    det = det_cof(gradient(defo))[0]
    return np.sum(cell_average(grid, z) * det[..., None], axis=(0, 1)) * grid.cell_area


def partition_phase_field(sys: PhaseSystem, part: PhasePartition) -> np.ndarray:
    """Cell-wise well values ``p_{label}``, shape (nx, ny, h)."""
    return sys.wells[part.labels]


def sharp_bulk_energy(defo: DeformationField, part: PhasePartition,
                      spec: StoredEnergySpec, sys: PhaseSystem) -> float:
    grid = defo.grid
    F = gradient(defo)
    if np.any(det_cof(F)[0] <= 0):
        return np.inf
    zc = partition_phase_field(sys, part)
    return float(np.sum(eval_W(spec, F, zc)) * grid.cell_area)


def sharp_report(defo: DeformationField, part: PhasePartition,
                 spec: StoredEnergySpec, sys: PhaseSystem) -> EnergyReport:
    bulk = sharp_bulk_energy(defo, part, spec, sys)
    per = deformed_perimeter(defo, part)
    interface = 0.5 * float(np.sum(sys.distance_matrix * per))
    return EnergyReport(bulk, interface, bulk + interface, SHARP, per)


def diffuse_report(defo: DeformationField, z, eps: float, spec: StoredEnergySpec,
                   sys: PhaseSystem, liminf: bool = True) -> EnergyReport:
    grid = defo.grid
    z = _as_phase(grid, z, sys.h)
    bulk = bulk_energy(defo, z, spec)
    diag = {"mass": mass_vector(defo, z), "min_det": float(np.min(det_cof(gradient(defo))[0]))}
    if not np.isfinite(bulk):
        return EnergyReport(np.inf, np.inf, np.inf, eps, None, diag)
    interface = interface_energy_diffuse(defo, z, eps, sys)
    F = gradient(defo)
    a, det = _deformed_gradient(F, cell_gradient(grid, z))
    grad_part = 0.5 * eps * float(np.sum(np.sum(a**2, axis=(-2, -1)) * det) * grid.cell_area)
    pot_part = interface - grad_part
    diag["equipartition_ratio"] = grad_part / pot_part if pot_part > 0 else float("nan")
    K, k_norm = distortion(defo)
    diag["distortion_Lq"] = k_norm
    diag["anisotropic_cells"] = int(np.sum(K > ANISOTROPY_FLAG))
    if liminf:
        lhs, rhs = liminf_diagnostic(defo, z, eps, sys)
        diag["liminf_lhs"] = lhs
        diag["liminf_rhs"] = rhs
    return EnergyReport(bulk, interface, bulk + interface, eps, None, diag)


class EnergyModel:
    """The discrete objective ``F_eps`` (plus an optional mass penalty) as
    a function of node arrays, with analytic gradients."""

    def __init__(self, grid: Grid, spec: StoredEnergySpec, sys: PhaseSystem, eps: float,
                 mass_weight: float = 0.0, mass_target=None):
        if spec.h != sys.h:
            raise ValueError("stored energy and phase system disagree on h")
        self.grid = grid
        self.spec = spec
        self.sys = sys
        self.eps = float(eps)
        self.mass_weight = float(mass_weight)
        self.mass_target = None if mass_target is None else np.asarray(mass_target, dtype=float)
        if self.mass_weight > 0 and self.mass_target is None:
            raise ValueError("mass penalty needs target masses")

    def _cells(self, y, z):
        grid = self.grid
        F = cell_gradient(grid, y)
        det, cof = det_cof(F)
        return F, det, cof, cell_gradient(grid, z), cell_average(grid, z)

    def terms(self, y, z) -> dict:
        A = self.grid.cell_area
        F, det, cof, gz, zc = self._cells(y, z)
        min_det = float(np.min(det))
        if min_det <= 0:
            inf = np.inf
            return dict(bulk=inf, interface=inf, total=inf, penalty=inf, objective=inf, min_det=min_det)
        bulk = float(np.sum(eval_W(self.spec, F, zc)) * A)
        a = gz @ np.swapaxes(cof, -1, -2) / det[..., None, None]
        dens = 0.5 * self.eps * np.sum(a**2, axis=(-2, -1)) + self.sys.phi(zc) / self.eps
        interface = float(np.sum(dens * det) * A)
        penalty = 0.0
        if self.mass_weight > 0:
            mass = np.sum(zc * det[..., None], axis=(0, 1)) * A
            penalty = 0.5 * self.mass_weight * float(np.sum((mass - self.mass_target) ** 2))
        total = bulk + interface
        return dict(bulk=bulk, interface=interface, total=total, penalty=penalty,
                    objective=total + penalty, min_det=min_det)

    def objective(self, y, z) -> float:
        return self.terms(y, z)["objective"]

    def gradient(self, y, z):
        """``(d objective / d y, d objective / d z)`` on nodes."""
        grid, A = self.grid, self.grid.cell_area
        F, det, cof, gz, zc = self._cells(y, z)
        if np.any(det <= 0):
            raise ValueError("gradient undefined for inverted cells")
        eps = self.eps
        Finv_T = cof / det[..., None, None]
        a = gz @ np.swapaxes(Finv_T, -1, -2)
        a2 = np.sum(a**2, axis=(-2, -1))
        ata = np.swapaxes(a, -1, -2) @ a
        phi = self.sys.phi(zc)
        eye = np.eye(2)

        dF = dW_dF(self.spec, F, zc)
        dF = dF + 0.5 * eps * det[..., None, None] * ((a2[..., None, None] * eye - 2.0 * ata) @ Finv_T)
        dF = dF + (phi / eps)[..., None, None] * cof
        dzc = dW_dz(self.spec, F, zc) + self.sys.potential.grad(zc) * (det / eps)[..., None]
        dgz = eps * det[..., None, None] * (a @ Finv_T)

        if self.mass_weight > 0:
            mass = np.sum(zc * det[..., None], axis=(0, 1)) * A
            r = self.mass_weight * (mass - self.mass_target)
            dF = dF + np.sum(r * zc, axis=-1)[..., None, None] * cof
            dzc = dzc + r * det[..., None]

        gy = gradient_adjoint(grid, dF * A)
        gzn = gradient_adjoint(grid, dgz * A) + average_adjoint(grid, dzc * A)
        return gy, gzn
