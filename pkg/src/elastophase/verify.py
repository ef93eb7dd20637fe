"""Invariant suites for every module, each reporting a measured margin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import energy as en
from . import fields as fl
from . import interfacial as itf
from . import mm1d
from . import optimize as opt
from . import phases as ph
from . import stored_energy as se


@dataclass
class Check:
    module: str
    name: str
    value: float
    tol: float
    passed: bool

    def to_dict(self):
        return {"module": self.module, "name": self.name, "value": float(self.value),
                "tol": float(self.tol), "passed": bool(self.passed)}


def _le(module, name, value, tol):
    return Check(module, name, float(value), tol, bool(value <= tol))


def _ge(module, name, value, tol):
    return Check(module, name, float(value), tol, bool(value >= tol))


def smooth_phase_field(grid: fl.Grid, sys: ph.PhaseSystem, rng) -> np.ndarray:
    """Random smooth node field: a few low Fourier modes inside the box."""
    x = grid.nodes()
    z = np.zeros(grid.node_shape + (sys.h,))
    for k in range(sys.h):
        for _ in range(3):
            kx, ky = rng.integers(1, 4, size=2)
            amp, phase = rng.uniform(0.2, 0.5), rng.uniform(0, 2 * np.pi)
            z[..., k] += amp * np.sin(np.pi * kx * x[..., 0] / grid.lx + phase) \
                * np.cos(np.pi * ky * x[..., 1] / grid.ly)
    z += np.mean(sys.wells, axis=0)
    return opt.project_phase(z, 0.95 * sys.R)


def smooth_deformation(grid: fl.Grid, rng, amplitude=0.03) -> fl.DeformationField:
    a, b = rng.uniform(-amplitude, amplitude, 2)
    A = np.eye(2) + rng.uniform(-0.1, 0.1, (2, 2))

    def fn(x1, x2):
        base = np.stack([A[0, 0] * x1 + A[0, 1] * x2, A[1, 0] * x1 + A[1, 1] * x2])
        bump = np.sin(np.pi * x1 / grid.lx) * np.sin(np.pi * x2 / grid.ly)
        return base + np.stack([a * bump, b * bump])

    return fl.DeformationField.from_map(grid, fn)


def phases_suite(sys: ph.PhaseSystem, seed=0):
    rng = np.random.default_rng(seed)
    out = [_ge("phases", "potential positive off wells", sys.check_potential(seed=seed), 0.0)]
    d = sys.distance_matrix
    out.append(_le("phases", "triangle violations", len(ph.check_triangle(d, 1e-6)), 0))
    out.append(_le("phases", "distance matrix asymmetry", np.max(np.abs(d - d.T)), 0.0))
    if sys.h <= 2:
        a, b = sys.wells[0], sys.wells[1]
        out.append(_le("phases", "geodesic symmetry",
                       abs(sys.geodesic_distance(a, b) - sys.geodesic_distance(b, a)), 1e-3))
        res = sys._solver.distance(a, b)
        out.append(_le("phases", "refined minus raw distance", res.distance - res.raw, 1e-12))
    z = rng.uniform(-sys.R, sys.R, size=(500, sys.h))
    tables = sys.well_tables
    worst = -np.inf
    for i in range(sys.m):
        for j in range(sys.m):
            worst = max(worst, np.max(np.abs(tables[i](z) - tables[j](z)) - d[i, j]))
    out.append(_le("phases", "reverse triangle excess", worst,
                   ph.LATTICE_ANISOTROPY * float(np.max(d)) + 1e-2))
    lip = max(np.max(np.linalg.norm(t.gradient(z), axis=-1) - sys.speed(z)) for t in tables)
    out.append(_le("phases", "well-distance Lipschitz excess", lip, 1e-12))
    return out


def fields_suite(seed=0):
    rng = np.random.default_rng(seed)
    grid = fl.Grid(16, 12, 1.0, 0.75)
    A = np.array([[1.3, 0.2], [-0.1, 0.9]])
    defo = fl.DeformationField.affine(grid, A)
    out = [_le("fields", "affine gradient error", np.max(np.abs(fl.gradient(defo) - A)), 1e-12)]
    F = rng.normal(size=(1000, 2, 2))
    det, cof = fl.det_cof(F)
    res = cof @ np.swapaxes(F, -1, -2) - det[:, None, None] * np.eye(2)
    out.append(_le("fields", "cofactor identity residual", np.max(np.abs(res)), 1e-12))
    K, _ = fl.distortion(smooth_deformation(grid, rng))
    out.append(_ge("fields", "distortion lower bound margin", np.min(K) - 2.0, -1e-12))
    out.append(_le("fields", "Ciarlet-Necas residual (affine)",
                   abs(fl.ciarlet_necas_residual(defo).residual), 1e-10))
    out.append(_le("fields", "Piola residual (affine)",
                   abs(fl.piola_residual(defo, fl.TestField.inside(grid))), 1e-12))
    vals = []
    for n in (16, 32, 64):
        g = fl.Grid(n, n)
        d = fl.DeformationField.from_map(
            g, lambda x1, x2: np.stack([x1 + 0.05 * np.sin(2 * np.pi * x2), x2]))
        vals.append(abs(fl.piola_residual(d, fl.TestField.inside(g))))
    order = np.log2(vals[-2] / vals[-1])
    out.append(_ge("fields", "Piola residual decay order", order, 1.9))
    return out


def stored_energy_suite(spec: se.StoredEnergySpec, seed=0, R=1.5):
    rng = np.random.default_rng(seed)
    out = [_le("stored_energy", "frame indifference", se.frame_indifference_check(spec, 1000, seed), 1e-10)]
    out.append(_ge("stored_energy", "coercivity margin", se.coercivity_check(spec, 10_000, R, seed), 0.0))
    conv = se.convexity_checks(spec, 1000, seed)
    out.append(_le("stored_energy", "midpoint convexity defect", max(conv.values()), 1e-12))
    out.append(_le("stored_energy", "dW/dF finite-difference error", dW_dF_fd_error(spec, rng), 1e-6))
    F = se.random_positive_F(rng, 200)
    worst = 0.0
    for a in range(spec.h + 1):
        z = np.zeros((200, spec.h))
        if a < spec.h:
            z[:, a] = 1.0
        worst = max(worst, np.max(np.abs(se.eval_W(spec, F, z) - spec.phase_energy(F, a))))
    out.append(_le("stored_energy", "mixture consistency", worst, 1e-12))
    return out


def dW_dF_fd_error(spec, rng, samples=100, step=1e-5):
    F = se.random_positive_F(rng, samples, det_range=(0.5, 2.0))
    z = rng.uniform(0.05, 0.95, size=(samples, spec.h)) / spec.h
    G = se.dW_dF(spec, F, z)
    fd = np.zeros_like(G)
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = step
            fd[:, i, j] = (se.eval_W(spec, F + E, z) - se.eval_W(spec, F - E, z)) / (2 * step)
    scale = np.maximum(np.linalg.norm(G, axis=(1, 2)), 1.0)[:, None, None]
    return float(np.max(np.abs(fd - G) / scale))


def interfacial_suite(seed=0):
    rng = np.random.default_rng(seed)
    grid = fl.Grid(12, 10)
    defo = smooth_deformation(grid, rng)
    g = rng.uniform(0, 1, grid.cell_shape)
    mu = itf.interfacial_measure(defo, g)
    psi = rng.normal(size=grid.node_shape + (2,))
    psi[grid.boundary_mask()] = 0.0
    _, cof = fl.det_cof(fl.gradient(defo))
    lhs = np.sum(g[..., None, None] * cof * fl.cell_gradient(grid, psi)) * grid.cell_area
    rhs = np.sum(psi * mu.atoms)
    out = [_le("interfacial", "discrete duality", abs(lhs - rhs), 1e-12)]
    const = itf.interfacial_measure(defo, np.ones(grid.cell_shape))
    out.append(_le("interfacial", "Piola interior atoms", np.max(np.abs(const.atoms[1:-1, 1:-1])), 1e-12))
    whole = itf.total_variation(mu, (0, 2, 0, 2))
    split = itf.total_variation(mu, (0, 0.5, 0, 2)) + itf.total_variation(mu, (0.5, 2, 0, 2))
    out.append(_le("interfacial", "total variation additivity", abs(whole - split), 1e-12))
    part = itf.PhasePartition(rng.integers(0, 3, grid.cell_shape), 3)
    perm = np.array([2, 0, 1])
    P = itf.deformed_perimeter(defo, part)
    Q = itf.deformed_perimeter(defo, itf.PhasePartition(perm[part.labels], 3))
    out.append(_le("interfacial", "relabeling invariance", np.max(np.abs(Q[np.ix_(perm, perm)] - P)), 1e-12))
    gaps = []
    for n in (16, 32, 64):
        gr = fl.Grid(n, n)
        ind, corners = itf.square_indicator(gr, 0.5)
        gaps.append(itf.pushforward_equality_check(
            fl.DeformationField.affine(gr, np.diag([2.0, 1.0])), ind, corners).gap)
    out.append(_ge("interfacial", "pushforward gap refinement ratio", gaps[-2] / gaps[-1], 1.8))
    return out


def energy_suite(sys, spec, seed=0, eps=0.1, states=10):
    rng = np.random.default_rng(seed)
    grid = fl.Grid(10, 8)
    worst_liminf = np.inf
    worst_sum = 0.0
    for _ in range(states):
        defo = smooth_deformation(grid, rng)
        z = smooth_phase_field(grid, sys, rng)
        lhs, rhs = en.liminf_diagnostic(defo, z, eps, sys)
        worst_liminf = min(worst_liminf, lhs - rhs)
        rep = en.diffuse_report(defo, z, eps, spec, sys, liminf=False)
        worst_sum = max(worst_sum, abs(rep.total - rep.bulk - rep.interface))
    out = [_ge("energy", "liminf margin (lhs - rhs)", worst_liminf, -1e-8),
           _le("energy", "total = bulk + interface", worst_sum, 1e-12)]
    out.append(_le("energy", "rotation invariance", rotation_invariance_error(sys, spec, rng, eps), 1e-9))
    out.append(_le("energy", "change-of-variables (affine)", change_of_variables_error(sys, rng, eps), 1e-10))
    return out


def rotation_invariance_error(sys, spec, rng, eps, grid=None):
    grid = fl.Grid(10, 8) if grid is None else grid
    defo = smooth_deformation(grid, rng)
    z = smooth_phase_field(grid, sys, rng)
    th = rng.uniform(0, 2 * np.pi)
    Rm = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    rot = fl.DeformationField(grid, defo.values @ Rm.T, defo.dirichlet_mask, defo.boundary_data @ Rm.T)
    a = en.diffuse_report(defo, z, eps, spec, sys, liminf=False).total
    b = en.diffuse_report(rot, z, eps, spec, sys, liminf=False).total
    return abs(a - b)


def change_of_variables_error(sys, rng, eps):
    """Reference-pullback interface energy against a direct evaluation on
    the deformed (parallelogram) cells, for three affine maps."""
    grid = fl.Grid(8, 6)
    worst = 0.0
    for _ in range(3):
        A = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
        defo = fl.DeformationField.affine(grid, A, rng.normal(size=2))
        z = smooth_phase_field(grid, sys, rng)
        pulled = en.interface_energy_diffuse(defo, z, eps, sys)
        worst = max(worst, abs(pulled - _direct_interface_energy(defo, z, eps, sys)) / max(pulled, 1.0))
    return worst


def _direct_interface_energy(defo, z, eps, sys):
    grid = defo.grid
    y = defo.values
    total = 0.0
    for i in range(grid.nx):
        for j in range(grid.ny):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            pts = np.array([y[c] for c in corners])
            vals = np.array([z[c] for c in corners])
            # least-squares affine fit in deformed coordinates
            M = np.hstack([pts, np.ones((4, 1))])
            coef, *_ = np.linalg.lstsq(M, vals, rcond=None)
            grad = coef[:2].T
            area = fl.shoelace(pts)
            zc = vals.mean(axis=0)
            total += (0.5 * eps * np.sum(grad**2) + float(sys.phi(zc[None])[0]) / eps) * area
    return total


def optimize_suite(sys, spec, seed=0):
    grid = fl.Grid(8, 8)
    init = fl.initial_deformation(grid, fl.boundary_map("identity"))
    z0 = opt.initial_phase(grid, sys, "random", seed)
    cfg = opt.MinimizeConfig(epsilon=0.2, max_outer_iters=15, seed=seed)
    a = opt.minimize_eps(cfg, sys, spec, init, z0)
    b = opt.minimize_eps(cfg, sys, spec, init, z0)
    obj = np.array([r["objective"] for r in a.history])
    out = [_le("optimize", "max energy increase", np.max(np.diff(obj)) if len(obj) > 1 else 0.0, 0.0),
           _ge("optimize", "min cell det", min(r["min_det"] for r in a.history), 1e-300),
           _le("optimize", "max |z| minus R", np.max(np.linalg.norm(a.z, axis=-1)) - sys.R, 1e-12)]
    mask = init.dirichlet_mask
    out.append(_le("optimize", "Dirichlet nodes changed",
                   int(np.sum(a.defo.values[mask] != init.boundary_data[mask])), 0))
    same = all(ra == rb for ra, rb in zip(_hist_bits(a), _hist_bits(b))) and len(a.history) == len(b.history)
    out.append(_le("optimize", "rerun history mismatch", 0 if same else 1, 0))
    z = np.random.default_rng(seed).normal(size=(20, sys.h)) * 2 * sys.R
    p1 = opt.project_phase(z, sys.R)
    out.append(_le("optimize", "projection idempotence", np.max(np.abs(opt.project_phase(p1, sys.R) - p1)), 0.0))
    return out


def _hist_bits(state):
    return [tuple(np.float64(v).tobytes() for v in r.values()) for r in state.history]


def mm1d_suite(sys, eps_list=(0.2, 0.1)):
    out = []
    d = sys.distance_matrix
    for eps in eps_list:
        p = mm1d.optimal_profile(sys, 0, 1, eps)
        out.append(_ge("mm1d", f"profile energy minus d12 (eps={eps})", p.energy - d[0, 1], -1e-6))
        end = max(np.max(np.abs(p.samples[0] - sys.wells[0])), np.max(np.abs(p.samples[-1] - sys.wells[1])))
        out.append(_le("mm1d", f"profile endpoint error (eps={eps})", end, 1e-9))
        out.append(_le("mm1d", f"equipartition ratio (eps={eps})", p.equipartition_ratio, 0.02))
    return out


def run_all(sys, spec, seed=0, R=None):
    R = sys.R if R is None else R
    checks = []
    checks += phases_suite(sys, seed)
    checks += fields_suite(seed)
    checks += stored_energy_suite(spec, seed, R)
    checks += interfacial_suite(seed)
    checks += energy_suite(sys, spec, seed)
    checks += optimize_suite(sys, spec, seed)
    checks += mm1d_suite(sys)
    return checks
