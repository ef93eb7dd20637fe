"""One-dimensional optimal transition profiles, recovery sequences built
from them, and the epsilon-sweep harness."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from .energy import diffuse_report, liminf_diagnostic, mass_vector, sharp_report
from .fields import DeformationField, Grid, cell_average, initial_deformation
from .interfacial import PhasePartition
from .optimize import InfeasibleStateError, MinimizeConfig, initial_phase, minimize_eps
from .phases import DegeneratePairError, PhaseSystem, resample_polyline
from .stored_energy import StoredEnergySpec

SAMPLES_PER_EPS = 40
CLAMP_WIDTHS = 5.0


@dataclass
class Profile1D:
    alpha: int
    beta: int
    eps: float
    L: float
    s: np.ndarray
    samples: np.ndarray
    gradient_energy: float
    potential_energy: float
    center: float = 0.0

    @property
    def energy(self) -> float:
        return self.gradient_energy + self.potential_energy

    @property
    def equipartition_ratio(self) -> float:
        """``|gradient part - potential part| / energy``."""
        return abs(self.gradient_energy - self.potential_energy) / self.energy

    def __call__(self, d):
        """Profile value at signed distance ``d`` from its center (clamped
        to the sampled interval)."""
        d = np.asarray(d, dtype=float)
        s = np.clip(d + self.center, self.s[0], self.s[-1])
        return np.stack([np.interp(s, self.s, self.samples[:, k])
                         for k in range(self.samples.shape[1])], axis=-1)

    def reversed(self) -> "Profile1D":
        return Profile1D(self.beta, self.alpha, self.eps, self.L, -self.s[::-1],
                         self.samples[::-1].copy(), self.gradient_energy,
                         self.potential_energy, -self.center)


def _energy_parts(sys, gamma, ds, eps):
    diff = np.diff(gamma, axis=0)
    mid = 0.5 * (gamma[1:] + gamma[:-1])
    grad_part = 0.5 * eps * float(np.sum(diff**2)) / ds
    pot_part = float(np.sum(sys.phi(mid))) * ds / eps
    return grad_part, pot_part


def _equipartition_init(sys, a, b, s, eps):
    """Points along the geodesic from ``a`` to ``b`` placed so that
    ``(eps/2)|gamma'|^2 = Phi(gamma)/eps``, centered at half distance."""
    path = sys._solver.distance(a, b).path
    path = resample_polyline(path, 4001)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    mid = 0.5 * (path[1:] + path[:-1])
    speed = sys.speed(mid)
    metric = np.concatenate([[0.0], np.cumsum(seg * speed)])
    half = 0.5 * metric[-1]
    # arrival "time" along the path: ds = eps |d gamma| / sqrt(2 Phi)
    with np.errstate(divide="ignore"):
        dt = eps * seg / np.maximum(speed, 1e-300)
    t = np.concatenate([[0.0], np.cumsum(np.minimum(dt, 1e6))])
    t0 = np.interp(half, metric, t)
    t = t - t0
    out = np.stack([np.interp(s, t, path[:, k]) for k in range(sys.h)], axis=-1)
    out[0], out[-1] = a, b
    return out


def _potential_hessian(sys, z, step=1e-6):
    h = sys.h
    out = np.zeros(z.shape + (h,))
    for k in range(h):
        e = np.zeros(h)
        e[k] = step
        out[..., :, k] = (sys.potential.grad(z + e) - sys.potential.grad(z - e)) / (2 * step)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def optimal_profile(sys: PhaseSystem, alpha: int, beta: int, eps: float, L: float | None = None,
                    n_samples: int | None = None) -> Profile1D:
    """Minimize ``sum [(eps/2)|gamma'|^2 + Phi(gamma)/eps] ds`` over sampled
    paths on ``[-L, L]`` with ``gamma(-L) = p_alpha``, ``gamma(L) = p_beta``."""
    if alpha == beta:
        raise DegeneratePairError("optimal profile needs two distinct wells")
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    L = max(1.0, 10.0 * eps) if L is None else float(L)
    if L < 10.0 * eps * (1 - 1e-12):
        raise ValueError("half-width must be at least 10 epsilon")
    if n_samples is None:
        n_samples = int(np.ceil(2.0 * L / eps * SAMPLES_PER_EPS)) + 1
    s = np.linspace(-L, L, n_samples)
    ds = s[1] - s[0]
    a, b = sys.wells[alpha], sys.wells[beta]
    h = sys.h
    gamma0 = _equipartition_init(sys, a, b, s, eps)
    n_in = n_samples - 2

    def full(x):
        g = np.empty((n_samples, h))
        g[0], g[-1] = a, b
        g[1:-1] = x.reshape(n_in, h)
        return g

    def fun(x):
        gp, pp = _energy_parts(sys, full(x), ds, eps)
        return gp + pp

    def jac(x):
        g = full(x)
        diff = np.diff(g, axis=0)
        dphi = sys.potential.grad(0.5 * (g[1:] + g[:-1])) * (0.5 * ds / eps)
        out = (eps / ds) * (diff[:-1] - diff[1:]) + dphi[:-1] + dphi[1:]
        return out.ravel()

    lap = sparse.diags(
        [np.full(n_in - 1, -1.0), np.full(n_in, 2.0), np.full(n_in - 1, -1.0)], [-1, 0, 1]
    )
    lap = sparse.kron(lap, sparse.identity(h)) * (eps / ds)

    def hess(x):
        g = full(x)
        Hm = _potential_hessian(sys, 0.5 * (g[1:] + g[:-1])) * (0.25 * ds / eps)
        # midpoint k couples samples k and k+1; interior sample i = k for k >= 1
        diag = Hm[:-1] + Hm[1:]
        off = Hm[1:-1]
        blocks = sparse.block_diag(list(diag), format="csr")
        if n_in > 1:
            upper = _offdiag(off, n_in, h)
            blocks = blocks + upper + upper.T
        return (lap + blocks).tocsr()

    res = minimize(fun, gamma0[1:-1].ravel(), jac=jac, hess=hess, method="Newton-CG",
                   options={"xtol": 1e-12, "maxiter": 200})
    x = res.x if res.fun <= fun(gamma0[1:-1].ravel()) else gamma0[1:-1].ravel()
    gamma = full(x)
    gp, pp = _energy_parts(sys, gamma, ds, eps)
    profile = Profile1D(alpha, beta, eps, L, s, gamma, gp, pp)
    profile.center = _half_energy_point(sys, profile)
    return profile


def _offdiag(off, n_in, h):
    """Block matrix with ``off[k]`` at block position (k, k+1)."""
    k, i, j = np.meshgrid(np.arange(n_in - 1), np.arange(h), np.arange(h), indexing="ij")
    rows = (k * h + i).ravel()
    cols = ((k + 1) * h + j).ravel()
    return sparse.csr_matrix((off.ravel(), (rows, cols)), shape=(n_in * h, n_in * h))


def _half_energy_point(sys, profile: Profile1D) -> float:
    g = profile.samples
    ds = profile.s[1] - profile.s[0]
    diff = np.diff(g, axis=0)
    mid = 0.5 * (g[1:] + g[:-1])
    dens = 0.5 * profile.eps * np.sum(diff**2, axis=1) / ds + sys.phi(mid) * ds / profile.eps
    cum = np.concatenate([[0.0], np.cumsum(dens)])
    return float(np.interp(0.5 * cum[-1], cum, profile.s))


# ---------------------------------------------------------------------------
# recovery sequence
# ---------------------------------------------------------------------------

def _interface_segments(defo: DeformationField, part: PhasePartition):
    """Deformed interface edges as ``(p, q, label_a, label_b)`` arrays."""
    y = defo.values
    lab = part.labels
    ps, qs, la, lb = [], [], [], []
    cut = lab[:-1, :] != lab[1:, :]
    i, j = np.nonzero(cut)
    ps.append(y[i + 1, j]); qs.append(y[i + 1, j + 1])
    la.append(lab[i, j]); lb.append(lab[i + 1, j])
    cut = lab[:, :-1] != lab[:, 1:]
    i, j = np.nonzero(cut)
    ps.append(y[i, j + 1]); qs.append(y[i + 1, j + 1])
    la.append(lab[i, j]); lb.append(lab[i, j + 1])
    return (np.concatenate(ps), np.concatenate(qs), np.concatenate(la), np.concatenate(lb))


def _point_segment_distance(x, p, q, chunk=2048):
    """Distance from each point to the nearest segment and its index."""
    d = q - p
    dd = np.maximum(np.sum(d**2, axis=1), 1e-300)
    best = np.full(len(x), np.inf)
    arg = np.zeros(len(x), dtype=int)
    for start in range(0, len(x), chunk):
        xs = x[start:start + chunk]
        rel = xs[:, None, :] - p[None]
        t = np.clip(np.sum(rel * d[None], axis=2) / dd[None], 0.0, 1.0)
        dist = np.linalg.norm(rel - t[..., None] * d[None], axis=2)
        k = np.argmin(dist, axis=1)
        best[start:start + chunk] = dist[np.arange(len(xs)), k]
        arg[start:start + chunk] = k
    return best, arg


def _node_labels(part: PhasePartition):
    """Per node: the label of its adjacent cells if they agree, else -1."""
    lab = part.labels
    nx, ny = lab.shape
    pad = np.full((nx + 2, ny + 2), -2, dtype=int)
    pad[1:-1, 1:-1] = lab
    quads = [pad[:-1, :-1], pad[1:, :-1], pad[:-1, 1:], pad[1:, 1:]]
    first = np.max(np.stack(quads), axis=0)
    same = np.ones(first.shape, dtype=bool)
    for q in quads:
        same &= (q == first) | (q == -2)
    lo = np.min(np.stack([np.where(q < 0, part.m, q) for q in quads]), axis=0)
    return np.where(same, first, -1), lo, first


def recovery_sequence_2d(defo: DeformationField, part: PhasePartition, eps: float,
                         sys: PhaseSystem, profiles: dict | None = None,
                         clamp: float = CLAMP_WIDTHS) -> np.ndarray:
    """Node phase field ``z = profile(signed deformed distance to the
    interface)``, equal to the well value beyond ``clamp * eps``."""
    grid = defo.grid
    profiles = {} if profiles is None else profiles
    L = max(1.0, 10.0 * eps, clamp * eps)

    def prof(a, b):
        key = (min(a, b), max(a, b))
        if key not in profiles:
            profiles[key] = optimal_profile(sys, key[0], key[1], eps, L)
        p = profiles[key]
        return p if a == key[0] else p.reversed()

    uniform, lo, hi = _node_labels(part)
    z = np.empty(grid.node_shape + (sys.h,))
    on_interface = uniform < 0
    z[~on_interface] = sys.wells[uniform[~on_interface]]
    for idx in zip(*np.nonzero(on_interface)):
        z[idx] = prof(int(lo[idx]), int(hi[idx]))(0.0)[0]

    p, q, la, lb = _interface_segments(defo, part)
    if len(p) == 0:
        return z
    y = defo.values
    for alpha in range(part.m):
        nodes = np.argwhere(uniform == alpha)
        touching = (la == alpha) | (lb == alpha)
        if len(nodes) == 0 or not np.any(touching):
            continue
        seg = np.nonzero(touching)[0]
        dist, k = _point_segment_distance(y[nodes[:, 0], nodes[:, 1]], p[seg], q[seg])
        other = np.where(la[seg][k] == alpha, lb[seg][k], la[seg][k])
        near = dist < clamp * eps
        for beta in np.unique(other[near]):
            sel = near & (other == beta)
            vals = prof(alpha, int(beta))(-dist[sel])
            z[nodes[sel, 0], nodes[sel, 1]] = vals
    return z


def sharp_projection(sys: PhaseSystem, grid: Grid, z) -> PhasePartition:
    """Cell labels: nearest well (geodesic metric) to the cell-averaged z."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = z[..., None]
    return PhasePartition(sys.nearest_well(cell_average(grid, z)), sys.m)


def partition_mass(defo: DeformationField, part: PhasePartition, sys: PhaseSystem) -> np.ndarray:
    from .fields import det_cof, gradient

    det = det_cof(gradient(defo))[0]
    return np.sum(sys.wells[part.labels] * det[..., None], axis=(0, 1)) * defo.grid.cell_area


# ---------------------------------------------------------------------------
# epsilon sweep
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    sys: PhaseSystem
    spec: StoredEnergySpec
    grid: Grid
    boundary: object
    init_pattern: str = "stripes"
    freeze_y: bool = False
    partition: PhasePartition | None = None
    extra: dict = field(default_factory=dict)


SWEEP_COLUMNS = ["epsilon", "F_eps_min", "F_eps_recovery", "F0_sharp", "bulk", "interface",
                 "mass_error", "restarts_used", "wall_time_s", "status", "liminf_margin"]


def gamma_sweep(scenario: Scenario, eps_list, base_cfg: MinimizeConfig, restarts: int = 3,
                track_liminf: bool = False, seed: int | None = None) -> list[dict]:
    """One row per epsilon: best minimized energy over restarts (plus a
    restart seeded with the recovery field), the recovery-sequence energy
    and the sharp energy of the projected partition."""
    rows = []
    seed = base_cfg.seed if seed is None else seed
    sys, spec, grid = scenario.sys, scenario.spec, scenario.grid
    init_def = initial_deformation(grid, scenario.boundary)
    for eps in eps_list:
        t0 = time.perf_counter()
        row = {"epsilon": float(eps), "status": "ok", "restarts_used": 0}
        margins = []

        def cb(it, y, z, terms, _eps=eps):
            lhs, rhs = liminf_diagnostic(init_def.with_values(y), z, _eps, sys)
            margins.append(lhs - rhs)

        callback = cb if track_liminf else None
        best = None
        for r in range(restarts):
            cfg = replace(base_cfg, epsilon=float(eps), seed=seed + r, freeze_y=scenario.freeze_y)
            try:
                if scenario.partition is not None and scenario.init_pattern == "partition":
                    z0 = _partition_nodes(sys, grid, scenario.partition, seed + r)
                else:
                    z0 = initial_phase(grid, sys, scenario.init_pattern, seed + r)
                st = minimize_eps(cfg, sys, spec, init_def, z0, callback=callback)
            except (InfeasibleStateError, ValueError, FloatingPointError) as exc:
                row["status"] = f"failed: {exc}"
                continue
            row["restarts_used"] += 1
            if best is None or st.final["objective"] < best.final["objective"]:
                best = st
        if best is None:
            row.update(F_eps_min=np.nan, F_eps_recovery=np.nan, F0_sharp=np.nan,
                       bulk=np.nan, interface=np.nan, mass_error=np.nan)
            row["wall_time_s"] = time.perf_counter() - t0
            rows.append(row)
            continue
        part = scenario.partition if scenario.partition is not None else \
            sharp_projection(sys, grid, best.z)
        sharp = sharp_report(best.defo, part, spec, sys)
        z_rec = recovery_sequence_2d(best.defo, part, eps, sys)
        rec = diffuse_report(best.defo, z_rec, eps, spec, sys, liminf=False)
        # the recovery field is itself a feasible start; descending from it
        # can only lower the energy
        cfg = replace(base_cfg, epsilon=float(eps), seed=seed, freeze_y=scenario.freeze_y)
        try:
            seeded = minimize_eps(cfg, sys, spec, best.defo, z_rec, callback=callback)
            row["restarts_used"] += 1
            if seeded.final["objective"] < best.final["objective"]:
                best = seeded
        except (InfeasibleStateError, ValueError, FloatingPointError) as exc:
            row["status"] = f"failed: {exc}"
        final = best.final
        row.update(
            F_eps_min=final["total"],
            F_eps_recovery=rec.total,
            F0_sharp=sharp.total,
            bulk=final["bulk"],
            interface=final["interface"],
            mass_error=float(np.linalg.norm(mass_vector(best.defo, z_rec)
                                            - partition_mass(best.defo, part, sys))),
        )
        if track_liminf:
            row["liminf_margin"] = float(min(margins)) if margins else np.nan
        row["wall_time_s"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _partition_nodes(sys, grid, part, seed, noise=0.05):
    uniform, lo, _ = _node_labels(part)
    labels = np.where(uniform < 0, lo, uniform)
    rng = np.random.default_rng(seed)
    z = sys.wells[labels] + rng.uniform(-noise, noise, size=grid.node_shape + (sys.h,))
    from .optimize import project_phase

    return project_phase(z, sys.R)


def recovery_errors(defo: DeformationField, part: PhasePartition, eps_list,
                    sys: PhaseSystem, spec: StoredEnergySpec) -> list[dict]:
    """Recovery-sequence energy against the sharp energy, per epsilon."""
    sharp = sharp_report(defo, part, spec, sys)
    rows = []
    for eps in eps_list:
        z = recovery_sequence_2d(defo, part, eps, sys)
        rep = diffuse_report(defo, z, eps, spec, sys, liminf=False)
        rows.append({
            "epsilon": float(eps), "F_eps_recovery": rep.total, "F0_sharp": sharp.total,
            "relative_error": abs(rep.total - sharp.total) / sharp.total,
            "mass_error": float(np.linalg.norm(mass_vector(defo, z) - partition_mass(defo, part, sys))),
        })
    return rows
