"""Multiwell potentials, geodesic well distances and surface tensions.

The surface tension between two phases is the geodesic distance between
their wells in the degenerate metric ``sqrt(2 Phi) |dz|``.  Distances are
computed by Dijkstra on a lattice over the box ``[-R, R]^h`` followed by a
local refinement of the extracted polyline.
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import dijkstra

DEFAULT_LATTICE = {1: 201, 2: 201, 3: 41}
# worst relative overestimate of lattice path lengths with 8-connectivity
LATTICE_ANISOTROPY = 1.0 / np.cos(np.pi / 8) - 1.0
REFINE_NODES = 128
REFINE_STEPS = 200
REFINE_RTOL = 1e-8

_GAUSS_T, _GAUSS_W = leggauss(3)
_GAUSS_T = 0.5 * (_GAUSS_T + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


class UnsupportedDimensionError(ValueError):
    pass


class DegeneratePairError(ValueError):
    pass


def _as_points(z, h):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    if z.shape[-1] != h:
        raise ValueError(f"expected trailing dimension {h}, got shape {z.shape}")
    return z


# ---------------------------------------------------------------------------
# potential families
# ---------------------------------------------------------------------------

class ProductOfSquaredDistances:
    """``Phi(z) = scale * prod_a |z - p_a|^2``."""

    name = "product-of-squared-distances"

    def __init__(self, wells, scale=1.0):
        self.wells = np.asarray(wells, dtype=float)
        self.scale = float(scale)

    def value(self, z):
        d2 = np.sum((z[..., None, :] - self.wells) ** 2, axis=-1)
        return self.scale * np.prod(d2, axis=-1)

    def grad(self, z):
        diff = z[..., None, :] - self.wells
        d2 = np.sum(diff**2, axis=-1)
        m = d2.shape[-1]
        out = np.zeros(z.shape)
        for a in range(m):
            others = np.prod(np.delete(d2, a, axis=-1), axis=-1)
            out += 2.0 * others[..., None] * diff[..., a, :]
        return self.scale * out


class DoubleWell(ProductOfSquaredDistances):
    """One-dimensional quartic double well, normalized so that wells at
    -1 and 1 give ``(1 - z^2)^2``."""

    name = "double-well"

    def __init__(self, wells):
        wells = np.asarray(wells, dtype=float)
        if wells.shape != (2, 1):
            raise ValueError("double-well needs exactly two wells in h=1")
        half = 0.5 * abs(wells[1, 0] - wells[0, 0])
        if half == 0:
            raise ValueError("double-well wells must be distinct")
        super().__init__(wells, scale=half**-4)


class PerturbedQuadraticWells:
    """Harmonic blend of quadratic wells with per-well stiffness:
    ``Phi(z) = 1 / sum_a 1 / (k_a |z - p_a|^2)``.

    Near ``p_a`` the potential behaves like ``k_a |z - p_a|^2``.
    """

    name = "perturbed-quadratic-wells"

    def __init__(self, wells, stiffness=None):
        self.wells = np.asarray(wells, dtype=float)
        m = len(self.wells)
        if stiffness is None:
            stiffness = 1.0 + 0.25 * np.arange(m)
        self.stiffness = np.asarray(stiffness, dtype=float)
        if self.stiffness.shape != (m,) or np.any(self.stiffness <= 0):
            raise ValueError("stiffness must be one positive value per well")

    def _parts(self, z):
        diff = z[..., None, :] - self.wells
        q = self.stiffness * np.sum(diff**2, axis=-1)
        at_well = np.any(q == 0.0, axis=-1)
        with np.errstate(divide="ignore"):
            s = np.sum(1.0 / np.where(q == 0.0, 1.0, q), axis=-1)
        return diff, q, s, at_well

    def value(self, z):
        _, _, s, at_well = self._parts(z)
        return np.where(at_well, 0.0, 1.0 / s)

    def grad(self, z):
        diff, q, s, at_well = self._parts(z)
        qs = np.where(q == 0.0, 1.0, q)
        dq = 2.0 * self.stiffness[:, None] * diff
        ds = -np.sum(dq / (qs**2)[..., None], axis=-2)
        g = -ds / (s**2)[..., None]
        return np.where(at_well[..., None], 0.0, g)


FAMILIES = {
    "double-well": lambda wells, **kw: DoubleWell(wells),
    "product-of-squared-distances": lambda wells, **kw: ProductOfSquaredDistances(wells),
    "perturbed-quadratic-wells": lambda wells, stiffness=None, **kw: PerturbedQuadraticWells(
        wells, stiffness
    ),
}


# ---------------------------------------------------------------------------
# phase system
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhaseSystem:
    """Wells, multiwell potential and the box radius ``R``.

    Immutable; the distance matrix and lattice graph are computed lazily
    and cached.
    """

    wells: np.ndarray
    potential: object
    R: float
    lattice: int | None = None
    family: str = field(default="custom")

    def __post_init__(self):
        wells = np.atleast_2d(np.asarray(self.wells, dtype=float))
        object.__setattr__(self, "wells", wells)
        if len(wells) < 2:
            raise ValueError("need at least two wells")
        for a, b in itertools.combinations(range(len(wells)), 2):
            if np.allclose(wells[a], wells[b]):
                raise ValueError(f"wells {a} and {b} coincide")
        if not self.R > np.max(np.linalg.norm(wells, axis=1)):
            raise ValueError("box radius R must exceed every well norm")
        if self.lattice is None and self.h in DEFAULT_LATTICE:
            object.__setattr__(self, "lattice", DEFAULT_LATTICE[self.h])
        vals = self.potential.value(wells)
        if np.any(np.abs(vals) > 1e-12):
            raise ValueError("potential does not vanish at the wells")

    @classmethod
    def from_family(cls, family, wells, R, lattice=None, **kwargs):
        try:
            make = FAMILIES[family]
        except KeyError:
            raise ValueError(f"unknown potential family {family!r}") from None
        return cls(np.asarray(wells, dtype=float), make(wells, **kwargs), R, lattice, family)

    @property
    def h(self) -> int:
        return self.wells.shape[1]

    @property
    def m(self) -> int:
        return self.wells.shape[0]

    # -- potential -----------------------------------------------------
    def phi(self, z):
        return self.potential.value(_as_points(z, self.h))

    def speed(self, z):
        """Metric density ``sqrt(2 Phi)``."""
        return np.sqrt(2.0 * np.maximum(self.phi(z), 0.0))

    def speed_grad(self, z):
        z = _as_points(z, self.h)
        s = self.speed(z)
        g = self.potential.grad(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = g / s[..., None]
        return np.where((s > 1e-300)[..., None], out, 0.0)

    def check_potential(self, samples=4000, tol=1e-3, seed=0):
        """Sample the box; return the smallest Phi found outside the
        ``tol``-balls around the wells (must be positive)."""
        rng = np.random.default_rng(seed)
        z = rng.uniform(-self.R, self.R, size=(samples, self.h))
        dist = np.min(np.linalg.norm(z[:, None, :] - self.wells, axis=-1), axis=1)
        z = z[dist > tol]
        return float(np.min(self.phi(z)))

    # -- distances -----------------------------------------------------
    @cached_property
    def _solver(self):
        return GeodesicSolver(self)

    def geodesic_distance(self, a, b) -> float:
        return self._solver.distance(a, b).distance

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        return phase_distance_matrix(self)

    def excursion_radius(self) -> float:
        """Largest norm reached by the refined inter-well geodesics."""
        r = float(np.max(np.linalg.norm(self.wells, axis=1)))
        for a, b in itertools.combinations(range(self.m), 2):
            path = self._solver.distance(self.wells[a], self.wells[b]).path
            r = max(r, float(np.max(np.linalg.norm(path, axis=1))))
        return r

    @cached_property
    def well_tables(self):
        return [WellDistanceTable(self, a) for a in range(self.m)]

    def nearest_well(self, z):
        """Index of the nearest well in the geodesic metric (ties to the
        lowest index)."""
        z = _as_points(z, self.h)
        vals = np.stack([t(z) for t in self.well_tables], axis=-1)
        return np.argmin(vals, axis=-1)


def eval_potential(sys: PhaseSystem, z) -> float | np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite phase value")
    out = sys.phi(z)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# geodesic solver
# ---------------------------------------------------------------------------

@dataclass
class GeodesicResult:
    distance: float
    raw: float
    path: np.ndarray


class GeodesicSolver:
    """Lattice Dijkstra plus polyline refinement for one phase system."""

    def __init__(self, sys: PhaseSystem):
        if sys.h > 3:
            raise UnsupportedDimensionError(
                f"geodesic solver supports h <= 3, got h={sys.h}"
            )
        self.sys = sys
        self.n = int(sys.lattice)
        self.axis = np.linspace(-sys.R, sys.R, self.n)
        self.spacing = self.axis[1] - self.axis[0]
        self.shape = (self.n,) * sys.h
        self._graph = None

    @property
    def graph(self):
        if self._graph is None:
            self._graph = self._build_graph()
        return self._graph

    def _build_graph(self):
        h, n = self.sys.h, self.n
        idx = np.arange(n**h).reshape(self.shape)
        rows, cols, weights = [], [], []
        offsets = [o for o in itertools.product((-1, 0, 1), repeat=h) if o > (0,) * h]
        for off in offsets:
            src = tuple(slice(max(0, -o), n - max(0, o)) for o in off)
            dst = tuple(slice(max(0, o), n - max(0, -o)) for o in off)
            a = idx[src].ravel()
            b = idx[dst].ravel()
            pa = self.node_coords(a)
            pb = self.node_coords(b)
            length = np.linalg.norm(pb - pa, axis=1)
            w = length * self.sys.speed(0.5 * (pa + pb))
            rows.append(a)
            cols.append(b)
            weights.append(np.maximum(w, 1e-300))
        # one spare slot for a virtual source node
        size = n**h + 1
        g = sparse.coo_matrix(
            (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        )
        return g.tocsr()

    def node_coords(self, flat):
        multi = np.unravel_index(flat, self.shape)
        return np.stack([self.axis[i] for i in multi], axis=-1)

    def cell_corners(self, point):
        """Flat indices of the lattice cell corners containing ``point``."""
        k = np.clip(
            np.floor((point + self.sys.R) / self.spacing).astype(int), 0, self.n - 2
        )
        corners = [k + np.array(o) for o in itertools.product((0, 1), repeat=self.sys.h)]
        return np.array([np.ravel_multi_index(tuple(c), self.shape) for c in corners])

    def _connector(self, point, corners):
        pc = self.node_coords(corners)
        return np.linalg.norm(pc - point, axis=1) * self.sys.speed(0.5 * (pc + point))

    def from_source(self, a, return_predecessors=False):
        """Dijkstra from an arbitrary point through a virtual source node."""
        a = np.asarray(a, dtype=float)
        virt = self.n**self.sys.h
        corners = self.cell_corners(a)
        w = np.maximum(self._connector(a, corners), 1e-300)
        extra = sparse.csr_matrix(
            (w, (np.full(len(corners), virt), corners)), shape=self.graph.shape
        )
        return dijkstra(
            self.graph + extra,
            directed=False,
            indices=virt,
            return_predecessors=return_predecessors,
        )

    def raw_distance(self, a, b):
        a = _as_points(a, self.sys.h).ravel()
        b = _as_points(b, self.sys.h).ravel()
        dist, pred = self.from_source(a, return_predecessors=True)
        corners = self.cell_corners(b)
        total = dist[corners] + self._connector(b, corners)
        best = int(np.argmin(total))
        node = int(corners[best])
        chain = []
        virt = self.n**self.sys.h
        while node != virt and node >= 0:
            chain.append(node)
            node = int(pred[node])
        pts = self.node_coords(np.array(chain[::-1], dtype=int)) if chain else np.empty((0, self.sys.h))
        path = np.vstack([a, pts, b])
        return float(total[best]), path

    def distance(self, a, b) -> GeodesicResult:
        a = _as_points(a, self.sys.h).ravel()
        b = _as_points(b, self.sys.h).ravel()
        for p in (a, b):
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite endpoint")
            if np.any(np.abs(p) > self.sys.R + 1e-12):
                raise ValueError("endpoint outside the box [-R, R]^h")
        if np.array_equal(a, b):
            return GeodesicResult(0.0, 0.0, np.vstack([a, b]))
        raw, path = self.raw_distance(a, b)
        if self.sys.h == 1:
            # in one dimension every path covers the segment [a, b], so the
            # straight segment is the geodesic; integrate it with breakpoints
            # at the wells where sqrt(2 Phi) has kinks
            value, path = _segment_integral(self.sys, a[0], b[0])
            return GeodesicResult(value, raw, path)
        start = resample_polyline(path, REFINE_NODES)
        refined = refine_path(self.sys, start)
        best = min(refined, path, key=lambda p: path_length(self.sys, p))
        return GeodesicResult(path_length(self.sys, best), raw, best)


def _segment_integral(sys, a, b, panels=REFINE_NODES - 1):
    lo, hi = min(a, b), max(a, b)
    wells = np.sort(sys.wells[:, 0])
    breaks = np.concatenate([[lo], wells[(wells > lo) & (wells < hi)], [hi]])
    total = 0.0
    for u, v in zip(breaks[:-1], breaks[1:]):
        k = max(8, int(np.ceil(panels * (v - u) / (hi - lo))))
        nodes = np.linspace(u, v, k + 1)[:, None]
        total += path_length(sys, nodes)
    grid = np.linspace(a, b, panels + 1)[:, None]
    return total, grid


def path_length(sys: PhaseSystem, path) -> float:
    """Metric length of a polyline: 3-point Gauss rule per segment."""
    path = np.asarray(path, dtype=float)
    seg = np.diff(path, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    pts = path[:-1, None, :] + _GAUSS_T[None, :, None] * seg[:, None, :]
    s = sys.speed(pts)
    return float(np.sum(lengths * (s @ _GAUSS_W)))


def path_length_grad(sys: PhaseSystem, path):
    path = np.asarray(path, dtype=float)
    seg = np.diff(path, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    unit = seg / np.maximum(lengths, 1e-300)[:, None]
    pts = path[:-1, None, :] + _GAUSS_T[None, :, None] * seg[:, None, :]
    s = sys.speed(pts)
    gs = sys.speed_grad(pts)
    savg = s @ _GAUSS_W
    g_left = -unit * savg[:, None] + lengths[:, None] * np.einsum(
        "k,skh->sh", _GAUSS_W * (1.0 - _GAUSS_T), gs
    )
    g_right = unit * savg[:, None] + lengths[:, None] * np.einsum(
        "k,skh->sh", _GAUSS_W * _GAUSS_T, gs
    )
    grad = np.zeros_like(path)
    grad[:-1] += g_left
    grad[1:] += g_right
    return grad


def resample_polyline(path, n):
    path = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    path = path[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    t = np.linspace(0.0, cum[-1], n)
    return np.stack([np.interp(t, cum, path[:, k]) for k in range(path.shape[1])], axis=1)


def refine_path(sys: PhaseSystem, path, steps=REFINE_STEPS, rtol=REFINE_RTOL):
    """Projected gradient descent on the interior nodes of a polyline.

    The tangential part of the gradient is removed so nodes do not bunch.
    Nodes are projected onto the box ``[-R, R]^h``.
    """
    path = np.array(path, dtype=float)
    energy = path_length(sys, path)
    step = None
    for _ in range(steps):
        g = path_length_grad(sys, path)
        g[0] = 0.0
        g[-1] = 0.0
        tangent = np.zeros_like(path)
        tangent[1:-1] = path[2:] - path[:-2]
        tn = np.linalg.norm(tangent, axis=1)
        tangent[1:-1] /= np.maximum(tn[1:-1], 1e-300)[:, None]
        d = -(g - np.sum(g * tangent, axis=1)[:, None] * tangent)
        dn2 = float(np.sum(d * d))
        if dn2 == 0.0:
            break
        if step is None:
            seglen = np.mean(np.linalg.norm(np.diff(path, axis=0), axis=1))
            step = 0.5 * seglen / np.sqrt(np.max(np.sum(d * d, axis=1)))
        else:
            step *= 2.0
        accepted = False
        for _ in range(50):
            trial = np.clip(path + step * d, -sys.R, sys.R)
            e = path_length(sys, trial)
            if e <= energy - 1e-4 * step * dn2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = (energy - e) / max(energy, 1e-300)
        path, energy = trial, e
        if improvement < rtol:
            break
    return path


# ---------------------------------------------------------------------------
# distance matrix and triangle inequality
# ---------------------------------------------------------------------------

def geodesic_distance(sys: PhaseSystem, a, b) -> float:
    return sys.geodesic_distance(a, b)


def phase_distance_matrix(sys: PhaseSystem, closure: bool = True, workers: int = 1) -> np.ndarray:
    """Surface tensions ``d_ab = d_Phi(p_a, p_b)``.

    Both orientations are computed and averaged; the diagonal is exactly
    zero.  With ``closure`` the matrix is replaced by its shortest-path
    closure, which only swaps an entry for the length of a concatenated
    path through a third well and is therefore still an upper bound.
    """
    m = sys.m
    d = np.zeros((m, m))
    pairs = list(itertools.permutations(range(m), 2))

    def one(pair):
        a, b = pair
        return sys.geodesic_distance(sys.wells[a], sys.wells[b])

    if workers > 1:
        sys._solver.graph  # build the shared lattice once, before fanning out
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, pairs))
    else:
        values = [one(p) for p in pairs]
    for (a, b), v in zip(pairs, values):
        d[a, b] = v
    d = 0.5 * (d + d.T)
    if closure:
        for k in range(m):
            d = np.minimum(d, d[:, [k]] + d[[k], :])
    np.fill_diagonal(d, 0.0)
    return d


def check_triangle(d, tol=1e-9) -> list[tuple[int, int, int]]:
    """Triples (a, b, c), 1-based, with ``d_ac > d_ab + d_bc + tol``."""
    d = np.asarray(d, dtype=float)
    m = len(d)
    bad = []
    for a, b, c in itertools.product(range(m), repeat=3):
        if d[a, c] - d[a, b] - d[b, c] > tol:
            bad.append((a + 1, b + 1, c + 1))
    return bad


def well_distance_fn(sys: PhaseSystem, alpha: int, z) -> float:
    """``phi_alpha(z) = d_Phi(p_alpha, z)`` by a refined geodesic."""
    return sys.geodesic_distance(sys.wells[alpha], z)


def write_distance_csv(path, d, header_lines: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        for row in np.asarray(d):
            w.writerow([f"{v:.9g}" for v in row])


# ---------------------------------------------------------------------------
# tabulated well distances
# ---------------------------------------------------------------------------

class WellDistanceTable:
    """``phi_alpha`` tabulated on the geodesic lattice.

    Values come from a single Dijkstra sweep; gradients are central
    differences interpolated multilinearly and then clipped to the metric
    bound ``|grad phi_alpha| <= sqrt(2 Phi)`` that the exact distance
    function satisfies.
    """

    def __init__(self, sys: PhaseSystem, alpha: int):
        self.sys = sys
        self.alpha = alpha
        solver = sys._solver
        dist = solver.from_source(sys.wells[alpha])
        values = dist[:-1].reshape(solver.shape)
        self.values = values
        axes = (solver.axis,) * sys.h
        self._value = RegularGridInterpolator(axes, values)
        grads = np.gradient(values, solver.spacing)
        if sys.h == 1:
            grads = [grads]
        self.raw_gradient = np.stack(grads, axis=-1)
        self._grad = RegularGridInterpolator(axes, self.raw_gradient)

    def _clip(self, z):
        return np.clip(z, -self.sys.R, self.sys.R)

    def __call__(self, z):
        z = self._clip(_as_points(z, self.sys.h))
        flat = z.reshape(-1, self.sys.h)
        return self._value(flat).reshape(z.shape[:-1])

    def gradient(self, z, clip=True):
        z = self._clip(_as_points(z, self.sys.h))
        flat = z.reshape(-1, self.sys.h)
        g = self._grad(flat)
        if clip:
            bound = self.sys.speed(flat)
            norm = np.linalg.norm(g, axis=1)
            scale = np.where(norm > bound, bound / np.maximum(norm, 1e-300), 1.0)
            g = g * scale[:, None]
        return g.reshape(z.shape)
