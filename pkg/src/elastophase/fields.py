"""Node and cell fields on a uniform rectangular reference grid.

Nodes are indexed ``[i, j]`` with ``x = (i hx, j hy)``; cell ``[i, j]`` has
corners ``[i, j], [i+1, j], [i, j+1], [i+1, j+1]``.  All cell quantities use
one quadrature point at the cell center, where the bilinear gradient is
exact for affine maps.

Matrix norms are Frobenius throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DET_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per axis")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("side lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def node_shape(self):
        return (self.nx + 1, self.ny + 1)

    @property
    def cell_shape(self):
        return (self.nx, self.ny)

    def nodes(self) -> np.ndarray:
        x = np.linspace(0.0, self.lx, self.nx + 1)
        y = np.linspace(0.0, self.ly, self.ny + 1)
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    def centers(self) -> np.ndarray:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def boundary_loop(self) -> tuple[np.ndarray, np.ndarray]:
        """Counter-clockwise boundary node indices ``(i, j)``."""
        nx, ny = self.nx, self.ny
        i = np.concatenate([
            np.arange(0, nx), np.full(ny, nx), np.arange(nx, 0, -1), np.zeros(ny, int)
        ])
        j = np.concatenate([
            np.zeros(nx, int), np.arange(0, ny), np.full(nx, ny), np.arange(ny, 0, -1)
        ])
        return i, j

    def basis_gradients(self) -> np.ndarray:
        """Center gradients of the four corner basis functions, ordered
        00, 10, 01, 11; shape (4, 2)."""
        ax, ay = 0.5 / self.hx, 0.5 / self.hy
        return np.array([[-ax, -ay], [ax, -ay], [-ax, ay], [ax, ay]])


CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))


def corner_values(grid: Grid, values: np.ndarray):
    """The four corner slices of a node field, in ``CORNERS`` order."""
    nx, ny = grid.nx, grid.ny
    return [values[a : a + nx, b : b + ny] for a, b in CORNERS]


def scatter_corners(grid: Grid, parts) -> np.ndarray:
    """Adjoint of :func:`corner_values`: accumulate per-cell corner
    contributions onto nodes in a fixed order (bit-reproducible)."""
    nx, ny = grid.nx, grid.ny
    out = np.zeros(grid.node_shape + parts[0].shape[2:])
    for (a, b), part in zip(CORNERS, parts):
        out[a : a + nx, b : b + ny] += part
    return out


def cell_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Bilinear gradient at cell centers.

    ``values`` has shape (nx+1, ny+1, c); the result has shape
    (nx, ny, c, 2) with ``[..., a, b] = d values_a / d x_b``.
    """
    v00, v10, v01, v11 = corner_values(grid, values)
    dx = ((v10 - v00) + (v11 - v01)) / (2.0 * grid.hx)
    dy = ((v01 - v00) + (v11 - v10)) / (2.0 * grid.hy)
    return np.stack([dx, dy], axis=-1)


def cell_average(grid: Grid, values: np.ndarray) -> np.ndarray:
    v = corner_values(grid, values)
    return 0.25 * (v[0] + v[1] + v[2] + v[3])


def gradient_adjoint(grid: Grid, cell_dual: np.ndarray) -> np.ndarray:
    """Node forces ``sum_cells P_c . grad N_k`` for a cell field ``P`` of
    shape (nx, ny, c, 2); the transpose of :func:`cell_gradient`."""
    bg = grid.basis_gradients()
    return scatter_corners(grid, [cell_dual @ bg[k] for k in range(4)])


def average_adjoint(grid: Grid, cell_dual: np.ndarray) -> np.ndarray:
    q = 0.25 * cell_dual
    return scatter_corners(grid, [q, q, q, q])


@dataclass
class DeformationField:
    """Node positions ``y`` with Dirichlet data on flagged nodes."""

    grid: Grid
    values: np.ndarray
    dirichlet_mask: np.ndarray = None
    boundary_data: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.node_shape + (2,):
            raise ValueError(f"deformation must have shape {self.grid.node_shape + (2,)}")
        if self.dirichlet_mask is None:
            self.dirichlet_mask = np.zeros(self.grid.node_shape, dtype=bool)
        if self.boundary_data is None:
            self.boundary_data = self.values.copy()
        self.values[self.dirichlet_mask] = self.boundary_data[self.dirichlet_mask]

    @classmethod
    def from_map(cls, grid: Grid, fn, clamp_boundary=True):
        x = grid.nodes()
        y = np.asarray(fn(x[..., 0], x[..., 1]), dtype=float)
        y = np.moveaxis(y, 0, -1)
        mask = grid.boundary_mask() if clamp_boundary else None
        return cls(grid, y, mask, y.copy())

    @classmethod
    def affine(cls, grid: Grid, A, b=(0.0, 0.0), clamp_boundary=True):
        A = np.asarray(A, dtype=float)
        x = grid.nodes()
        y = x @ A.T + np.asarray(b, dtype=float)
        mask = grid.boundary_mask() if clamp_boundary else None
        return cls(grid, y, mask, y.copy())

    def with_values(self, values) -> "DeformationField":
        return DeformationField(self.grid, values, self.dirichlet_mask, self.boundary_data)

    def gradient(self) -> np.ndarray:
        return gradient(self)


def gradient(defo: DeformationField) -> np.ndarray:
    """Per-cell ``grad y`` (nx, ny, 2, 2)."""
    return cell_gradient(defo.grid, defo.values)


def det_cof(F: np.ndarray):
    """Determinant and cofactor of 2x2 matrices, ``cof F F^T = det F I``."""
    a, b = F[..., 0, 0], F[..., 0, 1]
    c, d = F[..., 1, 0], F[..., 1, 1]
    det = a * d - b * c
    cof = np.stack([np.stack([d, -c], -1), np.stack([-b, a], -1)], -2)
    return det, cof


def distortion(defo: DeformationField, q: float = 2.0):
    """Distortion ``K = |F|^2 / det F`` per cell (1 where ``det F`` is not
    positive beyond ``DET_TOL``) and its L^q norm."""
    if not q > 1:
        raise ValueError("q must exceed n - 1 = 1")
    F = gradient(defo)
    det, _ = det_cof(F)
    fro2 = np.sum(F**2, axis=(-2, -1))
    ok = det > DET_TOL
    K = np.where(ok, fro2 / np.where(ok, det, 1.0), 1.0)
    norm = float(np.sum(K**q) * defo.grid.cell_area) ** (1.0 / q)
    return K, norm


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _loop_self_intersects(loop: np.ndarray) -> bool:
    """True when two non-adjacent edges of a closed polyline touch."""
    a = loop
    b = np.roll(loop, -1, axis=0)
    n = len(a)
    scale = max(np.ptp(loop), 1e-300)
    tol = 1e-12 * scale * scale
    for k in range(n):
        others = np.array([j for j in range(n) if j not in (k, (k - 1) % n, (k + 1) % n)])
        if others.size == 0:
            continue
        p0, p1 = a[k], b[k]
        q0, q1 = a[others], b[others]
        d = p1 - p0
        e = q1 - q0
        c1 = _cross(d, q0 - p0)
        c2 = _cross(d, q1 - p0)
        c3 = _cross(e, p0 - q0)
        c4 = _cross(e, p1 - q0)
        proper = (c1 * c2 < -tol * tol) & (c3 * c4 < -tol * tol)
        collinear = (np.abs(c1) <= tol) & (np.abs(c2) <= tol)
        # collinear pieces overlap when their projections on d overlap
        dd = float(d @ d)
        t0 = (q0 - p0) @ d / dd
        t1 = (q1 - p0) @ d / dd
        overlap = collinear & (np.maximum(t0, t1) > 1e-9) & (np.minimum(t0, t1) < 1 - 1e-9)
        touching = (
            (np.abs(c1) <= tol) & (c3 * c4 <= 0) & ~collinear
        ) | ((np.abs(c2) <= tol) & (c3 * c4 <= 0) & ~collinear)
        if np.any(proper | overlap | touching):
            return True
    return False


def shoelace(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def deformed_area(defo: DeformationField):
    """Area of ``y(Omega)`` and a flag telling whether the boundary image
    is not a simple loop.

    A simple loop is measured by the shoelace formula; otherwise the union
    of the deformed cells is measured instead.
    """
    i, j = defo.grid.boundary_loop()
    loop = defo.values[i, j]
    if not _loop_self_intersects(loop):
        return abs(shoelace(loop)), False
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    v00, v10, v01, v11 = corner_values(defo.grid, defo.values)
    quads = np.stack([v00, v10, v11, v01], axis=-2).reshape(-1, 4, 2)
    return float(unary_union([Polygon(q).buffer(0) for q in quads]).area), True


@dataclass
class CiarletNecasReport:
    residual: float
    det_integral: float
    image_area: float
    self_overlap_flag: bool = False


def ciarlet_necas_residual(defo: DeformationField) -> CiarletNecasReport:
    """``int |det grad y| - |y(Omega)|``; a positive value signals overlap."""
    det, _ = det_cof(gradient(defo))
    integral = float(np.sum(np.abs(det)) * defo.grid.cell_area)
    area, flag = deformed_area(defo)
    return CiarletNecasReport(integral - area, integral, area, flag)


# ---------------------------------------------------------------------------
# smooth compactly supported test fields
# ---------------------------------------------------------------------------

def _snap(grid_h, lo, hi):
    return np.round(lo / grid_h) * grid_h, np.round(hi / grid_h) * grid_h


@dataclass
class TestField:
    """Smooth vector field ``psi`` vanishing outside a node-aligned box.

    ``psi_1 = S(x1) S(x2)`` and ``psi_2 = B(x1) S'(x2)`` where ``S`` is a
    ``sin^4`` bump and ``B`` is an asymmetric quartic-times-linear bump.
    On node-aligned supports the midpoint sums of every gradient component
    vanish exactly, so affine maps give a zero residual to round-off,
    while the coupling of ``B'`` with non-constant cofactors leaves a
    genuine second-order quadrature error.
    """

    __test__ = False

    lo: tuple
    hi: tuple
    tilt: float = 0.8

    @classmethod
    def inside(cls, grid: Grid, margin: int = 2, frac=(0.125, 0.6875)):
        x0, x1 = _snap(grid.hx, frac[0] * grid.lx, frac[1] * grid.lx)
        y0, y1 = _snap(grid.hy, frac[0] * grid.ly, frac[1] * grid.ly)
        x0, y0 = max(x0, margin * grid.hx), max(y0, margin * grid.hy)
        x1, y1 = min(x1, grid.lx - margin * grid.hx), min(y1, grid.ly - margin * grid.hy)
        return cls((x0, y0), (x1, y1))

    def _bump(self, t, lo, hi):
        w = hi - lo
        s = np.clip((t - lo) / w, 0.0, 1.0)
        inside = (t > lo) & (t < hi)
        base = (s * (1 - s)) ** 2 * 16.0
        dbase = 32.0 * s * (1 - s) * (1 - 2 * s) / w
        lin = 1.0 + self.tilt * (s - 0.5)
        B = np.where(inside, base * lin, 0.0)
        dB = np.where(inside, dbase * lin + base * self.tilt / w, 0.0)
        return B, dB

    def _sin4(self, t, lo, hi):
        w = hi - lo
        u = np.pi * np.clip((t - lo) / w, 0.0, 1.0)
        inside = (t > lo) & (t < hi)
        S = np.where(inside, np.sin(u) ** 4, 0.0)
        dS = np.where(inside, 4 * np.sin(u) ** 3 * np.cos(u) * np.pi / w, 0.0)
        d2S = np.where(
            inside,
            (12 * np.sin(u) ** 2 * np.cos(u) ** 2 - 4 * np.sin(u) ** 4) * (np.pi / w) ** 2,
            0.0,
        )
        return S, dS, d2S

    def gradient(self, x):
        """``grad psi`` at points ``x`` (..., 2) -> (..., 2, 2)."""
        x1, x2 = x[..., 0], x[..., 1]
        (a1, a2), (b1, b2) = self.lo, self.hi
        Bx, dBx = self._bump(x1, a1, b1)
        Sx, dSx, _ = self._sin4(x1, a1, b1)
        Sy, dSy, d2Sy = self._sin4(x2, a2, b2)
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = dSx * Sy
        g[..., 0, 1] = Sx * dSy
        g[..., 1, 0] = dBx * dSy
        g[..., 1, 1] = Bx * d2Sy
        return g


def piola_residual(defo: DeformationField, psi) -> float:
    """``int cof(grad y) : grad psi`` by the cell-center rule.

    ``psi`` is anything with a ``gradient(points)`` method, or ``None`` for
    the zero field.
    """
    if psi is None:
        return 0.0
    _, cof = det_cof(gradient(defo))
    gpsi = psi.gradient(defo.grid.centers())
    return float(np.sum(cof * gpsi) * defo.grid.cell_area)


# ---------------------------------------------------------------------------
# boundary data and initialization
# ---------------------------------------------------------------------------

def boundary_map(family: str, matrix=None, amount: float = 0.0):
    if family == "identity":
        return lambda x1, x2: np.stack([x1, x2])
    if family == "affine":
        A = np.asarray(matrix, dtype=float)
        return lambda x1, x2: np.stack([A[0, 0] * x1 + A[0, 1] * x2, A[1, 0] * x1 + A[1, 1] * x2])
    if family == "shear":
        return lambda x1, x2: np.stack([x1 + amount * x2, x2])
    raise ValueError(f"unknown boundary family {family!r}")


def coons_fill(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Transfinite bilinear interpolation of boundary node values into the
    interior; exact for affine data."""
    s = np.linspace(0.0, 1.0, grid.nx + 1)[:, None, None]
    t = np.linspace(0.0, 1.0, grid.ny + 1)[None, :, None]
    left, right = values[0][None], values[-1][None]
    bottom, top = values[:, 0][:, None], values[:, -1][:, None]
    c00, c10 = values[0, 0], values[-1, 0]
    c01, c11 = values[0, -1], values[-1, -1]
    return (
        (1 - s) * left + s * right + (1 - t) * bottom + t * top
        - ((1 - s) * (1 - t) * c00 + s * (1 - t) * c10 + (1 - s) * t * c01 + s * t * c11)
    )


def initial_deformation(grid: Grid, y0) -> DeformationField:
    """Dirichlet data from ``y0`` on the whole boundary, interior filled by
    transfinite interpolation."""
    x = grid.nodes()
    data = np.moveaxis(np.asarray(y0(x[..., 0], x[..., 1]), dtype=float), 0, -1)
    mask = grid.boundary_mask()
    return DeformationField(grid, coons_fill(grid, data), mask, data)


def warn_degenerate(defo: DeformationField):
    det, _ = det_cof(gradient(defo))
    bad = np.argwhere(det <= 0)
    if bad.size:
        warnings.warn(f"{len(bad)} cells with non-positive determinant", stacklevel=2)
    return bad
