"""Interfacial measures ``-div(g cof grad y)`` and deformed interface areas."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fields import DeformationField, Grid, det_cof, gradient, gradient_adjoint


@dataclass
class VectorMeasure:
    """R^2-valued atoms on the nodes of the reference grid."""

    grid: Grid
    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.atoms.shape != self.grid.node_shape + (2,):
            raise ValueError("atoms must live on grid nodes")


@dataclass
class PhasePartition:
    """Per-cell phase labels, 0-based (``0 .. m-1``)."""

    labels: np.ndarray
    m: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-D cell array")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.m):
            raise ValueError("labels out of range")

    @classmethod
    def stripes(cls, grid: Grid, m: int, n_stripes: int | None = None, axis: int = 0):
        """Equal-width stripes cycling through the phases along ``axis``."""
        n_stripes = m if n_stripes is None else n_stripes
        c = grid.centers()[..., axis]
        length = grid.lx if axis == 0 else grid.ly
        idx = np.minimum((c / length * n_stripes).astype(int), n_stripes - 1)
        return cls(idx % m, m)

    def indicator(self, alpha: int) -> np.ndarray:
        return (self.labels == alpha).astype(float)


def interfacial_measure(defo: DeformationField, g) -> VectorMeasure:
    """Atoms ``a_i = sum_cells g cof(grad y) grad N_i |cell|``.

    For every bilinear vector field ``psi`` the identity
    ``sum_cells g cof(grad y) : grad psi |cell| = sum_i psi_i . a_i`` holds
    exactly.
    """
    grid = defo.grid
    g = np.broadcast_to(np.asarray(g, dtype=float), grid.cell_shape)
    _, cof = det_cof(gradient(defo))
    dual = g[..., None, None] * cof * grid.cell_area
    return VectorMeasure(grid, gradient_adjoint(grid, dual))


def total_variation(mu: VectorMeasure, subregion=None, interior: bool = False) -> float:
    """Sum of atom norms, optionally restricted to nodes in the half-open
    rectangle ``[x0, x1) x [y0, y1)`` and/or to interior nodes."""
    norms = np.linalg.norm(mu.atoms, axis=-1)
    keep = np.ones(norms.shape, dtype=bool)
    if interior:
        keep &= ~mu.grid.boundary_mask()
    if subregion is not None:
        x0, x1, y0, y1 = subregion
        x = mu.grid.nodes()
        keep &= (x[..., 0] >= x0) & (x[..., 0] < x1) & (x[..., 1] >= y0) & (x[..., 1] < y1)
    return float(np.sum(norms[keep]))


def _edge_lengths(defo: DeformationField):
    """Deformed lengths of vertical edges (nx+1, ny) and horizontal edges
    (nx, ny+1).

    On a vertical reference edge, ``|cof F e1| hy = |d y / d x2| hy`` is
    the length of the mapped edge, which is straight under a bilinear map.
    """
    y = defo.values
    vertical = np.linalg.norm(y[:, 1:] - y[:, :-1], axis=-1)
    horizontal = np.linalg.norm(y[1:, :] - y[:-1, :], axis=-1)
    return vertical, horizontal


def deformed_perimeter(defo: DeformationField, part: PhasePartition) -> np.ndarray:
    """Symmetric matrix of deformed interface lengths between phases."""
    vertical, horizontal = _edge_lengths(defo)
    lab = part.labels
    out = np.zeros((part.m, part.m))
    # interior vertical edges separate cells (i-1, j) and (i, j)
    pairs = [
        (lab[:-1, :], lab[1:, :], vertical[1:-1, :]),
        (lab[:, :-1], lab[:, 1:], horizontal[:, 1:-1]),
    ]
    for a, b, w in pairs:
        diff = a != b
        np.add.at(out, (a[diff], b[diff]), w[diff])
    out = out + out.T
    np.fill_diagonal(out, 0.0)
    return out


def mapped_polyline_length(defo: DeformationField, polygon, samples_per_edge: int = 256) -> float:
    """Length of the image of a closed reference polygon under the
    bilinear interpolant of ``y``."""
    from scipy.interpolate import RegularGridInterpolator

    grid = defo.grid
    axes = (np.linspace(0, grid.lx, grid.nx + 1), np.linspace(0, grid.ly, grid.ny + 1))
    interp = RegularGridInterpolator(axes, defo.values)
    poly = np.asarray(polygon, dtype=float)
    closed = np.vstack([poly, poly[:1]])
    t = np.linspace(0.0, 1.0, samples_per_edge + 1)[:-1]
    pts = (closed[:-1, None, :] * (1 - t)[None, :, None] + closed[1:, None, :] * t[None, :, None])
    pts = np.vstack([pts.reshape(-1, 2), poly[:1]])
    img = interp(pts)
    return float(np.sum(np.linalg.norm(np.diff(img, axis=0), axis=1)))


def region_boundary_length(defo: DeformationField, g) -> float:
    """Deformed length of the cell-edge boundary of ``{g >= 1/2}``
    (edges on the domain boundary included)."""
    inside = np.asarray(g) >= 0.5
    padded = np.pad(inside, 1, constant_values=False)
    vertical, horizontal = _edge_lengths(defo)
    v_cut = padded[:-1, 1:-1] != padded[1:, 1:-1]
    h_cut = padded[1:-1, :-1] != padded[1:-1, 1:]
    return float(np.sum(vertical[v_cut]) + np.sum(horizontal[h_cut]))


@dataclass
class PushforwardCheck:
    tv_measure: float
    direct_area: float
    gap: float


def pushforward_equality_check(defo: DeformationField, g, polygon=None) -> PushforwardCheck:
    """Compare the interior total variation of ``p_{y,g}`` with the
    deformed perimeter of the region ``g`` indicates.

    ``polygon`` (reference vertices) is mapped and measured as a polyline;
    without it the cell-edge boundary of ``{g >= 1/2}`` is used.
    """
    tv = total_variation(interfacial_measure(defo, g), interior=True)
    if polygon is None:
        direct = region_boundary_length(defo, g)
    else:
        direct = mapped_polyline_length(defo, polygon)
    return PushforwardCheck(tv, direct, abs(tv - direct))


def square_indicator(grid: Grid, side: float, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Cell indicator of an axis-aligned square and its reference corners."""
    cx, cy = (grid.lx / 2, grid.ly / 2) if center is None else center
    c = grid.centers()
    half = side / 2
    g = ((np.abs(c[..., 0] - cx) < half) & (np.abs(c[..., 1] - cy) < half)).astype(float)
    corners = np.array([
        [cx - half, cy - half], [cx + half, cy - half],
        [cx + half, cy + half], [cx - half, cy + half],
    ])
    return g, corners


def write_measure_csv(path, mu: VectorMeasure, header_lines=()):
    x = mu.grid.nodes().reshape(-1, 2)
    a = mu.atoms.reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "atom_x", "atom_y"])
        for k in range(len(x)):
            w.writerow([k, *(f"{v:.9g}" for v in (*x[k], *a[k]))])


def write_matrix_csv(path, matrix, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([f"{v:.9g}" for v in row])
