"""Rod-cell geometry, capsule distance tests, neighbor graphs, and motion windows.

A cell is modeled as a capsule: the segment between its two endpoints dilated
by half its width. All coordinates are pixels with y increasing downward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import Delaunay, QhullError

DEFAULT_NEIGHBOR_RADIUS = 80.0


def _pt(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.shape != (2,):
        raise ValueError(f"expected a 2D point, got shape {a.shape}")
    return a


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def cross2(a: np.ndarray, b: np.ndarray):
    """z-component of the 2D cross product, broadcasting over leading axes."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def line_angle(u, v) -> float:
    """Angle in [0, pi/2] between the non-oriented lines carried by u and v.

    A zero-length argument is treated as parallel (angle 0).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.hypot(u[0], u[1]))
    nv = float(np.hypot(v[0], v[1]))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = abs(float(np.dot(u, v))) / (nu * nv)
    return float(np.arccos(min(1.0, c)))


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("empty rectangle")

    @classmethod
    def of_size(cls, width: float, height: float) -> "Rect":
        return cls(0.0, 0.0, float(width), float(height))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0])

    def contains(self, p, tol: float = 1e-9) -> bool:
        x, y = float(p[0]), float(p[1])
        return (self.xmin - tol <= x <= self.xmax + tol) and (
            self.ymin - tol <= y <= self.ymax + tol
        )


@dataclass(frozen=True)
class Cell:
    """A rod-shaped cell: segment from endpoint ``e`` to endpoint ``h`` plus width.

    ``center``, ``axis_dir`` (unit, unoriented) and ``length`` are derived from
    the endpoints at construction time.
    """

    id: str
    e: np.ndarray
    h: np.ndarray
    width: float
    center: np.ndarray = field(init=False, repr=False, compare=False)
    axis_dir: np.ndarray = field(init=False, repr=False, compare=False)
    length: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        e = _pt(self.e)
        h = _pt(self.h)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "width", float(self.width))
        length = float(np.hypot(*(h - e)))
        if not np.isfinite(length) or length <= 0.0:
            raise ValueError("degenerate cell: endpoints coincide")
        if self.width < 0.0 or not np.isfinite(self.width):
            raise ValueError("cell width must be a finite non-negative number")
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "center", (e + h) / 2.0)
        object.__setattr__(self, "axis_dir", (h - e) / length)

    @property
    def tips(self) -> tuple[np.ndarray, np.ndarray]:
        return self.e, self.h

    def translated(self, offset) -> "Cell":
        off = _pt(offset)
        return Cell(self.id, self.e + off, self.h + off, self.width)


@dataclass(frozen=True)
class Frame:
    """An indexed set of cells observed at one time point."""

    index: int
    cells: tuple[Cell, ...]
    bounds: Rect
    _by_id: dict = field(init=False, repr=False, compare=False)
    _centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        by_id = {}
        for pos, c in enumerate(cells):
            if c.id in by_id:
                raise ValueError(f"duplicate cell id {c.id!r} in frame {self.index}")
            by_id[c.id] = pos
        for c in cells:
            if not self.bounds.contains(c.center, tol=1e-6):
                raise ValueError(
                    f"cell {c.id!r} center {c.center} outside frame bounds"
                )
        centers = (
            np.array([c.center for c in cells], dtype=np.float64)
            if cells
            else np.zeros((0, 2))
        )
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_centers", centers)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cells)

    def centers(self) -> np.ndarray:
        return self._centers

    def position(self, cell_id: str) -> int:
        return self._by_id[cell_id]

    def cell(self, cell_id: str) -> Cell:
        return self.cells[self._by_id[cell_id]]

    def __contains__(self, cell_id: str) -> bool:
        return cell_id in self._by_id

    def without(self, removed_ids: Iterable[str]) -> "Frame":
        gone = set(removed_ids)
        missing = gone - set(self._by_id)
        if missing:
            raise KeyError(f"ids not in frame {self.index}: {sorted(missing)}")
        kept = tuple(c for c in self.cells if c.id not in gone)
        return Frame(self.index, kept, self.bounds)


def cell_from_pixels(pixels, cell_id: str = "px") -> Cell:
    """Fit a rod cell to a set of pixel coordinates.

    Center is the pixel centroid, the axis is the leading principal component,
    endpoints are the extreme pixel projections onto the axis line, and width
    is twice the RMS distance of the pixels from that line.
    """
    pts = np.asarray(sorted(tuple(map(float, p)) for p in pixels), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("degenerate cell: need at least two pixels")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 1e-12:
        raise ValueError("degenerate cell: zero covariance")
    axis = evecs[:, -1]
    # canonical orientation keeps the fit reproducible across pixel orderings
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    t = d @ axis
    tmin, tmax = float(t.min()), float(t.max())
    if tmax - tmin <= 1e-12:
        raise ValueError("degenerate cell: zero extent along the fitted axis")
    e = centroid + tmin * axis
    h = centroid + tmax * axis
    normal = np.array([-axis[1], axis[0]])
    width = 2.0 * float(np.sqrt(np.mean((d @ normal) ** 2)))
    return Cell(cell_id, e, h, width)


def point_segment_distance(points, s0, s1):
    """Distance from point(s) to the segment s0-s1, broadcasting over points."""
    points = np.asarray(points, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)
    d = s1 - s0
    dd = (d * d).sum(axis=-1)
    safe = np.where(dd > 0.0, dd, 1.0)
    t = np.clip(((points - s0) * d).sum(axis=-1) / safe, 0.0, 1.0)
    t = np.where(dd > 0.0, t, 0.0)
    closest = s0 + t[..., None] * d
    return np.hypot(*(np.moveaxis(points - closest, -1, 0)))


def segments_distance(p0, p1, q0, q1):
    """Minimum distance between segments p0-p1 and q0-q1 (broadcasting).

    Non-crossing segments attain their minimum at an endpoint of one segment
    against the other, so four point-segment distances suffice; properly
    crossing pairs get distance zero.
    """
    p0, p1, q0, q1 = np.broadcast_arrays(
        np.asarray(p0, np.float64),
        np.asarray(p1, np.float64),
        np.asarray(q0, np.float64),
        np.asarray(q1, np.float64),
    )
    d = np.minimum(
        np.minimum(
            point_segment_distance(p0, q0, q1), point_segment_distance(p1, q0, q1)
        ),
        np.minimum(
            point_segment_distance(q0, p0, p1), point_segment_distance(q1, p0, p1)
        ),
    )
    u = p1 - p0
    v = q1 - q0
    w = q0 - p0
    den = cross2(u, v)
    safe = np.where(den != 0.0, den, 1.0)
    t = cross2(w, v) / safe
    s = cross2(w, u) / safe
    crossing = (den != 0.0) & (t >= 0.0) & (t <= 1.0) & (s >= 0.0) & (s <= 1.0)
    return np.where(crossing, 0.0, d)


def capsule_gap(a: Cell, b: Cell):
    """Clearance between two cell capsules; negative values measure overlap depth."""
    return float(segments_distance(a.e, a.h, b.e, b.h)) - (a.width + b.width) / 2.0


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric, irreflexive neighbor relation over the cells of one frame."""

    ids: tuple[str, ...]
    adj: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj = np.asarray(self.adj, dtype=bool)
        n = len(self.ids)
        if adj.shape != (n, n):
            raise ValueError("adjacency shape does not match id count")
        if np.any(adj != adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must be irreflexive")
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "_index", {cid: k for k, cid in enumerate(self.ids)})

    @property
    def degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1)

    def degree(self, cell_id: str) -> int:
        return int(self.adj[self._index[cell_id]].sum())

    def neighbors(self, cell_id: str) -> tuple[str, ...]:
        row = self.adj[self._index[cell_id]]
        return tuple(self.ids[k] for k in np.flatnonzero(row))

    def are_neighbors(self, a: str, b: str) -> bool:
        return bool(self.adj[self._index[a], self._index[b]])

    def n_edges(self) -> int:
        return int(self.adj.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, k=1))
        return list(zip(i.tolist(), j.tolist()))


def _delaunay_edges(centers: np.ndarray) -> set[tuple[int, int]] | None:
    """Delaunay edge set of the centers, or None when triangulation fails."""
    if centers.shape[0] < 3:
        return None
    try:
        tri = Delaunay(centers)
    except (QhullError, ValueError):
        return None
    edges: set[tuple[int, int]] = set()
    for simplex in tri.simplices:
        for a in range(3):
            i, j = int(simplex[a]), int(simplex[(a + 1) % 3])
            edges.add((min(i, j), max(i, j)))
    return edges


def build_neighbor_graph(frame: Frame, rho: float = DEFAULT_NEIGHBOR_RADIUS) -> NeighborGraph:
    """Neighbor graph of a frame.

    Two cells are neighbors when (1) their centers are joined by a Delaunay
    edge, (2) that edge crosses no third cell's capsule, and (3) the centers
    are at most ``rho`` apart. Frames whose centers admit no triangulation
    (fewer than three cells, collinear layouts) fall back to testing all pairs
    against conditions (2) and (3).
    """
    n = len(frame)
    adj = np.zeros((n, n), dtype=bool)
    if n < 2:
        return NeighborGraph(frame.ids, adj)
    centers = frame.centers()
    candidates = _delaunay_edges(centers)
    if candidates is None:
        candidates = {(i, j) for i in range(n) for j in range(i + 1, n)}
    e_all = np.array([c.e for c in frame.cells])
    h_all = np.array([c.h for c in frame.cells])
    half_w = np.array([c.width for c in frame.cells]) / 2.0
    for i, j in candidates:
        if np.hypot(*(centers[i] - centers[j])) > rho:
            continue
        dist = segments_distance(centers[i], centers[j], e_all, h_all)
        blocked = dist < half_w
        blocked[[i, j]] = False
        if blocked.any():
            continue
        adj[i, j] = adj[j, i] = True
    return NeighborGraph(frame.ids, adj)


def window_mask(center, targets: np.ndarray, w: float) -> np.ndarray:
    """Boolean mask of target centers inside the width-w square around center."""
    if targets.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    d = np.abs(targets - np.asarray(center, dtype=np.float64))
    return (d[:, 0] <= w / 2.0) & (d[:, 1] <= w / 2.0)


def target_window(cell: Cell, next_frame: Frame, w: float) -> list[Cell]:
    """Cells of the next frame whose centers lie in the square window of width
    ``w`` centered on ``cell`` (boundary inclusive). May be empty."""
    mask = window_mask(cell.center, next_frame.centers(), w)
    return [next_frame.cells[k] for k in np.flatnonzero(mask)]
