"""Uniform metric grid over a geographic service area.

Space is discretized into square cells of a fixed width in meters. All
positions are snapped to the center of their containing cell, and the
distances that matter downstream are the finite set of center-to-center
distances realizable on the lattice, truncated at the maximum distance a
user would travel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_008.8

# Lattice distances closer than this are treated as the same class.
DISTANCE_MERGE_TOL = 1e-6


class OutOfBoundsError(ValueError):
    """A coordinate falls outside the grid's bounding box."""


def _meters_per_degree(mean_lat: float) -> tuple[float, float]:
    per_lat = math.pi * EARTH_RADIUS_M / 180.0
    per_lon = per_lat * math.cos(math.radians(mean_lat))
    return per_lat, per_lon


@dataclass(frozen=True)
class GridSpec:
    """Immutable description of a rows x cols metric grid.

    origin_lat/origin_lon is the southwest corner. Cells are half-open
    [low, high) in both axes and indexed row-major from 0; local planar
    coordinates use an equirectangular projection anchored at the grid's
    mean latitude.
    """

    origin_lat: float
    origin_lon: float
    cell_width: float
    rows: int
    cols: int
    meters_per_deg_lat: float
    meters_per_deg_lon: float

    def __post_init__(self):
        if self.cell_width <= 0:
            raise ValueError(f"cell_width must be positive, got {self.cell_width}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have at least one cell, got {self.rows}x{self.cols}")

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    def xy(self, lat, lon):
        """Planar meters east/north of the origin corner."""
        x = (np.asarray(lon) - self.origin_lon) * self.meters_per_deg_lon
        y = (np.asarray(lat) - self.origin_lat) * self.meters_per_deg_lat
        return x, y

    def locate(self, lat: float, lon: float) -> int:
        """Row-major index of the cell containing (lat, lon).

        Raises OutOfBoundsError for coordinates outside the grid box so the
        caller can decide whether to drop the record or rebuild the grid.
        """
        x, y = self.xy(lat, lon)
        col = math.floor(x / self.cell_width)
        row = math.floor(y / self.cell_width)
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise OutOfBoundsError(
                f"({lat}, {lon}) is outside the grid (row={row}, col={col}, "
                f"grid={self.rows}x{self.cols})"
            )
        return row * self.cols + col

    def locate_many(self, lats, lons):
        """Vectorized locate. Returns (indices, inside_mask); outside points
        get index -1 rather than raising."""
        x, y = self.xy(np.asarray(lats, dtype=float), np.asarray(lons, dtype=float))
        col = np.floor(x / self.cell_width).astype(np.int64)
        row = np.floor(y / self.cell_width).astype(np.int64)
        inside = (row >= 0) & (row < self.rows) & (col >= 0) & (col < self.cols)
        idx = np.where(inside, row * self.cols + col, -1)
        return idx, inside

    def cell_rowcol(self, index: int) -> tuple[int, int]:
        return index // self.cols, index % self.cols

    def center(self, index: int) -> tuple[float, float]:
        """Latitude/longitude of a cell's center point."""
        row, col = self.cell_rowcol(index)
        lat = self.origin_lat + (row + 0.5) * self.cell_width / self.meters_per_deg_lat
        lon = self.origin_lon + (col + 0.5) * self.cell_width / self.meters_per_deg_lon
        return lat, lon

    def centers(self):
        """(m, 2) array of all cell centers as lat/lon, row-major order."""
        idx = np.arange(self.num_cells)
        row, col = idx // self.cols, idx % self.cols
        lat = self.origin_lat + (row + 0.5) * self.cell_width / self.meters_per_deg_lat
        lon = self.origin_lon + (col + 0.5) * self.cell_width / self.meters_per_deg_lon
        return np.column_stack([lat, lon])

    def cell_bounds(self, index: int) -> tuple[float, float, float, float]:
        """(lat_min, lon_min, lat_max, lon_max) of a cell, for rendering."""
        row, col = self.cell_rowcol(index)
        lat0 = self.origin_lat + row * self.cell_width / self.meters_per_deg_lat
        lon0 = self.origin_lon + col * self.cell_width / self.meters_per_deg_lon
        lat1 = self.origin_lat + (row + 1) * self.cell_width / self.meters_per_deg_lat
        lon1 = self.origin_lon + (col + 1) * self.cell_width / self.meters_per_deg_lon
        return lat0, lon0, lat1, lon1

    def to_dict(self) -> dict:
        """Self-contained description embedded in every result file."""
        return {
            "origin_lat": self.origin_lat,
            "origin_lon": self.origin_lon,
            "cell_width": self.cell_width,
            "rows": self.rows,
            "cols": self.cols,
            "meters_per_deg_lat": self.meters_per_deg_lat,
            "meters_per_deg_lon": self.meters_per_deg_lon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            origin_lat=d["origin_lat"],
            origin_lon=d["origin_lon"],
            cell_width=d["cell_width"],
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            meters_per_deg_lat=d["meters_per_deg_lat"],
            meters_per_deg_lon=d["meters_per_deg_lon"],
        )


def build_grid(points, cell_width: float, padding: float = 0.0) -> GridSpec:
    """Build the smallest grid whose box covers all points plus padding.

    points is a sequence of (lat, lon) pairs or an (n, 2) array. Projection
    constants are fixed from the mean latitude of the padded box.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("cannot build a grid from an empty point set")
    if cell_width <= 0:
        raise ValueError(f"cell_width must be positive, got {cell_width}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    lats, lons = pts[:, 0], pts[:, 1]
    if np.any(np.abs(lats) > 90) or np.any(np.abs(lons) > 180):
        bad = pts[(np.abs(lats) > 90) | (np.abs(lons) > 180)][0]
        raise ValueError(f"coordinate outside [-90,90]x[-180,180]: {tuple(bad)}")

    mean_lat = (lats.min() + lats.max()) / 2.0
    per_lat, per_lon = _meters_per_degree(mean_lat)
    origin_lat = lats.min() - padding / per_lat
    origin_lon = lons.min() - padding / per_lon
    extent_y = (lats.max() - origin_lat) * per_lat + padding
    extent_x = (lons.max() - origin_lon) * per_lon + padding
    # floor + 1 keeps every point strictly inside the half-open cells even
    # when the extent is an exact multiple of the cell width
    rows = int(math.floor(extent_y / cell_width)) + 1
    cols = int(math.floor(extent_x / cell_width)) + 1
    return GridSpec(
        origin_lat=origin_lat,
        origin_lon=origin_lon,
        cell_width=cell_width,
        rows=rows,
        cols=cols,
        meters_per_deg_lat=per_lat,
        meters_per_deg_lon=per_lon,
    )


@dataclass(frozen=True)
class DistanceClassTable:
    """Realizable center-to-center distances up to dist_max, with per-cell
    neighbor lists stored as one CSR structure over all cells.

    classes[0] is always 0 (the cell itself). nbr_cell/nbr_class list, for
    each cell i (rows of indptr), every cell within dist_max of i together
    with the class index of their separation; grid borders clip the lists.
    The threshold distribution adds dist_max as the terminal bin boundary.
    """

    rows: int
    cols: int
    cell_width: float
    dist_max: float
    classes: np.ndarray        # (L,) strictly increasing, classes[0] == 0
    indptr: np.ndarray         # (m + 1,)
    nbr_cell: np.ndarray       # (nnz,) neighbor cell indices
    nbr_class: np.ndarray      # (nnz,) class index of each neighbor

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    @property
    def boundaries(self) -> np.ndarray:
        """(L + 1,) bin boundaries: the classes plus dist_max at the end."""
        return np.append(self.classes, self.dist_max)

    def neighborhood(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        """(cells, class indices) of every cell within dist_max of `cell`."""
        lo, hi = self.indptr[cell], self.indptr[cell + 1]
        return self.nbr_cell[lo:hi], self.nbr_class[lo:hi]

    def neighbors(self, cell: int, class_index: int) -> np.ndarray:
        """Cells whose center is exactly distance classes[class_index] away."""
        cells, cls = self.neighborhood(cell)
        return cells[cls == class_index]

    def class_of(self, cell_a: int, cell_b: int) -> int:
        """Class index of the separation between two cells, or -1 if beyond
        dist_max."""
        cells, cls = self.neighborhood(cell_a)
        hit = cls[cells == cell_b]
        return int(hit[0]) if hit.size else -1


def distance_classes(spec: GridSpec, dist_max: float) -> DistanceClassTable:
    """Enumerate lattice offsets within dist_max and build the class table."""
    if dist_max < 0:
        raise ValueError(f"dist_max must be non-negative, got {dist_max}")
    w = spec.cell_width
    reach = int(math.floor((dist_max + DISTANCE_MERGE_TOL) / w)) if w > 0 else 0

    offsets = []  # (di, dj, distance)
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            d = w * math.hypot(di, dj)
            if d <= dist_max + DISTANCE_MERGE_TOL:
                offsets.append((di, dj, d))

    distances = sorted({d for _, _, d in offsets})
    classes: list[float] = []
    for d in distances:
        if not classes or d - classes[-1] > DISTANCE_MERGE_TOL:
            classes.append(d)
    class_arr = np.asarray(classes, dtype=float)

    def class_index(d: float) -> int:
        return int(np.argmin(np.abs(class_arr - d)))

    rows, cols = spec.rows, spec.cols
    m = rows * cols
    srcs, dsts, cls = [], [], []
    for di, dj, d in offsets:
        r0, r1 = max(0, -di), min(rows, rows - di)
        c0, c1 = max(0, -dj), min(cols, cols - dj)
        if r0 >= r1 or c0 >= c1:
            continue
        rr = np.arange(r0, r1)
        cc = np.arange(c0, c1)
        base = (rr[:, None] * cols + cc[None, :]).ravel()
        nbr = ((rr[:, None] + di) * cols + (cc[None, :] + dj)).ravel()
        srcs.append(base)
        dsts.append(nbr)
        cls.append(np.full(base.shape, class_index(d), dtype=np.int64))

    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    cl = np.concatenate(cls)
    order = np.lexsort((dst, cl, src))
    src, dst, cl = src[order], dst[order], cl[order]
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)

    return DistanceClassTable(
        rows=rows,
        cols=cols,
        cell_width=w,
        dist_max=float(dist_max),
        classes=class_arr,
        indptr=indptr,
        nbr_cell=dst,
        nbr_class=cl,
    )
