"""Height normalization and pit-free canopy height model rasterization.

The pit-free CHM triangulates the normalized cloud at several height
thresholds, rasterizes each TIN at the cell centers after discarding
long-edged triangles, and keeps the cell-wise maximum across layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .errors import DataError
from .geodata import Grid, PointCloud, bilinear_sample

_TRI_CHUNK = 32768


@dataclass(frozen=True)
class PitfreeParams:
    """Knobs of the pit-free CHM construction.

    Thresholds are heights (m) at which partial TINs are built; the
    first must be 0. Triangles with any edge longer than max_edge are
    discarded before rasterization. subcircle_radius > 0 splats every
    return into 8 extra points on a circle of that radius.
    """

    resolution: float = 0.5
    height_thresholds: tuple[float, ...] = (0.0, 2.0, 5.0, 10.0, 15.0)
    max_edge: float = 1.5
    subcircle_radius: float = 0.0
    first_returns_only: bool = True

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not self.max_edge > 0:
            raise ValueError("max_edge must be > 0")
        th = tuple(float(t) for t in self.height_thresholds)
        if not th or th[0] != 0.0:
            raise ValueError("first height threshold must be 0")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("height thresholds must be strictly ascending")
        if self.subcircle_radius < 0:
            raise ValueError("subcircle_radius must be >= 0")
        object.__setattr__(self, "height_thresholds", th)


def normalize_heights(cloud: PointCloud, dtm: Grid) -> PointCloud:
    """Height above ground = z - bilinear DTM elevation, clamped at 0.

    Every point must lie inside the DTM interpolation hull and over
    valid terrain; violations raise DataError naming the first
    offending point index.
    """
    u = (cloud.x - dtm.xll) / dtm.cellsize - 0.5
    v = (cloud.y - dtm.yll) / dtm.cellsize - 0.5
    outside = (u < 0) | (u > dtm.ncols - 1) | (v < 0) | (v > dtm.nrows - 1)
    if np.any(outside):
        idx = int(np.argmax(outside))
        raise DataError(f"point {idx} at ({cloud.x[idx]}, {cloud.y[idx]}) lies "
                        f"outside the DTM interpolation hull")

    ground = bilinear_sample(dtm, cloud.x, cloud.y)
    over_nodata = ground == dtm.nodata
    if np.any(over_nodata):
        idx = int(np.argmax(over_nodata))
        raise DataError(f"point {idx} at ({cloud.x[idx]}, {cloud.y[idx]}) lies "
                        f"over nodata terrain")

    height = np.maximum(cloud.z - ground, 0.0)
    return PointCloud(cloud.x, cloud.y, cloud.z, cloud.return_number,
                      cloud.is_ground, height, cloud.height_floor)


def pitfree_chm(cloud: PointCloud, params: PitfreeParams,
                xll: float | None = None, yll: float | None = None,
                ncols: int | None = None, nrows: int | None = None,
                nodata: float = -9999.0) -> Grid:
    """Rasterize a pit-free CHM from a height-normalized cloud.

    The raster extent defaults to the cloud's bounding box snapped to
    the resolution. Cells covered by no surviving triangle are 0 inside
    the convex hull of the threshold-0 points and nodata outside it.
    """
    if len(cloud) == 0:
        raise DataError("empty point cloud")
    if not cloud.has_heights():
        raise DataError("point cloud has no height_above_ground; run "
                        "normalize_heights first")

    x, y, h = cloud.x, cloud.y, cloud.height
    if params.first_returns_only:
        keep = cloud.return_number == 1
        x, y, h = x[keep], y[keep], h[keep]
    if x.size == 0:
        raise DataError("no points left after first-return filtering")

    if params.subcircle_radius > 0:
        x, y, h = _subcircle(x, y, h, params.subcircle_radius)

    x, y, h = _dedup_lexicographic(x, y, h)

    res = params.resolution
    if xll is None:
        xll = math.floor(x.min() / res) * res
    if yll is None:
        yll = math.floor(y.min() / res) * res
    if ncols is None:
        ncols = max(1, math.ceil((x.max() - xll) / res))
    if nrows is None:
        nrows = max(1, math.ceil((y.max() - yll) / res))

    cols = np.arange(ncols)
    rows = np.arange(nrows)
    cx = xll + (cols + 0.5) * res
    cy = yll + (nrows - rows - 0.5) * res

    acc = np.full((nrows, ncols), -np.inf)
    hull_mask = np.zeros((nrows, ncols), dtype=bool)

    for layer_idx, threshold in enumerate(params.height_thresholds):
        sel = h >= threshold
        if sel.sum() < 3:
            continue
        px, py, ph = x[sel], y[sel], h[sel]
        try:
            tri = Delaunay(np.column_stack([px, py]))
        except QhullError:
            if layer_idx == 0:
                raise DataError("degenerate (collinear) point set at "
                                "threshold 0") from None
            continue
        if layer_idx == 0:
            hull_mask = _inside_hull(px, py, cx, cy)
        simplices = _prune_long_edges(tri.simplices, px, py, params.max_edge)
        if simplices.size:
            _rasterize_tin(px, py, ph, simplices, xll, yll, res, nrows, acc)

    covered = acc > -np.inf
    out = np.where(covered, acc, np.where(hull_mask, 0.0, nodata))
    out[covered] = np.maximum(out[covered], 0.0)
    return Grid(out, xll, yll, res, nodata)


def _subcircle(x, y, h, radius):
    ang = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    ox = np.concatenate([x] + [x + radius * math.cos(a) for a in ang])
    oy = np.concatenate([y] + [y + radius * math.sin(a) for a in ang])
    oh = np.tile(h, 9)
    return ox, oy, oh


def _dedup_lexicographic(x, y, h):
    """Sort points by (x, y) and keep the highest point per location.

    The fixed ordering makes Delaunay tie-breaking reproducible.
    """
    order = np.lexsort((h, y, x))
    x, y, h = x[order], y[order], h[order]
    same = np.zeros(len(x), dtype=bool)
    same[1:] = (x[1:] == x[:-1]) & (y[1:] == y[:-1])
    # within a run of duplicates the last one has the max height
    last = np.ones(len(x), dtype=bool)
    last[:-1] = ~same[1:]
    return x[last], y[last], h[last]


def _prune_long_edges(simplices, px, py, max_edge):
    p = np.column_stack([px, py])
    t = simplices
    lengths = np.stack([
        np.hypot(p[t[:, 0], 0] - p[t[:, 1], 0], p[t[:, 0], 1] - p[t[:, 1], 1]),
        np.hypot(p[t[:, 1], 0] - p[t[:, 2], 0], p[t[:, 1], 1] - p[t[:, 2], 1]),
        np.hypot(p[t[:, 2], 0] - p[t[:, 0], 0], p[t[:, 2], 1] - p[t[:, 0], 1]),
    ])
    return t[lengths.max(axis=0) <= max_edge]


def _inside_hull(px, py, cx, cy):
    """Cells whose centers are inside the convex hull of the points."""
    hull = ConvexHull(np.column_stack([px, py]))
    gx, gy = np.meshgrid(cx, cy)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    a = hull.equations[:, :2]
    b = hull.equations[:, 2]
    inside = np.all(pts @ a.T + b <= 1e-9, axis=1)
    return inside.reshape(len(cy), len(cx))


def _rasterize_tin(px, py, ph, simplices, xll, yll, res, nrows, acc):
    """Scatter barycentric interpolation of each triangle into acc (max).

    Every triangle has edges <= max_edge, so its bounding box spans a
    small, bounded number of cells; triangles are processed in chunks
    with fully vectorized barycentric tests. Overlapping coverage (only
    possible on shared edges) resolves by maximum, which is
    order-independent.
    """
    ncols = acc.shape[1]
    for start in range(0, len(simplices), _TRI_CHUNK):
        t = simplices[start:start + _TRI_CHUNK]
        x0, y0, z0 = px[t[:, 0]], py[t[:, 0]], ph[t[:, 0]]
        x1, y1, z1 = px[t[:, 1]], py[t[:, 1]], ph[t[:, 1]]
        x2, y2, z2 = px[t[:, 2]], py[t[:, 2]], ph[t[:, 2]]

        xmin = np.minimum(np.minimum(x0, x1), x2)
        xmax = np.maximum(np.maximum(x0, x1), x2)
        ymin = np.minimum(np.minimum(y0, y1), y2)
        ymax = np.maximum(np.maximum(y0, y1), y2)

        # candidate cell ranges, widened by one cell each side; the exact
        # barycentric test below rejects the false candidates
        c_lo = np.floor((xmin - xll) / res - 0.5).astype(np.int64)
        c_hi = np.floor((xmax - xll) / res - 0.5).astype(np.int64) + 1
        s_lo = np.floor((ymin - yll) / res - 0.5).astype(np.int64)
        s_hi = np.floor((ymax - yll) / res - 0.5).astype(np.int64) + 1
        span_c = int((c_hi - c_lo).max() + 1)
        span_s = int((s_hi - s_lo).max() + 1)

        cc = c_lo[:, None, None] + np.arange(span_c)[None, None, :]
        ss = s_lo[:, None, None] + np.arange(span_s)[None, :, None]
        qx = xll + (cc + 0.5) * res
        qy = yll + (ss + 0.5) * res

        det = ((y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2))
        ok_tri = np.abs(det) > 1e-300
        det = np.where(ok_tri, det, 1.0)
        w0 = (((y1 - y2)[:, None, None] * (qx - x2[:, None, None])
               + (x2 - x1)[:, None, None] * (qy - y2[:, None, None]))
              / det[:, None, None])
        w1 = (((y2 - y0)[:, None, None] * (qx - x2[:, None, None])
               + (x0 - x2)[:, None, None] * (qy - y2[:, None, None]))
              / det[:, None, None])
        w2 = 1.0 - w0 - w1

        eps = -1e-12
        inside = ((w0 >= eps) & (w1 >= eps) & (w2 >= eps)
                  & ok_tri[:, None, None]
                  & (cc >= 0) & (cc < ncols) & (ss >= 0) & (ss < nrows))

        vals = (w0 * z0[:, None, None] + w1 * z1[:, None, None]
                + w2 * z2[:, None, None])
        rr = nrows - 1 - ss
        flat = (rr * ncols + cc)[inside]
        np.maximum.at(acc.reshape(-1), flat, vals[inside])
