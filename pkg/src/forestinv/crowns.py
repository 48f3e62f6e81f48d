"""Treetop detection and individual tree crown delineation on a CHM.

Treetops are strict local maxima inside a square search window whose
side grows linearly with tree height, thinned so that no two accepted
tops lie within min_dist of each other. Crowns then grow outward from
each top over 4-connected cells, gated by two relative height
thresholds and a maximum growth radius.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geodata import Grid, GroundTruthPoint


@dataclass(frozen=True)
class ItcParams:
    min_search_win: int = 3
    max_search_win: int = 7
    thresh_seed: float = 0.55
    thresh_crown: float = 0.6
    min_dist: float = 5.0
    max_dist: float = 40.0
    height_threshold: float = 2.0
    win_low_height: float = 2.0
    win_high_height: float = 30.0
    smooth_chm: bool = False

    def __post_init__(self):
        if not (0 < self.thresh_seed < 1 and 0 < self.thresh_crown < 1):
            raise ValueError("thresholds must lie strictly between 0 and 1")
        for name in ("min_search_win", "max_search_win"):
            w = getattr(self, name)
            if w < 3 or w % 2 == 0:
                raise ValueError(f"{name} must be an odd integer >= 3")
        if self.min_search_win > self.max_search_win:
            raise ValueError("min_search_win must be <= max_search_win")
        if not (0 < self.min_dist <= self.max_dist):
            raise ValueError("need 0 < min_dist <= max_dist")
        if self.height_threshold < 0:
            raise ValueError("height_threshold must be >= 0")
        if not self.win_low_height < self.win_high_height:
            raise ValueError("win_low_height must be < win_high_height")


@dataclass
class CrownRecord:
    """One delineated tree crown."""

    crown_id: int
    apex_row: int
    apex_col: int
    apex_x: float
    apex_y: float
    tree_height: float
    crown_area: float
    crown_diameter: float
    cell_set: frozenset
    species_code: str | None = None
    dbh: float | None = None
    volume: float | None = None
    agb: float | None = None
    fallback_used: str | None = None


@dataclass(frozen=True)
class Apex:
    row: int
    col: int
    x: float
    y: float
    height: float


def _window_side(height: float, params: ItcParams) -> int:
    lo, hi = params.win_low_height, params.win_high_height
    frac = (height - lo) / (hi - lo)
    frac = min(1.0, max(0.0, frac))
    side = params.min_search_win + frac * (params.max_search_win
                                           - params.min_search_win)
    side_int = int(round(side))
    if side_int % 2 == 0:
        side_int += 1
    return min(params.max_search_win, max(params.min_search_win, side_int))


def detect_treetops(chm: Grid, params: ItcParams) -> list[Apex]:
    """Strict variable-window local maxima, thinned by min_dist.

    Candidates are processed tallest first; a candidate within min_dist
    (map meters) of an already accepted apex is dropped. Ties in height
    break on (row, col) so the result is deterministic.
    """
    values = _prepared_heights(chm, params)

    # strict local max per window size: taller than every other cell in
    # the window (footprint excludes the center)
    strict_by_side = {}
    for side in range(params.min_search_win, params.max_search_win + 1, 2):
        footprint = np.ones((side, side), dtype=bool)
        footprint[side // 2, side // 2] = False
        neighborhood_max = ndimage.maximum_filter(
            values, footprint=footprint, mode="constant", cval=-np.inf)
        strict_by_side[side] = values > neighborhood_max

    candidate = values >= params.height_threshold
    rows, cols = np.nonzero(candidate)
    heights = values[rows, cols]
    is_strict = np.zeros(len(rows), dtype=bool)
    for i in range(len(rows)):
        side = _window_side(heights[i], params)
        is_strict[i] = strict_by_side[side][rows[i], cols[i]]
    rows, cols, heights = rows[is_strict], cols[is_strict], heights[is_strict]

    order = np.lexsort((cols, rows, -heights))
    accepted_x: list[float] = []
    accepted_y: list[float] = []
    apexes: list[Apex] = []
    min_d2 = params.min_dist ** 2
    for i in order:
        x, y = chm.cell_center(int(rows[i]), int(cols[i]))
        x, y = float(x), float(y)
        if accepted_x:
            ax = np.array(accepted_x)
            ay = np.array(accepted_y)
            if np.any((ax - x) ** 2 + (ay - y) ** 2 < min_d2):
                continue
        accepted_x.append(x)
        accepted_y.append(y)
        apexes.append(Apex(int(rows[i]), int(cols[i]), x, y, float(heights[i])))
    return apexes


def _prepared_heights(chm: Grid, params: ItcParams) -> np.ndarray:
    values = np.where(chm.valid_mask(), chm.values, -np.inf)
    if params.smooth_chm:
        finite = np.isfinite(values)
        padded = np.where(finite, values, 0.0)
        counts = ndimage.uniform_filter(finite.astype(float), size=3,
                                        mode="constant", cval=0.0)
        sums = ndimage.uniform_filter(padded, size=3, mode="constant", cval=0.0)
        smoothed = np.where(counts > 0, sums / np.maximum(counts, 1e-30), -np.inf)
        values = np.where(finite, smoothed, -np.inf)
    return values


def grow_crowns(chm: Grid, apexes: list[Apex], params: ItcParams) -> list[CrownRecord]:
    """Region growing from each apex over 4-connected neighbors.

    A cell joins crown k when its height is >= thresh_seed * apex
    height, >= thresh_crown * the crown's running mean height, its
    center lies within max_dist/2 of the apex, and no other crown has
    claimed it. The frontier is processed in descending cell height;
    equal-height contests go to the crown with the taller apex.
    """
    values = _prepared_heights(chm, params)
    nrows, ncols = values.shape
    owner = np.zeros((nrows, ncols), dtype=np.int32)  # 0 = unclaimed

    sum_h = [0.0]
    count = [0]
    apex_h = [0.0]
    for k, apex in enumerate(apexes, start=1):
        owner[apex.row, apex.col] = k
        sum_h.append(apex.height)
        count.append(1)
        apex_h.append(apex.height)

    max_r2 = (params.max_dist / 2.0) ** 2
    cs = chm.cellsize

    # heap entries: (-cell height, -apex height, crown id, row, col)
    heap: list[tuple] = []
    for k, apex in enumerate(apexes, start=1):
        _push_neighbors(heap, values, owner, apex.row, apex.col, k, apex_h[k])
    heapq.heapify(heap)

    while heap:
        neg_h, neg_apex_h, k, r, c = heapq.heappop(heap)
        if owner[r, c] != 0:
            continue
        h = -neg_h
        if h < params.thresh_seed * apex_h[k]:
            continue
        if h < params.thresh_crown * (sum_h[k] / count[k]):
            continue
        apex = apexes[k - 1]
        dr = (r - apex.row) * cs
        dc = (c - apex.col) * cs
        if dr * dr + dc * dc > max_r2:
            continue
        owner[r, c] = k
        sum_h[k] += h
        count[k] += 1
        _push_neighbors(heap, values, owner, r, c, k, apex_h[k], heap_push=True)

    crowns = []
    cell_area = cs * cs
    for k, apex in enumerate(apexes, start=1):
        rows, cols = np.nonzero(owner == k)
        cells = frozenset(zip(rows.tolist(), cols.tolist()))
        area = len(cells) * cell_area
        crowns.append(CrownRecord(
            crown_id=k,
            apex_row=apex.row, apex_col=apex.col,
            apex_x=apex.x, apex_y=apex.y,
            tree_height=apex.height,
            crown_area=area,
            crown_diameter=2.0 * math.sqrt(area / math.pi),
            cell_set=cells,
        ))
    return crowns


def _push_neighbors(heap, values, owner, r, c, k, apex_height, heap_push=False):
    nrows, ncols = values.shape
    for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
        if 0 <= rr < nrows and 0 <= cc < ncols and owner[rr, cc] == 0:
            h = values[rr, cc]
            if not np.isfinite(h):
                continue
            entry = (-h, -apex_height, k, rr, cc)
            if heap_push:
                heapq.heappush(heap, entry)
            else:
                heap.append(entry)


def crown_label_grid(chm: Grid, crowns: list[CrownRecord]) -> Grid:
    """Grid of crown ids; background is nodata."""
    out = np.full(chm.values.shape, chm.nodata)
    for crown in crowns:
        for r, c in crown.cell_set:
            out[r, c] = crown.crown_id
    return chm.with_values(out)


def spatial_join(points: list[GroundTruthPoint], crowns: list[CrownRecord],
                 grid: Grid):
    """Assign ground-truth species to the crowns containing the points.

    When a crown contains points of more than one species, the point
    nearest the apex wins. Returns (species_by_crown_id, unmatched
    points).
    """
    cell_to_crown = {}
    by_id = {}
    for crown in crowns:
        by_id[crown.crown_id] = crown
        for cell in crown.cell_set:
            cell_to_crown[cell] = crown.crown_id

    hits: dict[int, list[tuple[float, int, str]]] = {}
    unmatched = []
    for i, p in enumerate(points):
        cell = grid.cell_of(p.x, p.y)
        cid = cell_to_crown.get(cell)
        if cid is None:
            unmatched.append(p)
            continue
        crown = by_id[cid]
        d = math.hypot(p.x - crown.apex_x, p.y - crown.apex_y)
        hits.setdefault(cid, []).append((d, i, p.species_code))

    species = {}
    for cid, lst in hits.items():
        lst.sort()
        species[cid] = lst[0][2]
    return species, unmatched


@dataclass(frozen=True)
class SplitResult:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    singletons: tuple[int, ...]  # species with one crown; forced to train


def split_train_test(labels: dict[int, str], train_fraction: float,
                     seed: int) -> SplitResult:
    """Stratified split of labeled crowns into train and test sets.

    Per species, floor(n * fraction) crowns go to train (at least one
    when n >= 2); singletons go to train and are flagged. Deterministic
    for a given seed.
    """
    if not (0 < train_fraction < 1):
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    by_species: dict[str, list[int]] = {}
    for cid in sorted(labels):
        by_species.setdefault(labels[cid], []).append(cid)

    train, test, singles = [], [], []
    for sp in sorted(by_species):
        ids = by_species[sp]
        if len(ids) == 1:
            train.append(ids[0])
            singles.append(ids[0])
            continue
        n_train = max(1, math.floor(len(ids) * train_fraction))
        perm = rng.permutation(len(ids))
        chosen = [ids[i] for i in perm[:n_train]]
        train.extend(chosen)
        test.extend(ids[i] for i in perm[n_train:])
    return SplitResult(tuple(sorted(train)), tuple(sorted(test)),
                       tuple(sorted(singles)))


# ---------------------------------------------------------------------------
# Crown table export
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = ("crown_id", "apex_x", "apex_y", "tree_height", "crown_area",
                  "crown_diameter", "species_code", "dbh", "volume", "agb")


def write_crown_table(crowns: list[CrownRecord], path) -> None:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return format(v, ".10g")
        return str(v)

    with open(path, "w") as f:
        f.write(",".join(_TABLE_COLUMNS) + "\n")
        for crown in crowns:
            f.write(",".join(cell(getattr(crown, col)) for col in _TABLE_COLUMNS))
            f.write("\n")
