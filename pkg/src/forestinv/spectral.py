"""Hyperspectral preparation and band selection.

Pixels are normalized by their own spectral mean, per-species Gaussian
statistics are estimated over training-crown pixels, and a suboptimal
band subset is searched with sequential floating forward selection
driven by the Jeffries-Matusita separability between species pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .geodata import HyperCube

RIDGE_SCALE = 1e-6
RIDGE_FLOOR = 1e-9


@dataclass(frozen=True)
class GaussianClassStats:
    """Per-species sample mean and ridge-regularized covariance."""

    species_code: str
    n_samples: int
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(np.asarray(self.mean, dtype=np.float64))
        cov = np.ascontiguousarray(np.asarray(self.covariance, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be a vector and covariance a matching "
                             "square matrix")
        if self.n_samples < 2:
            raise ValueError("need n_samples >= 2")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, indices) -> "GaussianClassStats":
        """Statistics restricted to a band subset (Gaussian marginal)."""
        idx = np.asarray(indices, dtype=np.intp)
        return GaussianClassStats(self.species_code, self.n_samples,
                                  self.mean[idx],
                                  self.covariance[np.ix_(idx, idx)])


@dataclass(frozen=True)
class BandSelection:
    indices: tuple[int, ...]
    criterion_value: float

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("band indices must be unique")


def trim_bands(cube: HyperCube, drop_head: int, drop_tail: int) -> HyperCube:
    """Drop noisy leading and trailing bands."""
    if drop_head < 0 or drop_tail < 0:
        raise ValueError("drops must be >= 0")
    if drop_head + drop_tail >= cube.nbands:
        raise DataError(f"cannot drop {drop_head}+{drop_tail} bands from a "
                        f"{cube.nbands}-band cube")
    stop = cube.nbands - drop_tail
    wl = cube.wavelengths[drop_head:stop] if cube.wavelengths is not None else None
    return HyperCube(cube.samples[drop_head:stop], cube.xll, cube.yll,
                     cube.cellsize, wl)


def normalize_spectrum(cube: HyperCube) -> tuple[HyperCube, int]:
    """Divide every pixel by its own spectral mean.

    Normalized pixels have spectral mean 1, so the operation is
    idempotent and insensitive to per-pixel illumination scaling.
    Pixels whose mean is 0 (or not finite) become NaN; their count is
    returned alongside the new cube.
    """
    means = cube.samples.mean(axis=0)
    bad = ~np.isfinite(means) | (means == 0.0)
    safe = np.where(bad, 1.0, means)
    out = cube.samples / safe[None, :, :]
    out = np.where(bad[None, :, :], np.nan, out)
    return HyperCube(out, cube.xll, cube.yll, cube.cellsize,
                     cube.wavelengths), int(bad.sum())


def class_statistics(cube: HyperCube,
                     samples_by_species: dict[str, np.ndarray],
                     band_subset=None,
                     min_pixels: int = 2):
    """Mean and unbiased covariance per species over the given pixels.

    `samples_by_species` maps species code to an (n, 2) array of
    (row, col) pixel indices, typically the cells of that species'
    training crowns. Covariances get a ridge of
    RIDGE_SCALE * trace/dim (floored at RIDGE_FLOOR) so later
    inversions stay well-posed even for tiny classes. Species with
    fewer than `min_pixels` valid pixels are skipped and reported.

    Returns (list of GaussianClassStats sorted by species code,
    skipped species codes).
    """
    if band_subset is None:
        band_subset = np.arange(cube.nbands)
    band_subset = np.asarray(band_subset, dtype=np.intp)

    stats = []
    skipped = []
    for species in sorted(samples_by_species):
        cells = np.asarray(samples_by_species[species])
        if cells.size:
            pix = cube.samples[band_subset][:, cells[:, 0], cells[:, 1]].T
            pix = pix[~np.isnan(pix).any(axis=1)]
        else:
            pix = np.empty((0, band_subset.size))
        if len(pix) < min_pixels:
            skipped.append(species)
            continue
        mean = pix.mean(axis=0)
        centered = pix - mean
        cov = centered.T @ centered / (len(pix) - 1)
        cov = 0.5 * (cov + cov.T)
        stats.append(GaussianClassStats(species, len(pix), mean,
                                        ridge_regularize(cov)))
    return stats, skipped


def ridge_regularize(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    eps = max(RIDGE_FLOOR, RIDGE_SCALE * float(np.trace(cov)) / dim)
    return cov + eps * np.eye(dim)


def jm_distance(a: GaussianClassStats, b: GaussianClassStats) -> float:
    """Jeffries-Matusita distance, 2 * (1 - exp(-B)).

    B is the Bhattacharyya distance between the two Gaussians:
    one eighth of the Mahalanobis term under the averaged covariance
    plus half the log-ratio of the averaged determinant to the
    geometric mean of the individual determinants.
    """
    if a.dim != b.dim:
        raise ValueError("class statistics have mismatched dimensions")
    diff = a.mean - b.mean
    mid = 0.5 * (a.covariance + b.covariance)
    try:
        solved = np.linalg.solve(mid, diff)
    except np.linalg.LinAlgError:
        raise NumericalError("singular mid-covariance in JM distance") from None
    quad = 0.125 * float(diff @ solved)

    sign_mid, logdet_mid = np.linalg.slogdet(mid)
    sign_a, logdet_a = np.linalg.slogdet(a.covariance)
    sign_b, logdet_b = np.linalg.slogdet(b.covariance)
    if sign_mid <= 0 or sign_a <= 0 or sign_b <= 0:
        raise NumericalError("non-positive-definite covariance in JM distance")
    logterm = 0.5 * (logdet_mid - 0.5 * (logdet_a + logdet_b))

    bhatt = max(0.0, quad + logterm)
    return min(2.0, 2.0 * (1.0 - math.exp(-bhatt)))


def jm_criterion(stats, indices, aggregate: str = "mean") -> float:
    """Aggregate pairwise JM over all species pairs on a band subset."""
    if len(stats) < 2:
        raise DataError("need at least two species")
    idx = np.asarray(sorted(indices), dtype=np.intp)
    marginals = [s.marginal(idx) for s in stats]
    values = [jm_distance(marginals[i], marginals[j])
              for i in range(len(marginals))
              for j in range(i + 1, len(marginals))]
    if aggregate == "mean":
        return float(np.mean(values))
    if aggregate == "min":
        return float(np.min(values))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def forward_select(stats, k: int, candidates=None,
                   aggregate: str = "mean") -> list[BandSelection]:
    """Plain sequential forward selection; returns the best subset found
    at every size 1..k (used to seed the floating search)."""
    pool = list(range(stats[0].dim)) if candidates is None else sorted(candidates)
    chosen: list[int] = []
    out = []
    for _ in range(k):
        best_band, best_score = None, -np.inf
        for band in pool:
            if band in chosen:
                continue
            score = jm_criterion(stats, chosen + [band], aggregate)
            if score > best_score:  # ties keep the lowest band index
                best_band, best_score = band, score
        chosen.append(best_band)
        out.append(BandSelection(tuple(sorted(chosen)), best_score))
    return out


def sffs_select(stats, k: int, candidates=None, aggregate: str = "mean",
                max_rounds: int = 10000) -> BandSelection:
    """Sequential floating forward selection of k bands.

    A plain forward pass seeds the best-known subset per size, then the
    floating phase alternates greedy inclusion with conditional
    exclusions that are accepted only when they strictly improve the
    best-known score at the smaller size. Deterministic: criterion ties
    always resolve to the lowest band index. Returns the best subset of
    size k encountered, which by construction scores at least as high
    as plain forward selection.
    """
    if k <= 0:
        raise ValueError("k must be >= 1")
    if len(stats) < 2:
        raise DataError("need at least two species")
    pool = list(range(stats[0].dim)) if candidates is None else sorted(candidates)
    if k > len(pool):
        raise ValueError(f"k={k} exceeds the {len(pool)} candidate bands")

    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    for sel in forward_select(stats, k, pool, aggregate):
        best[len(sel.indices)] = (sel.criterion_value, sel.indices)

    current = list(best[min(2, k)][1]) if k >= 2 else list(best[1][1])
    for _ in range(max_rounds):
        if len(current) >= k:
            score, subset = best[k]
            return BandSelection(subset, score)

        # inclusion
        best_band, best_score = None, -np.inf
        for band in pool:
            if band in current:
                continue
            score = jm_criterion(stats, current + [band], aggregate)
            if score > best_score:
                best_band, best_score = band, score
        current.append(best_band)
        size = len(current)
        if size not in best or best_score > best[size][0]:
            best[size] = (best_score, tuple(sorted(current)))

        # conditional exclusion
        while len(current) > 2:
            best_drop, best_drop_score = None, -np.inf
            for band in sorted(current):
                trial = [b for b in current if b != band]
                score = jm_criterion(stats, trial, aggregate)
                if score > best_drop_score:
                    best_drop, best_drop_score = band, score
            smaller = len(current) - 1
            if best_drop_score > best[smaller][0]:
                current.remove(best_drop)
                best[smaller] = (best_drop_score, tuple(sorted(current)))
            else:
                break

    raise NumericalError("floating selection did not settle; raise max_rounds")


def write_band_selection(selection: BandSelection, path) -> None:
    with open(path, "w") as f:
        f.write("indices," + ",".join(str(i) for i in selection.indices) + "\n")
        f.write(f"criterion,{selection.criterion_value:.10g}\n")


def read_band_selection(path) -> BandSelection:
    with open(path, "r") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    try:
        idx_line = next(ln for ln in lines if ln.startswith("indices"))
        crit_line = next(ln for ln in lines if ln.startswith("criterion"))
        indices = tuple(int(t) for t in idx_line.split(",")[1:] if t)
        criterion = float(crit_line.split(",")[1])
    except (StopIteration, ValueError, IndexError):
        raise DataError(f"{path}: malformed band selection file") from None
    return BandSelection(indices, criterion)


def write_stats_report(stats, skipped, path) -> None:
    """Plain-text audit dump of the per-species statistics."""
    with open(path, "w") as f:
        for s in stats:
            f.write(f"species {s.species_code} n={s.n_samples} dim={s.dim}\n")
            f.write("mean " + " ".join(format(v, ".10g") for v in s.mean) + "\n")
            f.write("cov_diag " + " ".join(format(v, ".10g")
                                           for v in np.diag(s.covariance)) + "\n")
        for sp in skipped:
            f.write(f"skipped {sp} (fewer than 2 valid pixels)\n")
