"""Supervised pixel classifiers and crown labeling.

Two classifiers are provided: a nearest-centroid minimum-distance
classifier and a soft-margin RBF-kernel SVM trained from scratch with
sequential minimal optimization, combined one-vs-one for multiclass.
Crowns receive the majority label of their classified pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .geodata import Grid, HyperCube

LABEL_NODATA = -9999.0


# ---------------------------------------------------------------------------
# Nearest-centroid classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CentroidModel:
    species: tuple[str, ...]          # sorted
    centroids: np.ndarray             # (n_species, n_features)
    bands: tuple[int, ...]

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        if arr.shape[0] != len(self.species) or len(self.species) < 2:
            raise ValueError("one centroid per species, at least two species")
        arr.flags.writeable = False
        object.__setattr__(self, "centroids", arr)


def train_centroid(pixels: np.ndarray, labels, bands=()) -> CentroidModel:
    """Centroid = arithmetic mean of each species' training pixels."""
    pixels = np.asarray(pixels, dtype=np.float64)
    labels = np.asarray(labels)
    species = sorted(set(labels.tolist()))
    if len(species) < 2:
        raise DataError("need at least two species to train a classifier")
    cents = np.empty((len(species), pixels.shape[1]))
    for i, sp in enumerate(species):
        sel = labels == sp
        if not sel.any():
            raise DataError(f"species {sp!r} has no training pixels")
        cents[i] = pixels[sel].mean(axis=0)
    return CentroidModel(tuple(species), cents, tuple(bands))


def predict_centroid(model: CentroidModel, pixels: np.ndarray):
    """Label of the nearest centroid; ties go to the lexicographically
    smallest species code."""
    pixels = np.asarray(pixels, dtype=np.float64)
    single = pixels.ndim == 1
    pixels = np.atleast_2d(pixels)
    if pixels.shape[1] != model.centroids.shape[1]:
        raise ValueError("pixel dimension does not match the model")
    d2 = ((pixels[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)  # first minimum = lexicographically smallest
    out = np.array([model.species[i] for i in idx])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# SVM with SMO
# ---------------------------------------------------------------------------


@dataclass
class BinarySvm:
    """One one-vs-one problem; decision > 0 votes for `pos`."""

    pos: str
    neg: str
    support_vectors: np.ndarray   # standardized feature rows
    coefficients: np.ndarray      # alpha_i * y_i, |.| <= C
    bias: float


@dataclass
class SvmModel:
    species: tuple[str, ...]
    bands: tuple[int, ...]
    scale_mean: np.ndarray
    scale_std: np.ndarray
    gamma: float
    C: float
    pairs: list[BinarySvm]


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||u - v||^2) for all row pairs."""
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: int = 200_000, raise_on_limit: bool = True):
    """Solve the soft-margin SVM dual by SMO on the maximal
    KKT-violating pair, maintaining the dual gradient.

    Returns (alpha, bias). Stops when the violation gap drops to tol;
    hitting max_iter raises unless raise_on_limit is off, in which case
    the current iterate is returned (each pair step takes the analytic
    subproblem optimum, so the dual objective never decreases).
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a at a = 0
    pos = y > 0

    for _ in range(max_iter):
        yg = -y * grad
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        up_scores = np.where(up, yg, -np.inf)
        low_scores = np.where(low, yg, np.inf)
        i = int(np.argmax(up_scores))
        j = int(np.argmin(low_scores))
        m_up = up_scores[i]
        m_low = low_scores[j]
        if m_up - m_low <= tol:
            break

        eta = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        step = (m_up - m_low) / eta
        step = min(step,
                   (C - alpha[i]) if y[i] > 0 else alpha[i],
                   alpha[j] if y[j] > 0 else (C - alpha[j]))
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # guard drift at the box boundary
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        grad += step * y * (K[:, i] - K[:, j])
    else:
        if raise_on_limit:
            raise NumericalError("SMO did not converge; raise max_iter or tol")
        yg = -y * grad
        up_scores = np.where((pos & (alpha < C)) | (~pos & (alpha > 0)),
                             yg, -np.inf)
        low_scores = np.where((pos & (alpha > 0)) | (~pos & (alpha < C)),
                              yg, np.inf)
        m_up = float(up_scores.max())
        m_low = float(low_scores.min())

    free = (alpha > 1e-10 * C) & (alpha < C * (1.0 - 1e-10))
    yg = -y * grad
    if free.any():
        bias = float(yg[free].mean())
    else:
        bias = float((m_up + m_low) / 2.0) if np.isfinite(m_up + m_low) else 0.0
    return alpha, bias


def train_svm(pixels: np.ndarray, labels, C: float = 10.0,
              gamma: float | None = None, bands=(), tol: float = 1e-3):
    """One-vs-one RBF SVMs over all species pairs.

    Features are standardized per band with the training mean/std
    (stored in the model). gamma defaults to 1 / n_features. Pairs with
    an empty side are skipped and reported in the returned warning
    list. Returns (SvmModel, warnings).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    labels = np.asarray(labels)
    species = sorted(set(labels.tolist()))
    if len(species) < 2:
        raise DataError("need at least two species to train a classifier")
    if not C > 0:
        raise ValueError("C must be > 0")
    if gamma is None:
        gamma = 1.0 / pixels.shape[1]
    if not gamma > 0:
        raise ValueError("gamma must be > 0")

    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    scaled = (pixels - mean) / std

    pairs = []
    warnings = []
    for ai in range(len(species)):
        for bi in range(ai + 1, len(species)):
            a, b = species[ai], species[bi]
            sel = (labels == a) | (labels == b)
            if not (labels == a).any() or not (labels == b).any():
                warnings.append(f"pair ({a}, {b}) skipped: one side empty")
                continue
            x = scaled[sel]
            y = np.where(labels[sel] == a, 1.0, -1.0)
            K = rbf_kernel(x, x, gamma)
            alpha, bias = smo_solve(K, y, C, tol=tol)
            keep = alpha > 1e-10 * C
            pairs.append(BinarySvm(a, b, x[keep], alpha[keep] * y[keep], bias))

    model = SvmModel(tuple(species), tuple(bands), mean, std, gamma, C, pairs)
    return model, warnings


def svm_decision(model: SvmModel, pair: BinarySvm,
                 scaled_pixels: np.ndarray) -> np.ndarray:
    k = rbf_kernel(scaled_pixels, pair.support_vectors, model.gamma)
    return k @ pair.coefficients + pair.bias


def predict_svm(model: SvmModel, pixels: np.ndarray):
    """One-vs-one voting; vote ties break on the summed decision margin,
    residual ties lexicographically."""
    pixels = np.asarray(pixels, dtype=np.float64)
    single = pixels.ndim == 1
    pixels = np.atleast_2d(pixels)
    if pixels.shape[1] != model.scale_mean.size:
        raise ValueError("pixel dimension does not match the model")
    scaled = (pixels - model.scale_mean) / model.scale_std

    n = len(scaled)
    index = {sp: i for i, sp in enumerate(model.species)}
    votes = np.zeros((n, len(model.species)), dtype=np.int64)
    margin = np.zeros((n, len(model.species)))
    for pair in model.pairs:
        f = svm_decision(model, pair, scaled)
        ia, ib = index[pair.pos], index[pair.neg]
        pos_wins = f > 0
        votes[pos_wins, ia] += 1
        votes[~pos_wins, ib] += 1
        margin[:, ia] += f
        margin[:, ib] -= f

    # species are sorted, so index order doubles as the lexicographic rule
    best = np.zeros(n, dtype=np.int64)
    for i in range(n):
        best[i] = max(range(len(model.species)),
                      key=lambda s: (votes[i, s], margin[i, s], -s))
    out = np.array([model.species[i] for i in best])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Image classification and crown labeling
# ---------------------------------------------------------------------------


def classify_image(cube: HyperCube, band_subset, model, mask: Grid | None = None,
                   chunk: int = 8192):
    """Per-pixel prediction over masked pixels.

    `mask` marks active pixels (valid and nonzero); inactive or NaN
    pixels become nodata. Returns (label Grid with integer species
    codes, legend mapping code -> species).
    """
    band_subset = np.asarray(band_subset, dtype=np.intp)
    species = model.species
    legend = {i + 1: sp for i, sp in enumerate(species)}
    code_of = {sp: i + 1 for i, sp in enumerate(species)}

    data = cube.samples[band_subset]  # (d, rows, cols)
    active = np.ones((cube.nrows, cube.ncols), dtype=bool)
    if mask is not None:
        if (mask.values.shape != active.shape):
            raise DataError("mask grid is not aligned with the cube")
        active = mask.valid_mask() & (mask.values != 0)
    active &= ~np.isnan(data).any(axis=0)

    out = np.full((cube.nrows, cube.ncols), LABEL_NODATA)
    rows, cols = np.nonzero(active)
    predict = predict_svm if isinstance(model, SvmModel) else predict_centroid
    for start in range(0, len(rows), chunk):
        r = rows[start:start + chunk]
        c = cols[start:start + chunk]
        x = data[:, r, c].T
        pred = predict(model, x)
        out[r, c] = [code_of[p] for p in pred]
    grid = Grid(out, cube.xll, cube.yll, cube.cellsize, LABEL_NODATA)
    return grid, legend


def label_crowns_majority(label_grid: Grid, legend: dict[int, str], crowns):
    """Most frequent classified species inside each crown.

    Ties go to the lexicographically smallest species; crowns whose
    pixels are all nodata stay unset and are reported. Mutates
    crown.species_code in place and returns the ids left unlabeled.
    """
    unlabeled = []
    for crown in crowns:
        counts: dict[str, int] = {}
        for r, c in crown.cell_set:
            v = label_grid.values[r, c]
            if v == label_grid.nodata or np.isnan(v):
                continue
            sp = legend.get(int(v))
            if sp is not None:
                counts[sp] = counts.get(sp, 0) + 1
        if not counts:
            crown.species_code = None
            unlabeled.append(crown.crown_id)
            continue
        crown.species_code = min(counts, key=lambda sp: (-counts[sp], sp))
    return unlabeled


def write_legend(legend: dict[int, str], path) -> None:
    with open(path, "w") as f:
        f.write("code,species\n")
        for code in sorted(legend):
            f.write(f"{code},{legend[code]}\n")


def read_legend(path) -> dict[int, str]:
    legend = {}
    with open(path, "r") as f:
        header = f.readline()
        for line in f:
            if not line.strip():
                continue
            code, sp = line.strip().split(",")
            legend[int(code)] = sp
    return legend


# ---------------------------------------------------------------------------
# Model serialization (versioned text format)
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "forestinv-model 1"


def _vec(arr) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(arr).ravel())


def save_model(model, path) -> None:
    with open(path, "w") as f:
        f.write(_MODEL_MAGIC + "\n")
        if isinstance(model, CentroidModel):
            f.write("type centroid\n")
            f.write("bands " + ",".join(str(b) for b in model.bands) + "\n")
            f.write("species " + ",".join(model.species) + "\n")
            for sp, cent in zip(model.species, model.centroids):
                f.write(f"centroid {sp} {_vec(cent)}\n")
        elif isinstance(model, SvmModel):
            f.write("type svm\n")
            f.write("bands " + ",".join(str(b) for b in model.bands) + "\n")
            f.write("species " + ",".join(model.species) + "\n")
            f.write(f"gamma {model.gamma:.17g}\n")
            f.write(f"cost {model.C:.17g}\n")
            f.write("scale_mean " + _vec(model.scale_mean) + "\n")
            f.write("scale_std " + _vec(model.scale_std) + "\n")
            for pair in model.pairs:
                f.write(f"pair {pair.pos} {pair.neg} {pair.bias:.17g} "
                        f"{len(pair.coefficients)}\n")
                for coef, sv in zip(pair.coefficients, pair.support_vectors):
                    f.write(f"sv {coef:.17g} {_vec(sv)}\n")
        else:
            raise ValueError(f"cannot serialize {type(model).__name__}")


def load_model(path):
    with open(path, "r") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a {_MODEL_MAGIC} file")

    fields = {}
    pairs = []
    centroids = []
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "pair":
            pos, neg, bias, nsv = rest.split()
            coefs, svs = [], []
            for _ in range(int(nsv)):
                tokens = lines[i].split()
                i += 1
                coefs.append(float(tokens[1]))
                svs.append([float(t) for t in tokens[2:]])
            pairs.append(BinarySvm(pos, neg,
                                   np.array(svs, dtype=np.float64).reshape(
                                       int(nsv), -1),
                                   np.array(coefs), float(bias)))
        elif key == "centroid":
            sp, _, vec = rest.partition(" ")
            centroids.append((sp, [float(t) for t in vec.split()]))
        else:
            fields[key] = rest

    bands = tuple(int(t) for t in fields.get("bands", "").split(",") if t)
    species = tuple(fields["species"].split(","))
    if fields["type"] == "centroid":
        return CentroidModel(species, np.array([c for _, c in centroids]), bands)
    if fields["type"] == "svm":
        return SvmModel(species, bands,
                        np.array([float(t) for t in fields["scale_mean"].split()]),
                        np.array([float(t) for t in fields["scale_std"].split()]),
                        float(fields["gamma"]), float(fields["cost"]), pairs)
    raise DataError(f"{path}: unknown model type {fields['type']!r}")
