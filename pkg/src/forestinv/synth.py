"""Synthetic scene generation for desk-scale pipeline verification.

A scene renders a list of trees onto a terrain surface as radial canopy
profiles, samples that surface into a LiDAR point cloud at a target
density, paints a co-registered hyperspectral cube from per-species
signatures plus Gaussian noise, and emits ground-truth tree points,
field plots and truth tables. Plot truth values are computed with the
same allometric formulas the inventory applies, so end-to-end
comparisons isolate the geometric and classification machinery.

The default "tapered_cone" profile keeps the canopy surface at
edge_fraction of the apex height at the nominal crown radius (real
crown edges drop to understory level, not to bare ground), which makes
the nominal footprint recoverable by seed-threshold region growing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .allometry import DbhModel, SpeciesRegistry, agb_jucker, estimate_dbh, \
    volume_double_entry
from .errors import DataError
from .evaluate import PlotDefinition, write_plot_definitions
from .geodata import (
    Grid,
    GroundTruthPoint,
    HyperCube,
    PointCloud,
    write_ascii_grid,
    write_envi_cube,
    write_ground_truth,
    write_point_cloud,
)

_SHAPES = ("cone", "tapered_cone", "paraboloid")
_TERRAINS = ("flat", "slope", "hills")
_BASE_ELEVATION = 500.0


@dataclass(frozen=True)
class TreeSpec:
    x: float
    y: float
    height: float
    crown_radius: float
    species: str


@dataclass(frozen=True)
class SceneSpec:
    """Complete recipe for one synthetic scene."""

    seed: int
    xll: float
    yll: float
    width: float
    height: float
    trees: tuple[TreeSpec, ...]
    signatures: dict[str, np.ndarray]       # per-species, useful bands only
    background: np.ndarray
    plots: tuple[PlotDefinition, ...] = ()
    chm_resolution: float = 0.5
    dtm_resolution: float = 1.0
    noise_sigma: float = 0.02
    junk_head: int = 7
    junk_tail: int = 8
    shape: str = "tapered_cone"
    edge_fraction: float = 0.55
    skirt_width: float = 3.0
    truth_contour_fraction: float = 0.55
    point_density: float = 10.0
    terrain: str = "flat"

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValueError(f"unknown crown shape {self.shape!r}")
        if self.terrain not in _TERRAINS:
            raise ValueError(f"unknown terrain {self.terrain!r}")
        if not (0 < self.edge_fraction < 1):
            raise ValueError("edge_fraction must lie strictly between 0 and 1")
        if self.point_density <= 0:
            raise ValueError("point_density must be > 0")


@dataclass(frozen=True)
class TreeTruth:
    tree_id: int
    x: float
    y: float
    species: str
    height: float
    crown_diameter: float
    dbh: float
    volume: float
    agb: float


@dataclass(frozen=True)
class PlotTruth:
    plot_id: int
    volume_m3: float
    agb_mg: float
    n_trees: int


@dataclass
class SceneData:
    spec: SceneSpec
    dtm: Grid
    cloud: PointCloud
    cube: HyperCube
    ground_truth: list[GroundTruthPoint]
    plots: tuple[PlotDefinition, ...]
    truth_trees: list[TreeTruth]
    truth_plots: list[PlotTruth]


# ---------------------------------------------------------------------------
# Canopy profile
# ---------------------------------------------------------------------------


def profile_height(spec: SceneSpec, tree: TreeSpec, r):
    """Canopy height of one tree at radial distance r from its apex."""
    r = np.asarray(r, dtype=np.float64)
    h, radius = tree.height, tree.crown_radius
    if spec.shape == "cone":
        return h * np.clip(1.0 - r / radius, 0.0, None)
    if spec.shape == "paraboloid":
        return h * np.clip(1.0 - (r / radius) ** 2, 0.0, None)
    e = spec.edge_fraction
    inner = h * (1.0 - (1.0 - e) * np.minimum(r, radius) / radius)
    skirt = h * e * np.clip(1.0 - (r - radius) / spec.skirt_width, 0.0, 1.0)
    return np.where(r <= radius, inner, skirt)


def reach(spec: SceneSpec, tree: TreeSpec) -> float:
    """Radius beyond which the tree's profile is zero."""
    if spec.shape == "tapered_cone":
        return tree.crown_radius + spec.skirt_width
    return tree.crown_radius


def contour_radius(spec: SceneSpec, tree: TreeSpec,
                   fraction: float | None = None) -> float:
    """Radius where the profile crosses fraction * apex height."""
    f = spec.truth_contour_fraction if fraction is None else fraction
    radius = tree.crown_radius
    if spec.shape == "cone":
        return radius * (1.0 - f)
    if spec.shape == "paraboloid":
        return radius * math.sqrt(1.0 - f)
    e = spec.edge_fraction
    if f >= e:
        return radius * (1.0 - f) / (1.0 - e)
    return radius + spec.skirt_width * (1.0 - f / e)


def render_canopy_grid(spec: SceneSpec) -> Grid:
    """Analytic canopy height raster of the scene (no LiDAR sampling).

    Useful as a noise-free CHM for exercising crown delineation against
    closed-form oracles.
    """
    res = spec.chm_resolution
    ncols = int(round(spec.width / res))
    nrows = int(round(spec.height / res))
    cx = spec.xll + (np.arange(ncols) + 0.5) * res
    cy = spec.yll + (nrows - np.arange(nrows) - 0.5) * res
    gx, gy = np.meshgrid(cx, cy)
    return Grid(_canopy_surface(spec, gx, gy), spec.xll, spec.yll, res)


def _terrain_z(terrain: str, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if terrain == "flat":
        return np.full(np.broadcast(x, y).shape, _BASE_ELEVATION)
    if terrain == "slope":
        return _BASE_ELEVATION + 0.05 * x
    return (_BASE_ELEVATION + 8.0 * np.sin(x / 37.0) * np.cos(y / 41.0))


def _canopy_surface(spec: SceneSpec, x, y, want_owner=False):
    """Max canopy height over all trees at the given coordinates.

    With want_owner, also returns the 0-based index of the covering
    (tallest) tree, -1 where no tree covers the point.
    """
    surface = np.zeros(x.shape)
    owner = np.full(x.shape, -1, dtype=np.int32)
    for idx, tree in enumerate(spec.trees):
        rad = reach(spec, tree)
        box = ((x >= tree.x - rad) & (x <= tree.x + rad)
               & (y >= tree.y - rad) & (y <= tree.y + rad))
        if not box.any():
            continue
        r = np.hypot(x[box] - tree.x, y[box] - tree.y)
        h = profile_height(spec, tree, r)
        cur = surface[box]
        better = h > cur
        cur = np.where(better, h, cur)
        surface[box] = cur
        if want_owner:
            sub = owner[box]
            sub[better] = idx
            owner[box] = sub
    return (surface, owner) if want_owner else surface


# ---------------------------------------------------------------------------
# Scene construction
# ---------------------------------------------------------------------------


def random_scene(seed: int, n_trees: int, species: list[str],
                 nbands: int = 16, pitch: float = 13.0, margin: float = 9.0,
                 jitter: float = 0.9, height_range=(14.0, 24.0),
                 radius_range=(2.5, 4.5), n_plots: int = 10,
                 plot_radius: float = 15.0, signature_amplitude: float = 0.6,
                 **overrides) -> SceneSpec:
    """Jittered-grid scene: pairwise apex spacing stays above
    pitch - 2*jitter - cell diagonal, and apexes snap to CHM cell
    centers so detection oracles are exact."""
    rng = np.random.default_rng(seed)
    res = overrides.get("chm_resolution", 0.5)

    nx = math.ceil(math.sqrt(n_trees))
    ny = math.ceil(n_trees / nx)
    width = 2 * margin + (nx - 1) * pitch
    height = 2 * margin + (ny - 1) * pitch
    width = math.ceil(width / res) * res
    height = math.ceil(height / res) * res
    xll, yll = 0.0, 0.0

    slots = [(xll + margin + i * pitch, yll + margin + j * pitch)
             for j in range(ny) for i in range(nx)]
    order = rng.permutation(len(slots))[:n_trees]

    h_lo, h_hi = height_range
    r_lo, r_hi = radius_range
    trees = []
    for k, slot in enumerate(order):
        sx, sy = slots[slot]
        x = sx + rng.uniform(-jitter, jitter)
        y = sy + rng.uniform(-jitter, jitter)
        # snap apex onto a CHM cell center
        x = xll + (math.floor((x - xll) / res) + 0.5) * res
        y = yll + (math.floor((y - yll) / res) + 0.5) * res
        h = rng.uniform(h_lo, h_hi)
        frac = (h - h_lo) / max(h_hi - h_lo, 1e-9)
        radius = np.clip(r_lo + frac * (r_hi - r_lo) + rng.uniform(-0.2, 0.2),
                         r_lo, r_hi)
        trees.append(TreeSpec(x, y, h, float(radius),
                              species[k % len(species)]))

    plots = []
    for pid in range(1, n_plots + 1):
        px = rng.uniform(xll + plot_radius, xll + width - plot_radius)
        py = rng.uniform(yll + plot_radius, yll + height - plot_radius)
        plots.append(PlotDefinition(pid, px, py, plot_radius))

    bands = np.arange(nbands, dtype=np.float64)
    sig_width = max(1.5, nbands / 12.0)
    signatures = {}
    for i, sp in enumerate(sorted(set(species))):
        center = (i + 1) * nbands / (len(set(species)) + 2)
        signatures[sp] = 1.0 + signature_amplitude * np.exp(
            -((bands - center) ** 2) / (2 * sig_width ** 2))
    bg_center = nbands * (len(set(species)) + 1) / (len(set(species)) + 2)
    background = 1.0 + signature_amplitude * np.exp(
        -((bands - bg_center) ** 2) / (2 * sig_width ** 2))

    return SceneSpec(seed=seed, xll=xll, yll=yll, width=width, height=height,
                     trees=tuple(trees), signatures=signatures,
                     background=background, plots=tuple(plots), **overrides)


def generate_scene(spec: SceneSpec) -> SceneData:
    """Render the scene: DTM, LiDAR cloud, hyperspectral cube,
    ground-truth points, plots and truth tables."""
    for i, tree in enumerate(spec.trees):
        if not (spec.xll <= tree.x <= spec.xll + spec.width
                and spec.yll <= tree.y <= spec.yll + spec.height):
            raise DataError(f"tree {i} at ({tree.x}, {tree.y}) is outside "
                            f"the scene bounds")

    rng = np.random.default_rng(spec.seed)

    # DTM one cell wider than the scene so every point is inside the
    # bilinear interpolation hull
    dres = spec.dtm_resolution
    d_ncols = math.ceil(spec.width / dres) + 2
    d_nrows = math.ceil(spec.height / dres) + 2
    d_xll = spec.xll - dres
    d_yll = spec.yll - dres
    cols = np.arange(d_ncols)
    rows = np.arange(d_nrows)
    dx = d_xll + (cols + 0.5) * dres
    dy = d_yll + (d_nrows - rows - 0.5) * dres
    gx, gy = np.meshgrid(dx, dy)
    dtm = Grid(_terrain_z(spec.terrain, gx, gy), d_xll, d_yll, dres)

    # LiDAR returns: uniform sampling of the canopy surface plus one
    # exact return at every apex
    n_points = int(round(spec.point_density * spec.width * spec.height))
    px = rng.uniform(spec.xll, spec.xll + spec.width, n_points)
    py = rng.uniform(spec.yll, spec.yll + spec.height, n_points)
    canopy = _canopy_surface(spec, px, py)
    px = np.append(px, [t.x for t in spec.trees])
    py = np.append(py, [t.y for t in spec.trees])
    canopy = np.append(canopy, [t.height for t in spec.trees])
    pz = _terrain_z(spec.terrain, px, py) + canopy
    cloud = PointCloud.from_xyz(px, py, pz, is_ground=canopy == 0.0)

    # hyperspectral cube on the CHM grid
    res = spec.chm_resolution
    ncols = int(round(spec.width / res))
    nrows = int(round(spec.height / res))
    cx = spec.xll + (np.arange(ncols) + 0.5) * res
    cy = spec.yll + (nrows - np.arange(nrows) - 0.5) * res
    ggx, ggy = np.meshgrid(cx, cy)
    _, owner = _canopy_surface(spec, ggx, ggy, want_owner=True)

    species_sorted = sorted(spec.signatures)
    n_useful = spec.background.size
    total_bands = spec.junk_head + n_useful + spec.junk_tail
    cube_arr = np.empty((total_bands, nrows, ncols))
    useful = slice(spec.junk_head, spec.junk_head + n_useful)

    spectra = np.tile(spec.background[:, None, None], (1, nrows, ncols))
    for idx, tree in enumerate(spec.trees):
        sel = owner == idx
        if sel.any():
            spectra[:, sel] = spec.signatures[tree.species][:, None]
    if spec.noise_sigma > 0:
        spectra = spectra + rng.normal(0.0, spec.noise_sigma, spectra.shape)
    cube_arr[useful] = spectra
    if spec.junk_head:
        cube_arr[:spec.junk_head] = rng.normal(0.5, 0.3,
                                               (spec.junk_head, nrows, ncols))
    if spec.junk_tail:
        cube_arr[-spec.junk_tail:] = rng.normal(0.5, 0.3,
                                                (spec.junk_tail, nrows, ncols))
    wavelengths = np.linspace(0.38, 1.05, total_bands)
    cube = HyperCube(cube_arr, spec.xll, spec.yll, res, wavelengths)

    ground_truth = [GroundTruthPoint(t.x, t.y, t.species) for t in spec.trees]

    truth_trees = _truth_trees(spec)
    truth_plots = _truth_plots(spec, truth_trees)

    return SceneData(spec, dtm, cloud, cube, ground_truth, spec.plots,
                     truth_trees, truth_plots)


def _truth_trees(spec: SceneSpec) -> list[TreeTruth]:
    registry = SpeciesRegistry()
    dbh_model = DbhModel()
    out = []
    for i, tree in enumerate(spec.trees, start=1):
        cd = 2.0 * contour_radius(spec, tree)
        dbh = estimate_dbh(tree.height, cd, dbh_model)
        agb = agb_jucker(tree.height, cd, registry.group(tree.species))
        params, _ = registry.volume_params(tree.species)
        volume, _ = volume_double_entry(dbh, tree.height, params)
        out.append(TreeTruth(i, tree.x, tree.y, tree.species, tree.height,
                             cd, dbh, volume, agb))
    return out


def _truth_plots(spec: SceneSpec, truth_trees: list[TreeTruth]) -> list[PlotTruth]:
    out = []
    for plot in spec.plots:
        volume = 0.0
        agb_kg = 0.0
        n = 0
        for t in truth_trees:
            d2 = (t.x - plot.center_x) ** 2 + (t.y - plot.center_y) ** 2
            if d2 > plot.radius ** 2 or not t.dbh > plot.dbh_min:
                continue
            volume += t.volume
            agb_kg += t.agb
            n += 1
        out.append(PlotTruth(plot.plot_id, volume, agb_kg / 1000.0, n))
    return out


# ---------------------------------------------------------------------------
# File emission
# ---------------------------------------------------------------------------


def write_scene(data: SceneData, outdir) -> dict[str, str]:
    """Write every scene artifact; returns name -> path."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "dtm": outdir / "dtm.asc",
        "point_cloud": outdir / "points.csv",
        "cube_header": outdir / "cube.hdr",
        "cube_data": outdir / "cube.dat",
        "ground_truth": outdir / "ground_truth.csv",
        "plots": outdir / "plots.csv",
        "truth_trees": outdir / "truth_trees.csv",
        "truth_plots": outdir / "truth_plots.csv",
    }
    write_ascii_grid(data.dtm, paths["dtm"])
    write_point_cloud(data.cloud, paths["point_cloud"])
    write_envi_cube(data.cube, paths["cube_header"], paths["cube_data"])
    write_ground_truth(data.ground_truth, paths["ground_truth"])
    write_plot_definitions(data.plots, paths["plots"])

    with open(paths["truth_trees"], "w") as f:
        f.write("tree_id,x,y,species,height,crown_diameter,dbh,volume,agb\n")
        for t in data.truth_trees:
            f.write(f"{t.tree_id},{t.x:.10g},{t.y:.10g},{t.species},"
                    f"{t.height:.10g},{t.crown_diameter:.10g},{t.dbh:.10g},"
                    f"{t.volume:.10g},{t.agb:.10g}\n")
    with open(paths["truth_plots"], "w") as f:
        f.write("plot_id,volume_m3,agb_mg,n_trees\n")
        for p in data.truth_plots:
            f.write(f"{p.plot_id},{p.volume_m3:.10g},{p.agb_mg:.10g},"
                    f"{p.n_trees}\n")
    return {k: str(v) for k, v in paths.items()}


def read_truth_plots(path) -> list[PlotTruth]:
    out = []
    with open(path, "r") as f:
        header = f.readline()
        if not header.lower().startswith("plot_id"):
            raise DataError(f"{path}: malformed truth plot table")
        for line in f:
            if not line.strip():
                continue
            tokens = line.strip().split(",")
            out.append(PlotTruth(int(tokens[0]), float(tokens[1]),
                                 float(tokens[2]), int(tokens[3])))
    return out
