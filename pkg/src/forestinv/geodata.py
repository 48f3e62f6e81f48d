"""Core geospatial data types and file I/O.

Rasters are stored row-major with row 0 at the northern edge, so the
center of cell (r, c) sits at

    x = xll + (c + 0.5) * cellsize
    y = yll + (nrows - r - 0.5) * cellsize

All values are held as float64 internally; files round-trip to at least
nine significant digits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CubeFormatError,
    DataError,
    GridFormatError,
    OutOfBoundsError,
    PointCloudFormatError,
)

DEFAULT_NODATA = -9999.0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Georeferenced single-band raster.

    Parameters
    ----------
    values : ndarray, shape (nrows, ncols)
        Cell values, row 0 = north. Cells equal to `nodata` are invalid.
    xll, yll : float
        Map coordinates of the lower-left corner of the raster (m).
    cellsize : float
        Cell edge length (m), > 0.
    nodata : float
        Sentinel marking invalid cells.
    """

    values: np.ndarray
    xll: float
    yll: float
    cellsize: float
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("grid values must be a 2-D array with >= 1 cell")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be > 0")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Boolean mask of cells that are not nodata (and not NaN)."""
        return ~np.isnan(self.values) & (self.values != self.nodata)

    def cell_center(self, row, col):
        """Map coordinates of a cell center; accepts scalars or arrays."""
        row = np.asarray(row)
        col = np.asarray(col)
        x = self.xll + (col + 0.5) * self.cellsize
        y = self.yll + (self.nrows - row - 0.5) * self.cellsize
        return x, y

    def cell_of(self, x, y):
        """(row, col) of the cell containing map point (x, y)."""
        scalar = np.isscalar(x) and np.isscalar(y)
        x = np.asarray(x)
        y = np.asarray(y)
        col = np.floor((x - self.xll) / self.cellsize).astype(np.int64)
        row = self.nrows - 1 - np.floor((y - self.yll) / self.cellsize).astype(np.int64)
        if scalar:
            return int(row), int(col)
        return row, col

    def contains_cell(self, row, col) -> bool:
        return 0 <= row < self.nrows and 0 <= col < self.ncols

    def with_values(self, values: np.ndarray) -> "Grid":
        """New grid on the same georeference with different values."""
        return Grid(values, self.xll, self.yll, self.cellsize, self.nodata)


@dataclass(frozen=True)
class PointCloud:
    """Set of LiDAR returns stored as parallel column arrays.

    `height` (height above ground) is NaN until `chm.normalize_heights`
    fills it in. Heights below `height_floor` are rejected at
    construction; the CHM stage clamps anything negative to zero.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    return_number: np.ndarray
    is_ground: np.ndarray
    height: np.ndarray
    height_floor: float = -1.0

    def __post_init__(self):
        n = len(self.x)
        cols = {}
        for name, dtype in (("x", np.float64), ("y", np.float64), ("z", np.float64),
                            ("return_number", np.int32), ("is_ground", bool),
                            ("height", np.float64)):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=dtype))
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has wrong length")
            cols[name] = arr
        for name in ("x", "y", "z"):
            if not np.all(np.isfinite(cols[name])):
                raise ValueError(f"non-finite values in column {name!r}")
        h = cols["height"]
        if np.any(h[~np.isnan(h)] < self.height_floor):
            raise ValueError(f"height above ground below floor {self.height_floor}")
        for arr in cols.values():
            arr.flags.writeable = False
        for name, arr in cols.items():
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_xyz(cls, x, y, z, return_number=None, is_ground=None, height=None,
                 height_floor=-1.0) -> "PointCloud":
        n = len(x)
        if return_number is None:
            return_number = np.ones(n, dtype=np.int32)
        if is_ground is None:
            is_ground = np.zeros(n, dtype=bool)
        if height is None:
            height = np.full(n, np.nan)
        return cls(x, y, z, return_number, is_ground, height, height_floor)

    def has_heights(self) -> bool:
        return not np.any(np.isnan(self.height))


@dataclass(frozen=True)
class HyperCube:
    """Georeferenced multi-band image, band-sequential.

    `samples` has shape (nbands, nrows, ncols). NaN marks invalid pixels
    (e.g. pixels rejected by spectral normalization).
    """

    samples: np.ndarray
    xll: float
    yll: float
    cellsize: float
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if arr.ndim != 3:
            raise ValueError("cube samples must have shape (nbands, nrows, ncols)")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if self.wavelengths is not None:
            wl = np.ascontiguousarray(np.asarray(self.wavelengths, dtype=np.float64))
            if wl.shape != (arr.shape[0],):
                raise ValueError("one wavelength per band required")
            if np.any(np.diff(wl) <= 0):
                raise ValueError("wavelengths must be strictly increasing")
            wl.flags.writeable = False
            object.__setattr__(self, "wavelengths", wl)

    @property
    def nbands(self) -> int:
        return self.samples.shape[0]

    @property
    def nrows(self) -> int:
        return self.samples.shape[1]

    @property
    def ncols(self) -> int:
        return self.samples.shape[2]

    def pixel(self, row: int, col: int) -> np.ndarray:
        """Spectrum of one pixel, shape (nbands,)."""
        return self.samples[:, row, col]


@dataclass(frozen=True)
class GroundTruthPoint:
    """Field-surveyed tree position labeled with a species code."""

    x: float
    y: float
    species_code: str
    role: str = "unassigned"

    def __post_init__(self):
        if not self.species_code:
            raise ValueError("species_code must be nonempty")
        if self.role not in ("train", "test", "unassigned"):
            raise ValueError(f"unknown role {self.role!r}")


# ---------------------------------------------------------------------------
# ESRI ASCII grid I/O
# ---------------------------------------------------------------------------

_GRID_HEADER_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize",
                     "nodata_value"}


def read_ascii_grid(path) -> Grid:
    """Read an ESRI ASCII grid (.asc).

    Header keys are accepted in any letter case and any order;
    NODATA_VALUE is optional and defaults to -9999. Each data line must
    hold exactly NCOLS values, north row first.
    """
    with open(path, "r") as f:
        lines = f.read().splitlines()

    header: dict[str, float] = {}
    data_start = None
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0].lower()
        if key in _GRID_HEADER_KEYS:
            if len(tokens) != 2:
                raise GridFormatError(f"{path}: line {lineno}: header key "
                                      f"{tokens[0]!r} needs exactly one value")
            try:
                header[key] = float(tokens[1])
            except ValueError:
                raise GridFormatError(f"{path}: line {lineno}: non-numeric header "
                                      f"value {tokens[1]!r}") from None
        elif _is_number(tokens[0]):
            data_start = lineno
            break
        else:
            raise GridFormatError(f"{path}: line {lineno}: malformed header key "
                                  f"{tokens[0]!r}")

    required = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
    missing = [k for k in required if k not in header]
    if missing:
        raise GridFormatError(f"{path}: missing header key(s) {', '.join(missing)}")
    if data_start is None:
        raise GridFormatError(f"{path}: no data rows")

    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if ncols != header["ncols"] or nrows != header["nrows"] or ncols < 1 or nrows < 1:
        raise GridFormatError(f"{path}: NCOLS/NROWS must be positive integers")
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    values = np.empty((nrows, ncols), dtype=np.float64)
    row = 0
    for lineno, line in enumerate(lines[data_start - 1:], start=data_start):
        tokens = line.split()
        if not tokens:
            continue
        if row >= nrows:
            raise GridFormatError(f"{path}: line {lineno}: more data rows than the "
                                  f"declared {nrows}")
        if len(tokens) != ncols:
            raise GridFormatError(f"{path}: row {row + 1} (line {lineno}) has "
                                  f"{len(tokens)} values, expected {ncols}")
        try:
            values[row] = [float(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise GridFormatError(f"{path}: row {row + 1} (line {lineno}): "
                                  f"non-numeric token {bad!r}") from None
        row += 1
    if row != nrows:
        raise GridFormatError(f"{path}: found {row} data rows, expected {nrows}")

    return Grid(values, header["xllcorner"], header["yllcorner"],
                header["cellsize"], nodata)


def write_ascii_grid(grid: Grid, path) -> None:
    """Write an ESRI ASCII grid; one line per raster row, north first."""
    with open(path, "w") as f:
        f.write(f"NCOLS {grid.ncols}\n")
        f.write(f"NROWS {grid.nrows}\n")
        f.write(f"XLLCORNER {_fmt(grid.xll)}\n")
        f.write(f"YLLCORNER {_fmt(grid.yll)}\n")
        f.write(f"CELLSIZE {_fmt(grid.cellsize)}\n")
        f.write(f"NODATA_VALUE {_fmt(grid.nodata)}\n")
        for row in grid.values:
            f.write(" ".join(_fmt(v) for v in row))
            f.write("\n")


def _fmt(v: float) -> str:
    # >= 9 significant digits; integers come out clean (e.g. "100")
    return format(float(v), ".10g")


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Delimited point cloud I/O
# ---------------------------------------------------------------------------

_CLOUD_COLUMNS = ("x", "y", "z", "return_number", "is_ground")


def read_point_cloud(path) -> PointCloud:
    """Read a delimited point cloud: header ``x,y,z[,return_number][,is_ground]``.

    Missing optional columns default to return_number=1, is_ground=0.
    """
    with open(path, "r") as f:
        header_line = f.readline()
        if not header_line.strip():
            raise PointCloudFormatError(f"{path}: empty file")
        names = [t.strip().lower() for t in header_line.split(",")]
        if names != list(_CLOUD_COLUMNS[:len(names)]) or len(names) < 3:
            raise PointCloudFormatError(
                f"{path}: line 1: header must be x,y,z[,return_number][,is_ground], "
                f"got {header_line.strip()!r}")
        try:
            data = np.loadtxt(f, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError:
            _locate_bad_cloud_line(path, len(names))
            raise  # unreachable; _locate_bad_cloud_line always raises

    if data.size == 0:
        raise PointCloudFormatError(f"{path}: no data lines")
    if data.shape[1] != len(names):
        _locate_bad_cloud_line(path, len(names))

    ncol = data.shape[1]
    return PointCloud.from_xyz(
        data[:, 0], data[:, 1], data[:, 2],
        return_number=data[:, 3].astype(np.int32) if ncol > 3 else None,
        is_ground=data[:, 4] != 0 if ncol > 4 else None,
    )


def _locate_bad_cloud_line(path, ncols_expected):
    """Slow rescan after the fast parse failed; pinpoints the first bad line."""
    with open(path, "r") as f:
        next(f)
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != ncols_expected:
                raise PointCloudFormatError(
                    f"{path}: line {lineno}: expected {ncols_expected} fields, "
                    f"got {len(tokens)}")
            for t in tokens:
                if not _is_number(t):
                    raise PointCloudFormatError(
                        f"{path}: line {lineno}: non-numeric value {t!r}")
    raise PointCloudFormatError(f"{path}: unparseable point data")


def write_point_cloud(cloud: PointCloud, path) -> None:
    with open(path, "w") as f:
        f.write("x,y,z,return_number,is_ground\n")
        for i in range(len(cloud)):
            f.write(f"{_fmt(cloud.x[i])},{_fmt(cloud.y[i])},{_fmt(cloud.z[i])},"
                    f"{cloud.return_number[i]},{int(cloud.is_ground[i])}\n")


def read_ground_truth(path) -> list[GroundTruthPoint]:
    """Read ground-truth tree points: header ``x,y,species[,role]``."""

    def bad(lineno, msg):
        return DataError(f"{path}: line {lineno}: {msg}")

    points = []
    with open(path, "r") as f:
        header_line = f.readline()
        if not header_line.strip():
            raise bad(1, "empty file")
        names = [t.strip().lower() for t in header_line.split(",")]
        if names[:3] != ["x", "y", "species"]:
            raise bad(1, f"header must be x,y,species[,role], "
                         f"got {header_line.strip()!r}")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) < 3:
                raise bad(lineno, "expected at least 3 fields")
            if not (_is_number(tokens[0]) and _is_number(tokens[1])):
                raise bad(lineno, "non-numeric coordinate")
            role = tokens[3] if len(tokens) > 3 and tokens[3] else "unassigned"
            points.append(GroundTruthPoint(float(tokens[0]), float(tokens[1]),
                                           tokens[2], role))
    return points


def write_ground_truth(points, path) -> None:
    with open(path, "w") as f:
        f.write("x,y,species,role\n")
        for p in points:
            f.write(f"{_fmt(p.x)},{_fmt(p.y)},{p.species_code},{p.role}\n")


# ---------------------------------------------------------------------------
# ENVI-style band-sequential cube I/O
# ---------------------------------------------------------------------------

_ENVI_DTYPES = {4: np.dtype(np.float32), 12: np.dtype(np.uint16)}


def read_envi_cube(header_path, data_path) -> HyperCube:
    """Read a band-sequential raw cube with a text header.

    Required header keys: samples, lines, bands, data type (4 or 12),
    interleave (bsq only), byte order (0 little / 1 big). Optional:
    wavelength list and "map info" for the georeference (pixel (1,1)
    upper-left corner easting/northing plus pixel size). Without map
    info the cube is anchored at (0, 0) with cell size 1.
    """
    fields = _parse_envi_header(header_path)

    def need(key):
        if key not in fields:
            raise CubeFormatError(f"{header_path}: missing header key {key!r}")
        return fields[key]

    try:
        ncols = int(need("samples"))
        nrows = int(need("lines"))
        nbands = int(need("bands"))
        dtype_code = int(need("data type"))
        byte_order = int(need("byte order"))
    except ValueError as exc:
        raise CubeFormatError(f"{header_path}: non-integer header value ({exc})") from None

    interleave = need("interleave").strip().lower()
    if interleave != "bsq":
        raise CubeFormatError(f"{header_path}: unsupported interleave "
                              f"{interleave!r} (only bsq)")
    if dtype_code not in _ENVI_DTYPES:
        raise CubeFormatError(f"{header_path}: unsupported data type {dtype_code} "
                              f"(only 4 and 12)")
    if byte_order not in (0, 1):
        raise CubeFormatError(f"{header_path}: byte order must be 0 or 1")

    dtype = _ENVI_DTYPES[dtype_code].newbyteorder("<" if byte_order == 0 else ">")
    expected = ncols * nrows * nbands * dtype.itemsize
    raw = np.fromfile(data_path, dtype=dtype)
    if raw.size * dtype.itemsize != expected:
        raise CubeFormatError(
            f"{data_path}: data length {raw.size * dtype.itemsize} bytes, header "
            f"implies {expected}")
    samples = raw.astype(np.float64).reshape(nbands, nrows, ncols)

    wavelengths = None
    if "wavelength" in fields:
        try:
            wavelengths = np.array([float(t) for t in fields["wavelength"].split(",")])
        except ValueError:
            raise CubeFormatError(f"{header_path}: non-numeric wavelength entry") from None

    xll, yll, cellsize = 0.0, 0.0, 1.0
    if "map info" in fields:
        parts = [t.strip() for t in fields["map info"].split(",")]
        if len(parts) < 7:
            raise CubeFormatError(f"{header_path}: map info needs >= 7 fields")
        try:
            ulx, uly = float(parts[3]), float(parts[4])
            xres, yres = float(parts[5]), float(parts[6])
        except ValueError:
            raise CubeFormatError(f"{header_path}: non-numeric map info entry") from None
        if xres != yres:
            raise CubeFormatError(f"{header_path}: non-square pixels unsupported")
        cellsize = xres
        xll = ulx
        yll = uly - nrows * cellsize

    return HyperCube(samples, xll, yll, cellsize, wavelengths)


def _parse_envi_header(path) -> dict[str, str]:
    with open(path, "r") as f:
        text = f.read()
    fields: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    if lines and lines[0].strip().upper() == "ENVI":
        i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if "=" not in line:
            raise CubeFormatError(f"{path}: line {i}: expected 'key = value', "
                                  f"got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if value.startswith("{"):
            while "}" not in value and i < len(lines):
                value += " " + lines[i].strip()
                i += 1
            value = value.strip()
            if not value.endswith("}"):
                raise CubeFormatError(f"{path}: unterminated {{...}} for key {key!r}")
            value = value[1:-1].strip()
        fields[key] = value
    return fields


def write_envi_cube(cube: HyperCube, header_path, data_path) -> None:
    """Write a float32 little-endian BSQ cube with its text header."""
    arr = cube.samples.astype("<f4")
    arr.tofile(data_path)
    uly = cube.yll + cube.nrows * cube.cellsize
    with open(header_path, "w") as f:
        f.write("ENVI\n")
        f.write(f"samples = {cube.ncols}\n")
        f.write(f"lines = {cube.nrows}\n")
        f.write(f"bands = {cube.nbands}\n")
        f.write("data type = 4\n")
        f.write("interleave = bsq\n")
        f.write("byte order = 0\n")
        f.write(f"map info = {{projected, 1, 1, {_fmt(cube.xll)}, {_fmt(uly)}, "
                f"{_fmt(cube.cellsize)}, {_fmt(cube.cellsize)}}}\n")
        if cube.wavelengths is not None:
            f.write("wavelength = {" + ", ".join(_fmt(w) for w in cube.wavelengths)
                    + "}\n")


# ---------------------------------------------------------------------------
# Sampling and terrain derivatives
# ---------------------------------------------------------------------------


def bilinear_sample(grid: Grid, x, y):
    """Bilinear interpolation of the four surrounding cell centers.

    Exact at cell centers. Queries outside the convex hull of cell
    centers raise OutOfBoundsError; if any of the four neighbors is
    nodata the grid's nodata value is returned. Accepts scalars or
    equal-length arrays (vectorized).
    """
    if grid.nrows < 2 or grid.ncols < 2:
        raise OutOfBoundsError("bilinear interpolation needs a grid of >= 2x2 cells")
    scalar = np.isscalar(x) and np.isscalar(y)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))

    u = (x - grid.xll) / grid.cellsize - 0.5          # fractional column
    v = (y - grid.yll) / grid.cellsize - 0.5          # fractional row from south
    bad = (u < 0) | (u > grid.ncols - 1) | (v < 0) | (v > grid.nrows - 1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise OutOfBoundsError(
            f"query point ({x[idx]}, {y[idx]}) outside the cell-center hull")

    c0 = np.clip(np.floor(u).astype(np.int64), 0, grid.ncols - 2)
    r0s = np.clip(np.floor(v).astype(np.int64), 0, grid.nrows - 2)
    fx = u - c0
    fy = v - r0s
    r1 = grid.nrows - 1 - r0s       # southern row of the 2x2 block
    r0 = r1 - 1

    vals = grid.values
    q00 = vals[r1, c0]       # south-west
    q10 = vals[r1, c0 + 1]   # south-east
    q01 = vals[r0, c0]       # north-west
    q11 = vals[r0, c0 + 1]   # north-east
    out = (q00 * (1 - fx) * (1 - fy) + q10 * fx * (1 - fy)
           + q01 * (1 - fx) * fy + q11 * fx * fy)

    nod = grid.nodata
    invalid = ((q00 == nod) | (q10 == nod) | (q01 == nod) | (q11 == nod)
               | np.isnan(q00) | np.isnan(q10) | np.isnan(q01) | np.isnan(q11))
    out = np.where(invalid, nod, out)
    return float(out[0]) if scalar else out


def terrain_derivatives(dtm: Grid, class_width: float = 100.0) -> dict[str, Grid]:
    """Slope, aspect and elevation class from a DTM.

    Slope and aspect use Horn's 3x3 weighted finite differences on the
    8 neighbors; both are nodata on border cells and wherever any cell
    of the 3x3 window is nodata. Aspect is degrees from north,
    clockwise, pointing downhill; it is undefined (nodata) on flat
    cells. Elevation class is floor(z / class_width) wherever the DTM
    is valid.
    """
    if dtm.nrows < 3 or dtm.ncols < 3:
        raise ValueError("terrain derivatives need at least a 3x3 DTM")
    z = dtm.values
    valid = dtm.valid_mask()
    nod = dtm.nodata

    # Window cells, rows north to south:  a b c / d e f / g h i
    a = z[:-2, :-2]; b = z[:-2, 1:-1]; c = z[:-2, 2:]
    d = z[1:-1, :-2];                  f = z[1:-1, 2:]
    g = z[2:, :-2];  h = z[2:, 1:-1];  i = z[2:, 2:]

    win_valid = np.ones(a.shape, dtype=bool)
    for rr in range(3):
        for cc in range(3):
            win_valid &= valid[rr:rr + a.shape[0], cc:cc + a.shape[1]]

    eight = 8.0 * dtm.cellsize
    zx = ((c + 2 * f + i) - (a + 2 * d + g)) / eight          # d z / d east
    zy = ((a + 2 * b + c) - (g + 2 * h + i)) / eight          # d z / d north

    slope_deg = np.degrees(np.arctan(np.hypot(zx, zy)))
    flat = (zx == 0) & (zy == 0)
    aspect_deg = np.degrees(np.arctan2(-zx, -zy)) % 360.0     # downhill compass

    slope = np.full(z.shape, nod)
    aspect = np.full(z.shape, nod)
    slope[1:-1, 1:-1] = np.where(win_valid, slope_deg, nod)
    aspect[1:-1, 1:-1] = np.where(win_valid & ~flat, aspect_deg, nod)

    elev = np.where(valid, np.floor(z / class_width), nod)

    return {
        "slope": dtm.with_values(slope),
        "aspect": dtm.with_values(aspect),
        "elevation_class": dtm.with_values(elev),
    }
