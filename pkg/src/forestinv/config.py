"""Plain-text configuration (INI sections, one per pipeline module)."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .allometry import (
    ANGIOSPERM,
    GYMNOSPERM,
    DbhModel,
    SpeciesEntry,
    SpeciesRegistry,
    VolumeParams,
)
from .chm import PitfreeParams
from .crowns import ItcParams
from .errors import ConfigError


@dataclass
class SpectralConfig:
    drop_head: int = 7
    drop_tail: int = 8
    exclude_bands: tuple[int, ...] = ()
    k: int = 35
    criterion_aggregate: str = "mean"
    max_training_pixels_per_species: int = 2000


@dataclass
class ClassifyConfig:
    classifier: str = "svm"          # svm | centroid
    c: float = 10.0
    gamma: float | None = None       # None -> 1 / n_bands


@dataclass
class SceneConfig:
    n_trees: int = 200
    species: tuple[str, ...] = ("PIAB", "ABAL", "LADE", "FASY", "QUPU")
    nbands: int = 16
    pitch: float = 13.0
    margin: float = 9.0
    height_min: float = 14.0
    height_max: float = 24.0
    radius_min: float = 2.5
    radius_max: float = 4.5
    n_plots: int = 10
    plot_radius: float = 15.0
    noise_sigma: float = 0.02
    signature_amplitude: float = 0.6
    junk_head: int = 7
    junk_tail: int = 8
    shape: str = "tapered_cone"
    terrain: str = "flat"
    point_density: float = 10.0


@dataclass
class PipelineConfig:
    paths: dict[str, str]
    pitfree: PitfreeParams
    itc: ItcParams
    spectral: SpectralConfig
    classify: ClassifyConfig
    dbh_model: DbhModel
    registry: SpeciesRegistry
    seed: int
    train_fraction: float
    output_dir: str
    threads: int
    scene: SceneConfig
    raw_text: str = ""

    def require_paths(self, *names):
        missing = [n for n in names if not self.paths.get(n)]
        if missing:
            raise ConfigError("missing input path(s) in [paths]: "
                              + ", ".join(missing))
        absent = [self.paths[n] for n in names
                  if not os.path.exists(self.paths[n])]
        if absent:
            raise ConfigError("input file(s) not found: " + ", ".join(absent))


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _get(sec, key, cast, default):
    raw = sec.get(key)
    if raw is None or raw == "":
        return default
    try:
        if cast is bool:
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _get_list(sec, key, cast, default):
    raw = sec.get(key)
    if raw is None:
        return default
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(cast(t.strip()) for t in raw.split(",") if t.strip())
    except (TypeError, ValueError):
        raise ConfigError(f"bad list value for {key!r}: {raw!r}") from None


def load_config(path, seed_override=None, out_override=None,
                threads_override=None) -> PipelineConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r") as f:
            text = f.read()
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    base_dir = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    paths_sec = _section(cp, "paths")
    paths = {key: resolve(value) for key, value in paths_sec.items() if value}

    chm_sec = _section(cp, "chm")
    try:
        pitfree = PitfreeParams(
            resolution=_get(chm_sec, "resolution", float, 0.5),
            height_thresholds=_get_list(chm_sec, "height_thresholds", float,
                                        (0.0, 2.0, 5.0, 10.0, 15.0)),
            max_edge=_get(chm_sec, "max_edge", float, 1.5),
            subcircle_radius=_get(chm_sec, "subcircle_radius", float, 0.0),
            first_returns_only=_get(chm_sec, "first_returns_only", bool, True),
        )
    except ValueError as exc:
        raise ConfigError(f"[chm]: {exc}") from None

    itc_sec = _section(cp, "crowns")
    try:
        itc = ItcParams(
            min_search_win=_get(itc_sec, "min_search_win", int, 3),
            max_search_win=_get(itc_sec, "max_search_win", int, 7),
            thresh_seed=_get(itc_sec, "thresh_seed", float, 0.55),
            thresh_crown=_get(itc_sec, "thresh_crown", float, 0.6),
            min_dist=_get(itc_sec, "min_dist", float, 5.0),
            max_dist=_get(itc_sec, "max_dist", float, 40.0),
            height_threshold=_get(itc_sec, "height_threshold", float, 2.0),
            win_low_height=_get(itc_sec, "win_low_height", float, 2.0),
            win_high_height=_get(itc_sec, "win_high_height", float, 30.0),
            smooth_chm=_get(itc_sec, "smooth_chm", bool, False),
        )
    except ValueError as exc:
        raise ConfigError(f"[crowns]: {exc}") from None

    sp_sec = _section(cp, "spectral")
    spectral = SpectralConfig(
        drop_head=_get(sp_sec, "drop_head", int, 7),
        drop_tail=_get(sp_sec, "drop_tail", int, 8),
        exclude_bands=_get_list(sp_sec, "exclude_bands", int, ()),
        k=_get(sp_sec, "k", int, 35),
        criterion_aggregate=_get(sp_sec, "criterion_aggregate", str, "mean"),
        max_training_pixels_per_species=_get(
            sp_sec, "max_training_pixels_per_species", int, 2000),
    )
    if spectral.criterion_aggregate not in ("mean", "min"):
        raise ConfigError("[spectral] criterion_aggregate must be mean or min")
    if spectral.k < 1:
        raise ConfigError("[spectral] k must be >= 1")

    cl_sec = _section(cp, "classify")
    classify = ClassifyConfig(
        classifier=_get(cl_sec, "classifier", str, "svm"),
        c=_get(cl_sec, "c", float, 10.0),
        gamma=_get(cl_sec, "gamma", float, None),
    )
    if classify.classifier not in ("svm", "centroid"):
        raise ConfigError("[classify] classifier must be svm or centroid")
    if classify.c <= 0:
        raise ConfigError("[classify] c must be > 0")
    if classify.gamma is not None and classify.gamma <= 0:
        raise ConfigError("[classify] gamma must be > 0")

    al_sec = _section(cp, "allometry")
    try:
        dbh_model = DbhModel(
            coeff_a=_get(al_sec, "dbh_coeff_a", float, 0.557),
            coeff_b=_get(al_sec, "dbh_coeff_b", float, 0.809),
            sigma=_get(al_sec, "dbh_sigma", float, 0.056),
        )
    except ValueError as exc:
        raise ConfigError(f"[allometry]: {exc}") from None

    registry = SpeciesRegistry()
    if cp.has_section("registry"):
        registry = registry.with_overrides(
            [_parse_registry_entry(code, value)
             for code, value in cp["registry"].items()])

    run_sec = _section(cp, "run")
    seed = _get(run_sec, "seed", int, 42)
    train_fraction = _get(run_sec, "train_fraction", float, 0.65)
    output_dir = run_sec.get("output_dir", "out") or "out"
    threads = _get(run_sec, "threads", int, 1)
    if not (0 < train_fraction < 1):
        raise ConfigError("[run] train_fraction must lie in (0, 1)")
    if threads < 1:
        raise ConfigError("[run] threads must be >= 1")

    sc_sec = _section(cp, "scene")
    scene = SceneConfig(
        n_trees=_get(sc_sec, "n_trees", int, 200),
        species=_get_list(sc_sec, "species", str,
                          ("PIAB", "ABAL", "LADE", "FASY", "QUPU")),
        nbands=_get(sc_sec, "nbands", int, 16),
        pitch=_get(sc_sec, "pitch", float, 13.0),
        margin=_get(sc_sec, "margin", float, 9.0),
        height_min=_get(sc_sec, "height_min", float, 14.0),
        height_max=_get(sc_sec, "height_max", float, 24.0),
        radius_min=_get(sc_sec, "radius_min", float, 2.5),
        radius_max=_get(sc_sec, "radius_max", float, 4.5),
        n_plots=_get(sc_sec, "n_plots", int, 10),
        plot_radius=_get(sc_sec, "plot_radius", float, 15.0),
        noise_sigma=_get(sc_sec, "noise_sigma", float, 0.02),
        signature_amplitude=_get(sc_sec, "signature_amplitude", float, 0.6),
        junk_head=_get(sc_sec, "junk_head", int, 7),
        junk_tail=_get(sc_sec, "junk_tail", int, 8),
        shape=_get(sc_sec, "shape", str, "tapered_cone"),
        terrain=_get(sc_sec, "terrain", str, "flat"),
        point_density=_get(sc_sec, "point_density", float, 10.0),
    )

    if seed_override is not None:
        seed = seed_override
    if out_override is not None:
        output_dir = out_override
    if threads_override is not None:
        threads = threads_override
    if not os.path.isabs(output_dir):
        output_dir = os.path.join(base_dir, output_dir)

    return PipelineConfig(paths=paths, pitfree=pitfree, itc=itc,
                          spectral=spectral, classify=classify,
                          dbh_model=dbh_model, registry=registry, seed=seed,
                          train_fraction=train_fraction,
                          output_dir=output_dir, threads=threads,
                          scene=scene, raw_text=text)


def _parse_registry_entry(code: str, value: str) -> SpeciesEntry:
    """``CODE = group[,a,b,c,d0][,fallback=CODE]``"""
    tokens = [t.strip() for t in value.split(",")]
    group = tokens[0].lower()
    if group not in (GYMNOSPERM, ANGIOSPERM):
        raise ConfigError(f"[registry] {code}: group must be gymnosperm or "
                          f"angiosperm, got {tokens[0]!r}")
    params = None
    fallback = None
    numeric = []
    for tok in tokens[1:]:
        if tok.startswith("fallback="):
            fallback = tok.split("=", 1)[1].strip().upper()
        else:
            try:
                numeric.append(float(tok))
            except ValueError:
                raise ConfigError(f"[registry] {code}: bad token {tok!r}") \
                    from None
    if numeric:
        if len(numeric) != 4:
            raise ConfigError(f"[registry] {code}: need 4 volume parameters "
                              f"(a, b, c, d0)")
        params = VolumeParams(*numeric)
    try:
        return SpeciesEntry(code.upper(), code.upper(), group, params, fallback)
    except ValueError as exc:
        raise ConfigError(f"[registry] {code}: {exc}") from None
