import math

import numpy as np
import pytest

from forestinv.errors import DataError
from forestinv.evaluate import PlotDefinition
from forestinv.geodata import read_ascii_grid, read_envi_cube, read_point_cloud
from forestinv.synth import (
    SceneSpec,
    TreeSpec,
    contour_radius,
    generate_scene,
    profile_height,
    random_scene,
    write_scene,
)


def tiny_spec(**overrides):
    base = dict(
        seed=1, xll=0.0, yll=0.0, width=30.0, height=30.0,
        trees=(TreeSpec(15.25, 15.25, 18.0, 3.5, "PIAB"),),
        signatures={"PIAB": np.array([1.0, 0.2, 0.2])},
        background=np.array([0.2, 0.2, 1.0]),
        junk_head=0, junk_tail=0, noise_sigma=0.0,
        point_density=10.0,
    )
    base.update(overrides)
    return SceneSpec(**base)


class TestProfiles:
    def test_cone_contour(self):
        spec = tiny_spec(shape="cone")
        tree = spec.trees[0]
        r = contour_radius(spec, tree, 0.55)
        assert r == pytest.approx(0.45 * tree.crown_radius)
        assert profile_height(spec, tree, r) == pytest.approx(
            0.55 * tree.height)

    def test_tapered_cone_contour_at_nominal_radius(self):
        spec = tiny_spec(shape="tapered_cone", edge_fraction=0.55)
        tree = spec.trees[0]
        assert contour_radius(spec, tree, 0.55) == pytest.approx(
            tree.crown_radius)
        assert profile_height(spec, tree, tree.crown_radius) == pytest.approx(
            0.55 * tree.height)
        beyond = tree.crown_radius + spec.skirt_width
        assert profile_height(spec, tree, beyond) == 0.0

    def test_paraboloid_contour(self):
        spec = tiny_spec(shape="paraboloid")
        tree = spec.trees[0]
        r = contour_radius(spec, tree, 0.55)
        assert profile_height(spec, tree, r) == pytest.approx(
            0.55 * tree.height)

    def test_apex_height_exact(self):
        for shape in ("cone", "tapered_cone", "paraboloid"):
            spec = tiny_spec(shape=shape)
            assert profile_height(spec, spec.trees[0], 0.0) == pytest.approx(
                spec.trees[0].height)


class TestGenerate:
    def test_noiseless_pixels_equal_signature(self):
        spec = tiny_spec()
        data = generate_scene(spec)
        tree = spec.trees[0]
        cell = (int((spec.height - tree.y) / 0.5), int(tree.x / 0.5))
        np.testing.assert_allclose(data.cube.samples[:, cell[0], cell[1]],
                                   spec.signatures["PIAB"], atol=1e-12)
        corner = data.cube.samples[:, 0, 0]
        np.testing.assert_allclose(corner, spec.background, atol=1e-12)

    def test_realized_density_within_five_percent(self):
        spec = tiny_spec()
        data = generate_scene(spec)
        area = spec.width * spec.height
        realized = (len(data.cloud) - len(spec.trees)) / area
        assert abs(realized - spec.point_density) / spec.point_density < 0.05

    def test_same_seed_identical_files(self, tmp_path):
        spec = tiny_spec()
        a = tmp_path / "a"
        b = tmp_path / "b"
        write_scene(generate_scene(spec), a)
        write_scene(generate_scene(spec), b)
        for name in ("dtm.asc", "points.csv", "cube.dat", "ground_truth.csv",
                     "plots.csv", "truth_trees.csv", "truth_plots.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_tree_outside_bounds_rejected(self):
        spec = tiny_spec(trees=(TreeSpec(100.0, 5.0, 18.0, 3.0, "PIAB"),))
        with pytest.raises(DataError, match="outside"):
            generate_scene(spec)

    def test_apex_return_present(self):
        spec = tiny_spec()
        data = generate_scene(spec)
        tree = spec.trees[0]
        at_apex = (data.cloud.x == tree.x) & (data.cloud.y == tree.y)
        assert at_apex.sum() >= 1
        top = data.cloud.z[at_apex].max()
        assert top == pytest.approx(500.0 + tree.height)

    def test_ground_flag(self):
        spec = tiny_spec()
        data = generate_scene(spec)
        assert data.cloud.is_ground.any()
        assert (~data.cloud.is_ground).any()

    def test_truth_tables_use_inventory_formulas(self):
        from forestinv.allometry import (DbhModel, SpeciesRegistry, agb_jucker,
                                         estimate_dbh, volume_double_entry)

        spec = tiny_spec()
        data = generate_scene(spec)
        t = data.truth_trees[0]
        cd = 2.0 * contour_radius(spec, spec.trees[0])
        assert t.crown_diameter == pytest.approx(cd)
        assert t.dbh == pytest.approx(estimate_dbh(18.0, cd, DbhModel()))
        assert t.agb == pytest.approx(agb_jucker(18.0, cd, "gymnosperm"))
        params, _ = SpeciesRegistry().volume_params("PIAB")
        assert t.volume == pytest.approx(
            volume_double_entry(t.dbh, 18.0, params)[0])

    def test_plot_truth_radius_and_dbh_filter(self):
        spec = tiny_spec(plots=(PlotDefinition(1, 15.25, 15.25, radius=15.0),
                                PlotDefinition(2, 2.0, 2.0, radius=5.0)))
        data = generate_scene(spec)
        by_id = {p.plot_id: p for p in data.truth_plots}
        assert by_id[1].n_trees == 1
        assert by_id[2].n_trees == 0
        assert by_id[1].agb_mg == pytest.approx(data.truth_trees[0].agb / 1000)


class TestRandomScene:
    def test_tree_spacing_and_count(self):
        spec = random_scene(seed=3, n_trees=40, species=["PIAB", "FASY"])
        assert len(spec.trees) == 40
        xs = np.array([t.x for t in spec.trees])
        ys = np.array([t.y for t in spec.trees])
        d2 = (xs[:, None] - xs) ** 2 + (ys[:, None] - ys) ** 2
        np.fill_diagonal(d2, np.inf)
        assert math.sqrt(d2.min()) > 10.0

    def test_balanced_species(self):
        spec = random_scene(seed=4, n_trees=30,
                            species=["A", "B", "C"])
        counts = {}
        for t in spec.trees:
            counts[t.species] = counts.get(t.species, 0) + 1
        assert set(counts.values()) == {10}

    def test_apexes_on_cell_centers(self):
        spec = random_scene(seed=5, n_trees=10, species=["A"])
        for t in spec.trees:
            fx = (t.x - spec.xll) / spec.chm_resolution - 0.5
            assert fx == pytest.approx(round(fx), abs=1e-9)

    def test_scene_files_round_trip(self, tmp_path):
        spec = random_scene(seed=6, n_trees=12, species=["PIAB", "FASY"],
                            nbands=8)
        data = generate_scene(spec)
        paths = write_scene(data, tmp_path)
        dtm = read_ascii_grid(paths["dtm"])
        cloud = read_point_cloud(paths["point_cloud"])
        cube = read_envi_cube(paths["cube_header"], paths["cube_data"])
        assert dtm.cellsize == spec.dtm_resolution
        assert len(cloud) == len(data.cloud)
        assert cube.nbands == data.cube.nbands
        assert cube.xll == pytest.approx(spec.xll)
        np.testing.assert_allclose(cube.samples, data.cube.samples,
                                   rtol=1e-5, atol=1e-5)
