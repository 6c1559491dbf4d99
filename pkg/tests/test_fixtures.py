import numpy as np
import pytest

from pathoquant.engine import Engine, ReferenceBackend
from pathoquant.errors import BadParameter
from pathoquant.fixtures import (DiskSpec, FixturePackingError, FixtureSpec,
                                 default_side, disk_area, ground_truth,
                                 random_fixture, render_fixture, spec_from_json)
from pathoquant.pipeline import run_pipeline
from pathoquant.postprocess import PostprocessParams


class TestSpecValidation:
    def test_radius_bounds(self):
        with pytest.raises(BadParameter):
            FixtureSpec(width=100, height=100,
                        cells=(DiskSpec(center=(50, 50), radius=3, kind="dab"),))
        with pytest.raises(BadParameter):
            FixtureSpec(width=100, height=100,
                        cells=(DiskSpec(center=(50, 50), radius=21, kind="dab"),))

    def test_out_of_bounds(self):
        with pytest.raises(BadParameter):
            FixtureSpec(width=100, height=100,
                        cells=(DiskSpec(center=(3, 50), radius=5, kind="dab"),))

    def test_separation(self):
        with pytest.raises(BadParameter):
            FixtureSpec(width=100, height=100,
                        cells=(DiskSpec(center=(30, 30), radius=5, kind="dab"),
                               DiskSpec(center=(42, 30), radius=5, kind="dab")))

    def test_valid_spec(self):
        spec = FixtureSpec(width=100, height=100,
                           cells=(DiskSpec(center=(30, 30), radius=5, kind="dab"),
                                  DiskSpec(center=(60, 60), radius=5, kind="hematoxylin")))
        assert spec.num_total == 2 and spec.num_pos == 1


class TestRandomFixture:
    def test_counts(self):
        spec = random_fixture(10, 4, seed=1)
        assert spec.num_total == 10 and spec.num_pos == 4

    def test_deterministic(self):
        a = random_fixture(8, 3, seed=42)
        b = random_fixture(8, 3, seed=42)
        assert a == b
        from pathoquant.imaging import encode_png
        assert encode_png(render_fixture(a)) == encode_png(render_fixture(b))

    def test_different_seeds_differ(self):
        assert random_fixture(8, 3, seed=1) != random_fixture(8, 3, seed=2)

    def test_infeasible_packing(self):
        with pytest.raises(FixturePackingError):
            random_fixture(500, 0, seed=1, width=256, height=256)

    def test_bad_counts(self):
        with pytest.raises(BadParameter):
            random_fixture(3, 5, seed=0)

    def test_default_side_grows(self):
        assert default_side(1) == 256
        assert default_side(50) == 512
        assert default_side(200) == 960


class TestRender:
    def test_background_white(self):
        spec = FixtureSpec(width=60, height=40, cells=())
        img = render_fixture(spec)
        assert img.size == (60, 40)
        assert (img.pixels == 255).all()

    def test_disk_colors(self):
        spec = FixtureSpec(width=64, height=64,
                           cells=(DiskSpec(center=(32, 32), radius=6, kind="dab"),))
        img = render_fixture(spec)
        assert tuple(img.pixels[32, 32]) == (137, 69, 43)

    def test_disk_area_matches_truth(self):
        spec = FixtureSpec(width=64, height=64,
                           cells=(DiskSpec(center=(32, 32), radius=6, kind="dab"),))
        img = render_fixture(spec)
        stained = (img.pixels != 255).any(axis=2).sum()
        assert stained == disk_area(6) == ground_truth(spec)["cells"][0]["area"]


class TestGroundTruth:
    def test_truth_fields(self):
        spec = random_fixture(5, 2, seed=7)
        truth = ground_truth(spec)
        assert truth["num_total"] == 5
        assert truth["num_pos"] == 2
        assert truth["percent_pos"] == 40.0
        assert len(truth["cells"]) == 5

    def test_json_roundtrip(self):
        spec = random_fixture(4, 1, seed=3)
        doc = {"width": spec.width, "height": spec.height, "seed": spec.seed,
               "cells": [{"center": list(c.center), "radius": c.radius, "kind": c.kind}
                         for c in spec.cells]}
        import json
        assert spec_from_json(json.dumps(doc)) == spec


class TestEndToEndOracle:
    """Fixture geometry guarantees the default pipeline recovers the truth."""

    @pytest.mark.parametrize("k,p,seed", [(1, 0, 11), (1, 1, 12), (6, 2, 13), (10, 10, 14)])
    def test_counts_recovered_exactly(self, k, p, seed):
        spec = random_fixture(k, p, seed=seed)
        img = render_fixture(spec)
        result = run_pipeline(img, "20x", Engine(backend=ReferenceBackend()),
                              PostprocessParams())
        assert result.scoring.num_total == k
        assert result.scoring.num_pos == p

    def test_cells_match_truth_geometry(self):
        spec = random_fixture(6, 3, seed=21)
        truth = ground_truth(spec)
        img = render_fixture(spec)
        result = run_pipeline(img, "20x", Engine(backend=ReferenceBackend()),
                              PostprocessParams())
        # match each detected cell to the nearest true disk center
        detected = {tuple(np.round(c.centroid).astype(int)): c for c in result.cells}
        assert len(detected) == len(truth["cells"])
        for true_cell in truth["cells"]:
            cx, cy = true_cell["center"]
            match = min(result.cells,
                        key=lambda c: (c.centroid[0] - cx) ** 2 + (c.centroid[1] - cy) ** 2)
            dist = np.hypot(match.centroid[0] - cx, match.centroid[1] - cy)
            assert dist < 2.0
            expected_cls = "positive" if true_cell["kind"] == "dab" else "negative"
            assert match.cls == expected_cls
            assert abs(match.area - true_cell["area"]) <= 0.2 * true_cell["area"]
