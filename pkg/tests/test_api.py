import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from pathoquant.api import create_api_app
from pathoquant.config import ServiceConfig
from pathoquant.engine import Engine, NullBackend, ReferenceBackend
from pathoquant.fixtures import random_fixture, render_fixture
from pathoquant.imaging import decode_image, encode_png
from pathoquant.pipeline import unpack_seg_raw
from pathoquant.store import LocalStore


@pytest.fixture(scope="module")
def fixture_png():
    spec = random_fixture(6, 2, seed=5, width=220, height=180)
    return encode_png(render_fixture(spec)), spec


@pytest.fixture(scope="module")
def client():
    app = create_api_app(ServiceConfig(pool_size=2, queue_capacity=4))
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def b64_png(value):
    data = base64.b64decode(value)
    assert data[:4] == b"\x89PNG"
    return decode_image(data)


class TestInfer:
    def test_full_response(self, client, fixture_png):
        png, spec = fixture_png
        resp = client.post("/api/infer", files={"img": ("f.png", png, "image/png")})
        assert resp.status_code == 200
        body = resp.json()
        assert set(body["images"]) == {"hema", "dapi", "lap2", "marker",
                                       "seg", "overlay", "seg_raw"}
        for name, value in body["images"].items():
            img = b64_png(value)
            if name != "seg":  # seg stays at canonical scale
                assert img.size == (220, 180)
        scoring = body["scoring"]
        assert set(scoring) == {"num_total", "num_pos", "percent_pos"}
        assert 0 <= scoring["num_pos"] <= scoring["num_total"]
        assert scoring["num_total"] == spec.num_total
        assert scoring["num_pos"] == spec.num_pos

    def test_slim(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", params={"slim": "true"},
                           files={"img": ("f.png", png, "image/png")})
        assert resp.status_code == 200
        assert list(resp.json()["images"]) == ["seg"]

    def test_default_resolution_is_20x(self, client, fixture_png):
        png, _ = fixture_png
        a = client.post("/api/infer", files={"img": ("f.png", png, "image/png")}).json()
        b = client.post("/api/infer", params={"resolution": "20x"},
                        files={"img": ("f.png", png, "image/png")}).json()
        assert a["scoring"] == b["scoring"]
        assert a["images"]["seg_raw"] == b["images"]["seg_raw"]

    def test_40x_canonical_dims(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", params={"resolution": "40x"},
                           files={"img": ("f.png", png, "image/png")})
        body = resp.json()
        assert b64_png(body["images"]["seg_raw"]).size == (110, 90)
        assert b64_png(body["images"]["marker"]).size == (220, 180)
        assert b64_png(body["images"]["overlay"]).size == (220, 180)

    def test_bogus_resolution_rejected(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", params={"resolution": "30x"},
                           files={"img": ("f.png", png, "image/png")})
        assert resp.status_code == 400
        assert resp.json()["error"] == "bad_parameter"

    def test_bogus_bool_rejected(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", params={"slim": "maybe"},
                           files={"img": ("f.png", png, "image/png")})
        assert resp.status_code == 400

    def test_missing_img_part(self, client):
        resp = client.post("/api/infer")
        assert resp.status_code == 400
        assert resp.json()["error"] == "bad_parameter"

    def test_oversize_is_413(self, fixture_png):
        app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=1,
                                           max_dim=128, thumbnail_max_dim=64))
        with TestClient(app, raise_server_exceptions=False) as client:
            png, _ = fixture_png  # 220x180 > 128
            resp = client.post("/api/infer", files={"img": ("f.png", png, "image/png")})
            assert resp.status_code == 413
            assert resp.json()["error"] == "image_too_large"

    def test_unsupported_format(self, client):
        resp = client.post("/api/infer",
                           files={"img": ("f.gif", b"GIF89a...", "image/gif")})
        assert resp.status_code == 400
        assert resp.json()["error"] == "unsupported_format"

    def test_corrupt_image(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", files={"img": ("f.png", png[:60], "image/png")})
        assert resp.status_code == 400
        assert resp.json()["error"] == "corrupt_image"

    def test_pil_flag_restricts_to_fast_formats(self, client):
        buf = io.BytesIO()
        Image.fromarray(np.full((20, 20, 3), 255, dtype=np.uint8)).save(buf, format="TIFF")
        tiff = buf.getvalue()
        ok = client.post("/api/infer", files={"img": ("f.tif", tiff, "image/tiff")})
        assert ok.status_code == 200
        rejected = client.post("/api/infer", params={"pil": "true"},
                               files={"img": ("f.tif", tiff, "image/tiff")})
        assert rejected.status_code == 400
        assert rejected.json()["error"] == "unsupported_format"

    def test_postprocess_params_passthrough(self, client, fixture_png):
        png, spec = fixture_png
        resp = client.post("/api/infer", params={"size_gate_min": "1000000000"},
                           files={"img": ("f.png", png, "image/png")})
        assert resp.json()["scoring"] == {"num_total": 0, "num_pos": 0, "percent_pos": 0.0}

    def test_seg_raw_channels(self, client, fixture_png):
        png, _ = fixture_png
        resp = client.post("/api/infer", files={"img": ("f.png", png, "image/png")})
        seg_raw = b64_png(resp.json()["images"]["seg_raw"])
        assert (seg_raw.pixels[:, :, 1] == 0).all()  # G unused
        scores = unpack_seg_raw(seg_raw)
        assert scores.fg_prob.max() <= 1.0 and scores.fg_prob.min() >= 0.0


class TestAdjust:
    def test_default_adjust_reproduces_infer_scoring(self, client, fixture_png):
        png, _ = fixture_png
        infer = client.post("/api/infer", files={"img": ("f.png", png, "image/png")}).json()
        seg_raw = base64.b64decode(infer["images"]["seg_raw"])
        adj = client.post("/api/adjust", files={"seg_raw": ("s.png", seg_raw, "image/png")})
        assert adj.status_code == 200
        assert adj.json()["scoring"] == infer["scoring"]
        assert list(adj.json()["images"]) == ["seg"]

    def test_adjust_with_original_emits_overlay(self, client, fixture_png):
        png, _ = fixture_png
        infer = client.post("/api/infer", files={"img": ("f.png", png, "image/png")}).json()
        seg_raw = base64.b64decode(infer["images"]["seg_raw"])
        adj = client.post("/api/adjust", files={"seg_raw": ("s.png", seg_raw, "image/png"),
                                                "img": ("f.png", png, "image/png")})
        body = adj.json()
        assert set(body["images"]) == {"seg", "overlay"}
        assert b64_png(body["images"]["overlay"]).size == (220, 180)

    def test_extreme_gate_zeroes_scoring(self, client, fixture_png):
        png, _ = fixture_png
        infer = client.post("/api/infer", files={"img": ("f.png", png, "image/png")}).json()
        seg_raw = base64.b64decode(infer["images"]["seg_raw"])
        adj = client.post("/api/adjust", params={"size_gate_min": "1000000000"},
                          files={"seg_raw": ("s.png", seg_raw, "image/png")})
        assert adj.json()["scoring"] == {"num_total": 0, "num_pos": 0, "percent_pos": 0.0}

    def test_threshold_monotonicity_over_wire(self, client):
        # single-cell fixture: at t=0 every cell fuses into one blob, so the
        # t=0 >= t=1 count comparison is only meaningful with one cell
        from pathoquant.fixtures import DiskSpec, FixtureSpec

        spec = FixtureSpec(width=96, height=96,
                           cells=(DiskSpec(center=(48, 48), radius=10, kind="dab"),))
        png = encode_png(render_fixture(spec))
        infer = client.post("/api/infer", files={"img": ("f.png", png, "image/png")}).json()
        seg_raw = base64.b64decode(infer["images"]["seg_raw"])
        low = client.post("/api/adjust", params={"seg_threshold": "0"},
                          files={"seg_raw": ("s.png", seg_raw, "image/png")}).json()
        high = client.post("/api/adjust", params={"seg_threshold": "1"},
                           files={"seg_raw": ("s.png", seg_raw, "image/png")}).json()
        assert low["scoring"]["num_total"] == 1
        assert high["scoring"]["num_total"] <= low["scoring"]["num_total"]

    def test_missing_inputs(self, client):
        resp = client.post("/api/adjust")
        assert resp.status_code == 400

    def test_unknown_result_id_without_store(self, client):
        resp = client.post("/api/adjust", params={"result_id": "nope"})
        assert resp.status_code == 404

    def test_result_id_mode_with_store(self, tmp_path, fixture_png):
        from pathoquant.pipeline import run_pipeline
        from pathoquant.postprocess import PostprocessParams
        from pathoquant.records import ResultRecord, result_image_key

        png, _ = fixture_png
        store = LocalStore(str(tmp_path))
        engine = Engine(backend=ReferenceBackend())
        result = run_pipeline(decode_image(png), "20x", engine, PostprocessParams())
        images = result.render_set()
        image_keys = {}
        for name, data in images.items():
            key = result_image_key("r1", name)
            store.put(key, data, "image/png")
            image_keys[name] = key
        store.put(result_image_key("r1", "original"), png, "image/png")
        ResultRecord(result_id="r1", upload_id="u1", resolution="20x",
                     params=PostprocessParams(), image_keys=image_keys,
                     original_key=result_image_key("r1", "original"),
                     scoring=result.scoring, created_at=0.0).save(store)

        app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=1), store=store)
        with TestClient(app, raise_server_exceptions=False) as client:
            adj = client.post("/api/adjust", params={"result_id": "r1"})
            assert adj.status_code == 200
            assert adj.json()["scoring"] == result.scoring.as_dict()
            assert set(adj.json()["images"]) == {"seg", "overlay"}


class TestHealthMetrics:
    def test_health(self, client):
        resp = client.get("/api/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}

    def test_metrics_idle_and_counts(self, fixture_png):
        app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=1),
                             engine=Engine(backend=NullBackend()))
        with TestClient(app, raise_server_exceptions=False) as client:
            before = client.get("/api/metrics").json()
            assert before["queue_depth"] == 0
            assert before["jobs_running"] == 0
            png, _ = fixture_png
            client.post("/api/infer", files={"img": ("f.png", png, "image/png")})
            after = client.get("/api/metrics").json()
            assert after["jobs_completed"] == before["jobs_completed"] + 1


class TestStatelessness:
    def test_no_writes_with_store_configured(self, tmp_path, fixture_png):
        import os

        store = LocalStore(str(tmp_path))
        app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=2), store=store)

        def snapshot():
            entries = []
            for dirpath, dirnames, filenames in os.walk(tmp_path):
                for n in sorted(dirnames + filenames):
                    entries.append(os.path.relpath(os.path.join(dirpath, n), tmp_path))
            return sorted(entries)

        before = snapshot()
        png, _ = fixture_png
        with TestClient(app, raise_server_exceptions=False) as client:
            for _ in range(3):
                assert client.post("/api/infer",
                                   files={"img": ("f.png", png, "image/png")}).status_code == 200
        assert snapshot() == before
