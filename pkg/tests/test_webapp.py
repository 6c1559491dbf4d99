import base64
import io
import json
import zipfile

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from pathoquant.config import ServiceConfig
from pathoquant.fixtures import random_fixture, render_fixture
from pathoquant.imaging import decode_image, encode_png
from pathoquant.records import sweep_expired
from pathoquant.store import LocalStore
from pathoquant.webapp import ZIP_MEMBERS, create_web_app


def png_chunk_types(data):
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    chunks = []
    i = 8
    while i < len(data):
        length = int.from_bytes(data[i:i + 4], "big")
        chunks.append(data[i + 4:i + 8].decode("ascii"))
        i += 12 + length
    return chunks


@pytest.fixture()
def webapp(tmp_path):
    config = ServiceConfig(storage_root=str(tmp_path / "store"), pool_size=1,
                           queue_capacity=2, ttl_days=7.0)
    store = LocalStore(config.storage_root)
    app = create_web_app(config, store=store)
    with TestClient(app, raise_server_exceptions=False) as client:
        yield client, store


def accept_terms(client):
    resp = client.post("/terms/accept")
    assert resp.status_code == 200
    return client


def fixture_png(k=5, p=2, seed=9, w=200, h=160):
    return encode_png(render_fixture(random_fixture(k, p, seed=seed, width=w, height=h)))


def do_upload(client, png=None):
    png = png or fixture_png()
    resp = client.post("/upload", files={"img": ("u.png", png, "image/png")})
    assert resp.status_code == 200, resp.text
    return resp.json()


def do_process(client, upload_id, resolution=None):
    body = {"upload_id": upload_id}
    if resolution:
        body["resolution"] = resolution
    resp = client.post("/process", json=body)
    assert resp.status_code == 200, resp.text
    return resp.json()


class TestTermsGate:
    def test_fresh_session_403_json(self, webapp):
        client, _ = webapp
        resp = client.post("/upload", files={"img": ("u.png", fixture_png(), "image/png")})
        assert resp.status_code == 403
        assert resp.json()["error"] == "terms_not_accepted"

    def test_fresh_session_redirects_browsers(self, webapp):
        client, _ = webapp
        resp = client.post("/upload", headers={"Accept": "text/html"},
                           files={"img": ("u.png", fixture_png(), "image/png")},
                           follow_redirects=False)
        assert resp.status_code == 303
        assert resp.headers["location"] == "/terms"

    def test_accept_then_upload_passes(self, webapp):
        client, _ = webapp
        accept_terms(client)
        assert "upload_id" in do_upload(client)

    def test_session_cookie_name(self, webapp):
        client, _ = webapp
        resp = client.post("/terms/accept")
        set_cookie = resp.headers.get("set-cookie", "")
        assert set_cookie.startswith("pq_session=")
        assert "httponly" in set_cookie.lower()

    def test_acceptance_scoped_to_cookie(self, webapp):
        client, _ = webapp
        accept_terms(client)
        client.cookies.clear()
        resp = client.post("/upload", files={"img": ("u.png", fixture_png(), "image/png")})
        assert resp.status_code == 403


class TestUpload:
    def test_upload_response_shape(self, webapp):
        client, _ = webapp
        accept_terms(client)
        body = do_upload(client)
        assert body["width"] == 200 and body["height"] == 160
        thumb = decode_image(base64.b64decode(body["thumbnail"]))
        assert max(thumb.size) <= 512

    def test_stored_png_has_no_ancillary_chunks(self, webapp):
        client, store = webapp
        accept_terms(client)
        # source JPEG carries EXIF metadata; stored PNG must carry none of it
        rng = np.random.default_rng(0)
        im = Image.fromarray(rng.integers(0, 255, (60, 80, 3), dtype=np.uint8))
        exif = Image.Exif()
        exif[0x0131] = "microscope-software-9000"
        buf = io.BytesIO()
        im.save(buf, format="JPEG", exif=exif)
        body = do_upload(client, png=buf.getvalue())
        stored = store.get(f"uploads/{body['upload_id']}/original.png").data
        assert set(png_chunk_types(stored)) <= {"IHDR", "IDAT", "IEND"}

    def test_oversize_413(self, tmp_path):
        config = ServiceConfig(storage_root=str(tmp_path / "s"), pool_size=1,
                               queue_capacity=1, max_dim=128, thumbnail_max_dim=64)
        app = create_web_app(config, store=LocalStore(config.storage_root))
        with TestClient(app, raise_server_exceptions=False) as client:
            accept_terms(client)
            resp = client.post("/upload", files={"img": ("u.png", fixture_png(), "image/png")})
            assert resp.status_code == 413
            assert resp.json()["error"] == "image_too_large"

    def test_bad_format_400(self, webapp):
        client, _ = webapp
        accept_terms(client)
        resp = client.post("/upload", files={"img": ("u.gif", b"GIF89a...", "image/gif")})
        assert resp.status_code == 400
        assert resp.json()["error"] == "unsupported_format"


class TestSamples:
    def test_sample_list_nonempty(self, webapp):
        client, _ = webapp
        names = client.get("/samples").json()["samples"]
        assert "demo_ki67_low" in names

    def test_sample_flows_like_upload(self, webapp):
        client, _ = webapp
        accept_terms(client)
        body = client.get("/sample/demo_ki67_low").json()
        assert "upload_id" in body
        processed = do_process(client, body["upload_id"])
        # sample content is processed through the live pipeline, not precalculated
        assert processed["scoring"]["num_total"] == 24
        assert processed["scoring"]["num_pos"] == 4

    def test_unknown_sample_404(self, webapp):
        client, _ = webapp
        accept_terms(client)
        assert client.get("/sample/nope").status_code == 404

    def test_sample_gated(self, webapp):
        client, _ = webapp
        assert client.get("/sample/demo_ki67_low").status_code == 403


class TestProcess:
    def test_process_and_results_roundtrip(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        result = client.get(f"/results/{processed['result_id']}").json()
        assert result["scoring"]["num_total"] == processed["scoring"]["num_total"]
        assert set(result["thumbnails"]) == {"original", "hema", "dapi", "lap2",
                                             "marker", "seg", "overlay"}

    def test_resolution_defaults_to_20x(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        a = do_process(client, upload["upload_id"])
        b = do_process(client, upload["upload_id"], resolution="20x")
        assert a["scoring"] == b["scoring"]

    def test_two_processes_distinct_ids_same_scoring(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        a = do_process(client, upload["upload_id"])
        b = do_process(client, upload["upload_id"])
        assert a["result_id"] != b["result_id"]
        assert a["scoring"] == b["scoring"]

    def test_unknown_upload_404(self, webapp):
        client, _ = webapp
        accept_terms(client)
        resp = client.post("/process", json={"upload_id": "missing"})
        assert resp.status_code == 404


class TestResults:
    def test_percent_rounded_in_page_data(self, webapp):
        client, store = webapp
        accept_terms(client)
        upload = do_upload(client, png=fixture_png(k=3, p=1, seed=33))
        processed = do_process(client, upload["upload_id"])
        page = client.get(f"/results/{processed['result_id']}").json()
        stored = json.loads(store.get(
            f"results/{processed['result_id']}/meta.json").data)
        assert stored["scoring"]["percent_pos"] == pytest.approx(100.0 / 3.0)
        assert page["scoring"]["percent_pos"] == 33.3

    def test_unknown_result_404(self, webapp):
        client, _ = webapp
        assert client.get("/results/unknown").status_code == 404

    def test_deleted_result_404(self, webapp):
        client, store = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        store.delete_prefix(f"results/{processed['result_id']}/")
        assert client.get(f"/results/{processed['result_id']}").status_code == 404

    def test_full_res_image_route(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        resp = client.get(f"/results/{processed['result_id']}/image/seg_raw")
        assert resp.status_code == 200
        assert resp.content[:4] == b"\x89PNG"


class TestDownload:
    def test_zip_member_list_and_reproducibility(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        rid = processed["result_id"]
        first = client.get(f"/download/{rid}.zip").content
        second = client.get(f"/download/{rid}.zip").content
        assert first == second
        zf = zipfile.ZipFile(io.BytesIO(first))
        assert zf.namelist() == sorted(ZIP_MEMBERS)
        scoring = json.loads(zf.read("scoring.json"))
        assert scoring == processed["scoring"]
        csv_lines = zf.read("scoring.csv").decode().strip().splitlines()
        assert csv_lines[0] == "num_total,num_pos,percent_pos"

    def test_download_unknown_404(self, webapp):
        client, _ = webapp
        assert client.get("/download/zzz.zip").status_code == 404


class TestAdjustPersist:
    def test_default_adjust_keeps_scoring(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        rid = processed["result_id"]
        adjusted = client.post(f"/adjust/{rid}", json={}).json()
        assert adjusted["scoring"] == processed["scoring"]

    def test_extreme_gate_persisted(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        rid = processed["result_id"]
        adjusted = client.post(f"/adjust/{rid}",
                               json={"size_gate_min": "1000000000"}).json()
        assert adjusted["scoring"] == {"num_total": 0, "num_pos": 0, "percent_pos": 0.0}
        page = client.get(f"/results/{rid}").json()
        assert page["scoring"]["num_total"] == 0
        assert page["params"]["size_gate_min"] == 1e9

    def test_download_reflects_adjustment(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        rid = processed["result_id"]
        client.post(f"/adjust/{rid}", json={"size_gate_min": "1000000000"})
        zf = zipfile.ZipFile(io.BytesIO(client.get(f"/download/{rid}.zip").content))
        assert json.loads(zf.read("scoring.json"))["num_total"] == 0

    def test_bad_params_400(self, webapp):
        client, _ = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        resp = client.post(f"/adjust/{processed['result_id']}",
                           json={"seg_threshold": "1.5"})
        assert resp.status_code == 400

    def test_adjust_unknown_404(self, webapp):
        client, _ = webapp
        accept_terms(client)
        assert client.post("/adjust/none", json={}).status_code == 404


class TestFeedback:
    def make_result(self, client):
        accept_terms(client)
        upload = do_upload(client)
        return do_process(client, upload["upload_id"])["result_id"]

    def test_valid_feedback_persisted(self, webapp):
        client, store = webapp
        rid = self.make_result(client)
        resp = client.post(f"/feedback/{rid}", json={"text": "nice segmentation"})
        assert resp.status_code == 204
        entries = store.list(f"feedback/{rid}/")
        assert len(entries) == 1
        assert json.loads(store.get(entries[0]).data)["text"] == "nice segmentation"

    def test_empty_text_400(self, webapp):
        client, _ = webapp
        rid = self.make_result(client)
        assert client.post(f"/feedback/{rid}", json={"text": ""}).status_code == 400

    def test_too_long_400(self, webapp):
        client, _ = webapp
        rid = self.make_result(client)
        resp = client.post(f"/feedback/{rid}", json={"text": "x" * 10_001})
        assert resp.status_code == 400

    def test_unknown_result_404(self, webapp):
        client, _ = webapp
        accept_terms(client)
        assert client.post("/feedback/zzz", json={"text": "hi"}).status_code == 404


class TestStaticShell:
    def test_builtin_fallback_page(self, webapp):
        client, _ = webapp
        resp = client.get("/")
        assert resp.status_code == 200
        assert "pathoquant" in resp.text

    def test_ui_bundle_served_when_configured(self, tmp_path):
        static = tmp_path / "dist"
        (static / "js").mkdir(parents=True)
        (static / "index.html").write_text("<html><body>ui-bundle</body></html>")
        (static / "js" / "main.js").write_text("export {};")
        config = ServiceConfig(storage_root=str(tmp_path / "s"), pool_size=1,
                               queue_capacity=1, static_dir=str(static))
        app = create_web_app(config, store=LocalStore(config.storage_root))
        with TestClient(app, raise_server_exceptions=False) as client:
            assert "ui-bundle" in client.get("/").text
            assert client.get("/static/js/main.js").status_code == 200


class TestLoopbackCompute:
    def test_process_via_http_compute(self, tmp_path):
        """Webapp delegating to a live API service over loopback HTTP."""
        import socket
        import threading
        import time as _time

        import uvicorn

        from pathoquant.api import create_api_app

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        api_app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=2))
        server = uvicorn.Server(uvicorn.Config(api_app, host="127.0.0.1",
                                               port=port, log_level="error"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = _time.time() + 10
        while not server.started:
            assert _time.time() < deadline, "API server failed to start"
            _time.sleep(0.01)
        try:
            config = ServiceConfig(storage_root=str(tmp_path / "s"), pool_size=1,
                                   queue_capacity=1,
                                   api_url=f"http://127.0.0.1:{port}")
            app = create_web_app(config, store=LocalStore(config.storage_root))
            with TestClient(app, raise_server_exceptions=False) as client:
                accept_terms(client)
                upload = do_upload(client, png=fixture_png(k=4, p=2, seed=19))
                processed = do_process(client, upload["upload_id"])
                assert processed["scoring"]["num_total"] == 4
                assert processed["scoring"]["num_pos"] == 2
                # persisted package is complete despite remote computation
                zf = zipfile.ZipFile(io.BytesIO(
                    client.get(f"/download/{processed['result_id']}.zip").content))
                assert zf.namelist() == sorted(ZIP_MEMBERS)
        finally:
            server.should_exit = True
            thread.join(timeout=10)


class TestRetention:
    def test_sweep_removes_expired(self, webapp):
        client, store = webapp
        accept_terms(client)
        upload = do_upload(client)
        processed = do_process(client, upload["upload_id"])
        rid = processed["result_id"]
        # nothing expires at the configured TTL
        assert sweep_expired(store, ttl_seconds=7 * 86400) == 0
        assert client.get(f"/results/{rid}").status_code == 200
        # everything expires with a zero TTL
        removed = sweep_expired(store, ttl_seconds=0.0)
        assert removed == 2  # one upload + one result
        assert client.get(f"/results/{rid}").status_code == 404
        assert store.list("uploads/") == []

    def test_feedback_survives_sweep(self, webapp):
        client, store = webapp
        accept_terms(client)
        upload = do_upload(client)
        rid = do_process(client, upload["upload_id"])["result_id"]
        client.post(f"/feedback/{rid}", json={"text": "keep me"})
        sweep_expired(store, ttl_seconds=0.0)
        assert len(store.list("feedback/")) == 1
