"""Session-oriented website backend.

Owns the upload/verify/results flow: persists uploads and result
packages in the object store, exposes ZIP export, server-side
adjustment, feedback, and the terms-of-use gate. Computation is
delegated to the inference pipeline either in process or over loopback
HTTP to the API service (configuration choice).
"""

from __future__ import annotations

import base64
import csv
import io
import json
import secrets
import threading
import time
import zipfile
from dataclasses import asdict

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import HTMLResponse, JSONResponse, RedirectResponse, Response
from starlette.middleware.sessions import SessionMiddleware

from .api import error_body, install_error_handlers, parse_resolution
from .config import ServiceConfig
from .engine import Engine, ReferenceBackend
from .errors import BadParameter, NotFound, from_code
from .imaging import RasterImage, decode_image, encode_png, make_thumbnail
from .jobs import JobPool
from .pipeline import adjust_from_seg_raw, parse_postprocess_params, run_pipeline
from .postprocess import PostprocessParams, QuantResult
from .records import (RESULT_IMAGE_NAMES, FeedbackRecord, ResultRecord, UploadRecord,
                      new_id, result_image_key, sweep_expired, upload_image_key)
from .store import ObjectStore

DISPLAY_IMAGE_NAMES = ("original",) + RESULT_IMAGE_NAMES[:-1]  # no seg_raw in grids
ZIP_MEMBERS = ("original.png", "hema.png", "dapi.png", "lap2.png", "marker.png",
               "seg.png", "overlay.png", "seg_raw.png", "scoring.json", "scoring.csv")


class InProcessCompute:
    """Run the inference pipeline directly, sharing the API's job pool."""

    def __init__(self, engine: Engine, pool: JobPool | None = None):
        self.engine = engine
        self.pool = pool

    def infer_full(self, raster: RasterImage, resolution: str) -> tuple[dict, QuantResult]:
        def run():
            result = run_pipeline(raster, resolution, self.engine, PostprocessParams())
            return result.render_set(slim=False), result.scoring

        if self.pool is None:
            return run()
        with self.pool.slot():
            return run()


class HttpCompute:
    """Delegate computation to a running API service over loopback HTTP."""

    def __init__(self, api_url: str):
        import requests

        self.api_url = api_url.rstrip("/")
        self.session = requests.Session()

    def infer_full(self, raster: RasterImage, resolution: str) -> tuple[dict, QuantResult]:
        resp = self.session.post(
            f"{self.api_url}/api/infer",
            files={"img": ("upload.png", encode_png(raster), "image/png")},
            params={"resolution": resolution},
            timeout=300,
        )
        body = resp.json()
        if resp.status_code != 200:
            raise from_code(body.get("error", "internal"), body.get("message", ""))
        images = {name: base64.b64decode(value) for name, value in body["images"].items()}
        return images, QuantResult(**body["scoring"])


_FALLBACK_INDEX = """<!doctype html>
<html><head><title>pathoquant</title></head>
<body>
<h1>pathoquant</h1>
<p>The web UI bundle is not installed. The HTTP interface is still available:</p>
<ul>
<li>POST /upload (multipart part "img")</li>
<li>POST /process {"upload_id": ..., "resolution": "20x"}</li>
<li>GET /results/{result_id}, GET /download/{result_id}.zip</li>
<li>POST /adjust/{result_id}, POST /feedback/{result_id}</li>
</ul>
</body></html>
"""

_TERMS_TEXT = (
    "Placeholder terms of use. Uploaded images must be your property and must "
    "not contain personally identifiable information or personal health "
    "information. Results are provided without warranty, for research use "
    "only. Accept to continue."
)


def _wants_html(request: Request) -> bool:
    accept = request.headers.get("accept", "")
    return "text/html" in accept and "application/json" not in accept.split(",")[0]


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _round1(value: float) -> float:
    return round(value, 1)


def build_result_zip(original_png: bytes, images: dict[str, bytes],
                     scoring: QuantResult) -> bytes:
    """Deterministic ZIP: fixed timestamps, sorted member order, deflate."""
    scoring_json = (json.dumps(scoring.as_dict(), indent=2, sort_keys=True) + "\n").encode()
    csv_buf = io.StringIO()
    writer = csv.writer(csv_buf)
    writer.writerow(["num_total", "num_pos", "percent_pos"])
    writer.writerow([scoring.num_total, scoring.num_pos, repr(scoring.percent_pos)])
    members = {"original.png": original_png, "scoring.json": scoring_json,
               "scoring.csv": csv_buf.getvalue().encode()}
    for name, data in images.items():
        members[f"{name}.png"] = data
    assert set(members) == set(ZIP_MEMBERS)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, members[name])
    return buf.getvalue()


def create_web_app(config: ServiceConfig | None = None, store: ObjectStore | None = None,
                   compute=None, pool: JobPool | None = None,
                   run_sweep: bool = True) -> FastAPI:
    config = config or ServiceConfig()
    if store is None:
        from .store import LocalStore

        store = LocalStore(config.storage_root)
    if compute is None:
        if config.api_url:
            compute = HttpCompute(config.api_url)
        else:
            engine = Engine(backend=ReferenceBackend(config.stains),
                            tile_size=config.tile_size, overlap=config.tile_overlap,
                            parallelism=config.tile_parallelism)
            compute = InProcessCompute(engine, pool)
    limits = config.limits
    ttl_seconds = config.ttl_days * 86400.0

    if run_sweep:
        sweep_expired(store, ttl_seconds)

    app = FastAPI(title="pathoquant web app", docs_url=None, redoc_url=None)
    install_error_handlers(app)
    app.add_middleware(SessionMiddleware,
                       secret_key=config.secret_key or secrets.token_urlsafe(32),
                       session_cookie="pq_session")
    app.state.store = store
    app.state.compute = compute

    if config.static_dir:
        import os

        from fastapi.staticfiles import StaticFiles

        if os.path.isdir(config.static_dir):
            app.mount("/static", StaticFiles(directory=config.static_dir),
                      name="static")

    record_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def record_lock(result_id: str) -> threading.Lock:
        with locks_guard:
            return record_locks.setdefault(result_id, threading.Lock())

    def terms_accepted(request: Request) -> bool:
        return bool(request.session.get("terms_accepted"))

    def require_terms(request: Request):
        if not terms_accepted(request):
            if _wants_html(request):
                return RedirectResponse("/terms", status_code=303)
            return JSONResponse(status_code=403,
                                content=error_body("terms_not_accepted",
                                                   "accept the terms of use first"))
        return None

    def sample_dir():
        if config.sample_dir:
            import pathlib

            return pathlib.Path(config.sample_dir)
        import importlib.resources

        return importlib.resources.files("pathoquant") / "samples"

    def sample_names() -> list[str]:
        try:
            return sorted(p.name[:-4] for p in sample_dir().iterdir()
                          if p.name.endswith(".png"))
        except (FileNotFoundError, NotADirectoryError):
            return []

    def ingest(data: bytes) -> dict:
        """Validate, strip metadata via re-encode, persist, thumbnail."""
        raster = decode_image(data, fast_path=False, limits=limits)
        upload_id = new_id()
        store.put(upload_image_key(upload_id), encode_png(raster), "image/png")
        record = UploadRecord(upload_id=upload_id, object_key=upload_image_key(upload_id),
                              width=raster.width, height=raster.height,
                              created_at=time.time())
        record.save(store)
        thumb = make_thumbnail(raster, limits.thumbnail_max_dim)
        return {"upload_id": upload_id, "thumbnail": _b64(encode_png(thumb)),
                "width": raster.width, "height": raster.height}

    def thumbnail_of(key: str) -> str:
        raster = decode_image(store.get(key).data, limits=limits)
        return _b64(encode_png(make_thumbnail(raster, limits.thumbnail_max_dim)))

    def result_thumbnails(record: ResultRecord) -> dict[str, str]:
        return {name: thumbnail_of(record.original_key if name == "original"
                                   else record.image_keys[name])
                for name in DISPLAY_IMAGE_NAMES}

    @app.get("/", response_class=HTMLResponse)
    def home():
        if config.static_dir:
            import os

            index = os.path.join(config.static_dir, "index.html")
            if os.path.exists(index):
                with open(index, "r", encoding="utf-8") as fh:
                    return HTMLResponse(fh.read())
        return HTMLResponse(_FALLBACK_INDEX)

    @app.get("/terms")
    def terms(request: Request):
        if _wants_html(request):
            return HTMLResponse(f"<html><body><h1>Terms of Use</h1><p>{_TERMS_TEXT}</p>"
                                f"<form method='post' action='/terms/accept'>"
                                f"<button>Accept</button></form></body></html>")
        return {"terms": _TERMS_TEXT, "accepted": terms_accepted(request)}

    @app.post("/terms/accept")
    def accept_terms(request: Request):
        request.session["terms_accepted"] = True
        return {"accepted": True}

    @app.post("/upload")
    def upload(request: Request, img: UploadFile | None = File(None)):
        denied = require_terms(request)
        if denied:
            return denied
        if img is None:
            raise BadParameter("multipart file part 'img' is required")
        return JSONResponse(ingest(img.file.read()))

    @app.get("/samples")
    def samples():
        return {"samples": sample_names()}

    @app.get("/sample/{name}")
    def sample(request: Request, name: str):
        denied = require_terms(request)
        if denied:
            return denied
        if name not in sample_names():
            raise NotFound(f"unknown sample {name!r}")
        data = (sample_dir() / f"{name}.png").read_bytes()
        return JSONResponse(ingest(data))

    async def _body_args(request: Request) -> dict:
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            try:
                doc = json.loads(await request.body() or b"{}")
            except json.JSONDecodeError as exc:
                raise BadParameter(f"invalid JSON body: {exc}")
            if not isinstance(doc, dict):
                raise BadParameter("JSON body must be an object")
            return {k: (v if isinstance(v, str) or v is None else json.dumps(v))
                    for k, v in doc.items()}
        form = await request.form()
        return {k: v for k, v in form.items() if isinstance(v, str)}

    @app.post("/process")
    async def process(request: Request):
        denied = require_terms(request)
        if denied:
            return denied
        args = await _body_args(request)
        upload_id = args.get("upload_id")
        if not upload_id:
            raise BadParameter("upload_id is required")
        resolution = parse_resolution(args)
        upload_record = UploadRecord.load(store, upload_id)
        original_png = store.get(upload_record.object_key).data
        raster = decode_image(original_png, limits=limits)
        images, scoring = compute.infer_full(raster, resolution)
        result_id = new_id()
        params = PostprocessParams()
        image_keys = {}
        for name in RESULT_IMAGE_NAMES:
            key = result_image_key(result_id, name)
            store.put(key, images[name], "image/png")
            image_keys[name] = key
        original_key = result_image_key(result_id, "original")
        store.put(original_key, original_png, "image/png")
        record = ResultRecord(result_id=result_id, upload_id=upload_id,
                              resolution=resolution, params=params,
                              image_keys=image_keys, original_key=original_key,
                              scoring=scoring, created_at=time.time())
        record.save(store)
        return JSONResponse({"result_id": result_id,
                             "thumbnails": result_thumbnails(record),
                             "scoring": scoring.as_dict()})

    @app.get("/results/{result_id}")
    def results(result_id: str):
        record = ResultRecord.load(store, result_id)
        scoring = record.scoring.as_dict()
        scoring["percent_pos"] = _round1(scoring["percent_pos"])
        return JSONResponse({"result_id": record.result_id,
                             "resolution": record.resolution,
                             "params": asdict(record.params),
                             "scoring": scoring,
                             "created_at": record.created_at,
                             "thumbnails": result_thumbnails(record)})

    @app.get("/results/{result_id}/image/{name}")
    def result_image(result_id: str, name: str):
        record = ResultRecord.load(store, result_id)
        if name == "original":
            key = record.original_key
        elif name in record.image_keys:
            key = record.image_keys[name]
        else:
            raise NotFound(f"no image named {name!r}")
        return Response(content=store.get(key).data, media_type="image/png")

    @app.post("/adjust/{result_id}")
    async def adjust(request: Request, result_id: str):
        denied = require_terms(request)
        if denied:
            return denied
        args = await _body_args(request)
        args.update({k: v for k, v in request.query_params.items()})
        params = parse_postprocess_params(args)
        with record_lock(result_id):
            record = ResultRecord.load(store, result_id)
            seg_raster = decode_image(store.get(record.image_keys["seg_raw"]).data,
                                      limits=limits)
            original = decode_image(store.get(record.original_key).data, limits=limits)
            images, scoring = adjust_from_seg_raw(seg_raster, params, original)
            store.put(record.image_keys["seg"], images["seg"], "image/png")
            store.put(record.image_keys["overlay"], images["overlay"], "image/png")
            updated = ResultRecord(result_id=record.result_id, upload_id=record.upload_id,
                                   resolution=record.resolution, params=params,
                                   image_keys=record.image_keys,
                                   original_key=record.original_key,
                                   scoring=scoring, created_at=record.created_at)
            updated.save(store)
        thumbs = {"seg": thumbnail_of(record.image_keys["seg"]),
                  "overlay": thumbnail_of(record.image_keys["overlay"])}
        return JSONResponse({"scoring": scoring.as_dict(), "thumbnails": thumbs})

    @app.get("/download/{result_id}.zip")
    def download(result_id: str):
        record = ResultRecord.load(store, result_id)
        images = {name: store.get(record.image_keys[name]).data
                  for name in RESULT_IMAGE_NAMES}
        original_png = store.get(record.original_key).data
        payload = build_result_zip(original_png, images, record.scoring)
        return Response(content=payload, media_type="application/zip",
                        headers={"Content-Disposition":
                                 f'attachment; filename="{result_id}.zip"'})

    @app.post("/feedback/{result_id}")
    async def feedback(request: Request, result_id: str):
        args = await _body_args(request)
        text = args.get("text") or ""
        ResultRecord.load(store, result_id)  # 404 for unknown results
        try:
            record = FeedbackRecord(result_id=result_id, text=text,
                                    created_at=time.time())
        except ValueError as exc:
            raise BadParameter(str(exc))
        record.save(store)
        return Response(status_code=204)

    return app
