"""Stateless HTTP inference API.

POST /api/infer   multipart image -> inferred modality images, segmentation,
                  and positivity scoring (JSON with Base64 PNG payloads)
POST /api/adjust  rerun post-processing on a seg_raw image or stored result
GET  /api/health  liveness
GET  /api/metrics job-pool gauges for an external autoscaler

Uploads are processed entirely in memory; nothing is ever written to the
object store or filesystem from this service.
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .config import ServiceConfig
from .engine import Engine, ReferenceBackend
from .errors import BadParameter, ImageTooLarge, NotFound, PathoquantError
from .imaging import decode_image, sniff_format
from .jobs import JobPool
from .pipeline import adjust_from_seg_raw, parse_postprocess_params, run_pipeline
from .records import ResultRecord
from .store import MAX_OBJECT_BYTES, ObjectStore

STATUS_BY_CODE = {
    "bad_parameter": 400,
    "unsupported_format": 400,
    "corrupt_image": 400,
    "image_too_large": 413,
    "not_found": 404,
    "overloaded": 503,
    "internal": 500,
}

_TRUE = {"true", "1", "t", "yes", "on"}
_FALSE = {"false", "0", "f", "no", "off", ""}


def parse_bool(args, name: str) -> bool:
    raw = args.get(name)
    if raw is None:
        return False
    lowered = raw.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise BadParameter(f"{name} must be boolean, got {raw!r}")


def parse_resolution(args) -> str:
    raw = args.get("resolution")
    if raw is None or raw == "":
        return "20x"
    lowered = raw.strip().lower()
    if lowered not in ("10x", "20x", "40x"):
        raise BadParameter(f"resolution must be 10x, 20x or 40x, got {raw!r}")
    return lowered


def error_body(code: str, message: str) -> dict:
    return {"error": code, "message": message}


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def install_error_handlers(app: FastAPI) -> None:
    """Map platform errors (and framework validation noise) to ErrorBody JSON."""

    @app.exception_handler(PathoquantError)
    async def platform_error(request: Request, exc: PathoquantError):
        status = STATUS_BY_CODE.get(exc.code, 500)
        return JSONResponse(status_code=status, content=error_body(exc.code, str(exc)))

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content=error_body("bad_parameter", str(exc)))

    @app.exception_handler(Exception)
    async def unexpected_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content=error_body("internal", f"{type(exc).__name__}: {exc}"))


def create_api_app(config: ServiceConfig | None = None, engine: Engine | None = None,
                   pool: JobPool | None = None, store: ObjectStore | None = None) -> FastAPI:
    """Build the API service; `store` is only consulted for result_id adjusts."""
    config = config or ServiceConfig()
    engine = engine or Engine(backend=ReferenceBackend(config.stains),
                              tile_size=config.tile_size, overlap=config.tile_overlap,
                              parallelism=config.tile_parallelism)
    pool = pool or JobPool(config.effective_pool_size(), config.effective_queue_capacity())
    limits = config.limits

    app = FastAPI(title="pathoquant API", docs_url=None, redoc_url=None)
    app.state.pool = pool
    app.state.engine = engine
    install_error_handlers(app)

    def read_upload(part: UploadFile) -> bytes:
        data = part.file.read()
        if len(data) > MAX_OBJECT_BYTES:
            raise ImageTooLarge(f"upload exceeds {MAX_OBJECT_BYTES} bytes")
        return data

    @app.post("/api/infer")
    def handle_infer(request: Request, img: UploadFile | None = File(None)):
        if img is None:
            raise BadParameter("multipart file part 'img' is required")
        args = request.query_params
        resolution = parse_resolution(args)
        pil = parse_bool(args, "pil")
        slim = parse_bool(args, "slim")
        params = parse_postprocess_params(args)
        raw = read_upload(img)
        fast = pil or sniff_format(raw) in ("png", "jpeg")
        raster = decode_image(raw, fast_path=fast, limits=limits)
        with pool.slot():
            result = run_pipeline(raster, resolution, engine, params)
            images = result.render_set(slim=slim)
        return JSONResponse({
            "images": {name: _b64(data) for name, data in images.items()},
            "scoring": result.scoring.as_dict(),
        })

    @app.post("/api/adjust")
    def handle_adjust(request: Request,
                      seg_raw: UploadFile | None = File(None),
                      img: UploadFile | None = File(None)):
        args = request.query_params
        params = parse_postprocess_params(args)
        result_id = args.get("result_id")
        original = None
        if result_id:
            if store is None:
                raise NotFound(f"unknown result_id {result_id!r}")
            record = ResultRecord.load(store, result_id)
            seg_raster = decode_image(store.get(record.image_keys["seg_raw"]).data,
                                      limits=limits)
            try:
                original = decode_image(store.get(record.original_key).data, limits=limits)
            except NotFound:
                original = None
        elif seg_raw is not None:
            seg_raster = decode_image(read_upload(seg_raw), limits=limits)
            if img is not None:
                original = decode_image(read_upload(img), limits=limits)
        else:
            raise BadParameter("provide multipart part 'seg_raw' or query param 'result_id'")
        with pool.slot():
            images, scoring = adjust_from_seg_raw(seg_raster, params, original)
        return JSONResponse({
            "images": {name: _b64(data) for name, data in images.items()},
            "scoring": scoring.as_dict(),
        })

    @app.get("/api/health")
    def handle_health():
        return {"status": "ok"}

    @app.get("/api/metrics")
    def handle_metrics():
        m = pool.metrics()
        return {"queue_depth": m.queue_depth, "jobs_running": m.jobs_running,
                "jobs_completed": m.jobs_completed}

    return app
