"""Command-line client and operations tool.

Subcommands:

  infer    score one image locally or against a running server
  batch    score a directory of images into a CSV
  fixture  generate a synthetic ground-truth image for testing
  serve    run the API and web app services until interrupted

Exit codes: 0 success, 1 I/O failure, 2 server/pipeline failure,
3 bad flags or an invalid fixture spec.
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import signal
import socket
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from .config import load_config
from .engine import Engine, ReferenceBackend
from .errors import PathoquantError
from .fixtures import (FixturePackingError, ground_truth, random_fixture,
                       render_fixture, spec_from_json)
from .imaging import decode_image, encode_png, sniff_format
from .pipeline import run_pipeline
from .postprocess import PostprocessParams
from .records import sweep_expired

EXIT_OK = 0
EXIT_IO = 1
EXIT_PIPELINE = 2
EXIT_USAGE = 3

BATCH_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports flag errors as exit code 3."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="pathoquant")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_engine_flags(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--server", default=None,
                           help="server base URL (default: $PQ_SERVER)")
        group.add_argument("--local", action="store_true",
                           help="run the pipeline in process")
        p.add_argument("--resolution", choices=["10x", "20x", "40x"], default="20x")
        p.add_argument("--seg-threshold", type=float, default=None)
        p.add_argument("--size-gate-min", type=float, default=None)
        p.add_argument("--size-gate-max", type=float, default=None)
        p.add_argument("--marker-threshold", type=float, default=None)

    p_infer = sub.add_parser("infer", help="score a single image")
    p_infer.add_argument("file")
    add_engine_flags(p_infer)
    p_infer.add_argument("--slim", action="store_true",
                         help="fetch only the segmentation image")
    p_infer.add_argument("--out", default=None,
                         help="output directory (default: alongside the input)")

    p_batch = sub.add_parser("batch", help="score a directory of images")
    p_batch.add_argument("dir")
    p_batch.add_argument("--csv", required=True, help="output CSV path")
    add_engine_flags(p_batch)
    p_batch.add_argument("--jobs", type=int, default=1)

    p_fix = sub.add_parser("fixture", help="generate a synthetic test image")
    source = p_fix.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", help="fixture spec JSON file")
    source.add_argument("--random", nargs=3, metavar=("K", "P", "SEED"), type=int,
                        help="K cells, P positive, RNG seed")
    p_fix.add_argument("--out", required=True, help="output image path")
    p_fix.add_argument("--truth", default=None, help="ground truth JSON path")
    p_fix.add_argument("--width", type=int, default=None)
    p_fix.add_argument("--height", type=int, default=None)

    p_serve = sub.add_parser("serve", help="run API and web app services")
    p_serve.add_argument("--config", default=None, help="JSON config file")
    p_serve.add_argument("--api-port", type=int, default=None)
    p_serve.add_argument("--web-port", type=int, default=None)
    p_serve.add_argument("--storage", default=None, help="object store root directory")
    p_serve.add_argument("--pool", type=int, default=None, help="inference pool size")
    p_serve.add_argument("--static-dir", default=None, help="web UI asset directory")
    return parser


def postprocess_params_from_args(args) -> PostprocessParams:
    defaults = PostprocessParams()
    return PostprocessParams(
        seg_threshold=defaults.seg_threshold if args.seg_threshold is None
        else args.seg_threshold,
        size_gate_min=defaults.size_gate_min if args.size_gate_min is None
        else args.size_gate_min,
        size_gate_max=args.size_gate_max,
        marker_threshold=defaults.marker_threshold if args.marker_threshold is None
        else args.marker_threshold,
    )


def server_url(args) -> str | None:
    if args.local:
        return None
    return args.server or os.environ.get("PQ_SERVER") or None


def infer_via_server(url: str, data: bytes, args, slim: bool) -> tuple[dict, dict]:
    """POST to /api/infer; returns (images {name: png bytes}, scoring dict)."""
    import requests

    params = {"resolution": args.resolution}
    if slim:
        params["slim"] = "true"
    for flag, name in (("seg_threshold", "seg_threshold"),
                       ("size_gate_min", "size_gate_min"),
                       ("size_gate_max", "size_gate_max"),
                       ("marker_threshold", "marker_threshold")):
        value = getattr(args, flag)
        if value is not None:
            params[name] = repr(value)
    resp = requests.post(f"{url.rstrip('/')}/api/infer", params=params,
                         files={"img": ("upload", data)}, timeout=600)
    body = resp.json()
    if resp.status_code != 200:
        raise PathoquantError(f"server error {resp.status_code}: "
                              f"{body.get('error')}: {body.get('message')}")
    images = {name: base64.b64decode(value) for name, value in body["images"].items()}
    return images, body["scoring"]


def infer_locally(data: bytes, args, slim: bool) -> tuple[dict, dict]:
    raster = decode_image(data, fast_path=sniff_format(data) in ("png", "jpeg"))
    engine = Engine(backend=ReferenceBackend())
    result = run_pipeline(raster, args.resolution, engine,
                          postprocess_params_from_args(args))
    return result.render_set(slim=slim), result.scoring.as_dict()


def run_one_image(path: str, args, slim: bool) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    url = server_url(args)
    if url:
        return infer_via_server(url, data, args, slim)
    return infer_locally(data, args, slim)


def cmd_infer(args) -> int:
    try:
        images, scoring = run_one_image(args.file, args, args.slim)
    except OSError as exc:
        print(f"error: cannot read {args.file}: {exc}", file=sys.stderr)
        return EXIT_IO
    except PathoquantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    out_dir = args.out or os.path.dirname(os.path.abspath(args.file))
    stem = os.path.splitext(os.path.basename(args.file))[0]
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name, data in images.items():
            with open(os.path.join(out_dir, f"{stem}_{name}.png"), "wb") as fh:
                fh.write(data)
        with open(os.path.join(out_dir, "scoring.json"), "w", encoding="utf-8") as fh:
            json.dump(scoring, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        print(f"error: cannot write outputs to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(scoring, indent=2))
    return EXIT_OK


def cmd_batch(args) -> int:
    try:
        entries = sorted(os.listdir(args.dir))
    except OSError as exc:
        print(f"error: cannot list {args.dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    files = [n for n in entries
             if os.path.splitext(n)[1].lower() in BATCH_EXTENSIONS]
    if not files:
        print(f"error: no supported images in {args.dir}", file=sys.stderr)
        return EXIT_USAGE

    def score(name):
        try:
            _images, scoring = run_one_image(os.path.join(args.dir, name), args, True)
            return name, scoring, None
        except (OSError, PathoquantError) as exc:
            return name, None, exc

    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(score, files))
    else:
        outcomes = [score(name) for name in files]

    failed = False
    rows = []
    for name, scoring, exc in sorted(outcomes, key=lambda item: item[0]):
        if exc is not None:
            failed = True
            print(f"error: {name}: {exc}", file=sys.stderr)
        else:
            rows.append((name, scoring))
    try:
        import csv

        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filename", "num_total", "num_pos", "percent_pos"])
            for name, scoring in rows:
                writer.writerow([name, scoring["num_total"], scoring["num_pos"],
                                 repr(scoring["percent_pos"])])
    except OSError as exc:
        print(f"error: cannot write {args.csv}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_IO if failed else EXIT_OK


def cmd_fixture(args) -> int:
    try:
        if args.spec:
            with open(args.spec, "r", encoding="utf-8") as fh:
                spec = spec_from_json(fh.read())
        else:
            k, p, seed = args.random
            spec = random_fixture(k, p, seed=seed, width=args.width, height=args.height)
    except OSError as exc:
        print(f"error: cannot read spec: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FixturePackingError, PathoquantError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with open(args.out, "wb") as fh:
            fh.write(encode_png(render_fixture(spec)))
        if args.truth:
            with open(args.truth, "w", encoding="utf-8") as fh:
                json.dump(ground_truth(spec), fh, indent=2)
                fh.write("\n")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _port_free(port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind(("0.0.0.0", port))
            return True
        except OSError:
            return False


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_api_app
    from .jobs import JobPool
    from .store import LocalStore
    from .webapp import InProcessCompute, create_web_app

    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    overrides = {}
    if args.api_port is not None:
        overrides["api_port"] = args.api_port
    if args.web_port is not None:
        overrides["web_port"] = args.web_port
    if args.storage is not None:
        overrides["storage_root"] = args.storage
    if args.pool is not None:
        overrides["pool_size"] = args.pool
    if args.static_dir is not None:
        overrides["static_dir"] = args.static_dir
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)

    for port in (config.api_port, config.web_port):
        if not _port_free(port):
            print(f"error: port {port} is already in use", file=sys.stderr)
            return EXIT_IO

    store = LocalStore(config.storage_root)
    engine = Engine(backend=ReferenceBackend(config.stains),
                    tile_size=config.tile_size, overlap=config.tile_overlap,
                    parallelism=config.tile_parallelism)
    pool = JobPool(config.effective_pool_size(), config.effective_queue_capacity())
    api_app = create_api_app(config, engine=engine, pool=pool, store=store)
    web_app = create_web_app(config, store=store,
                             compute=InProcessCompute(engine, pool))

    servers = []
    threads = []
    for app, port in ((api_app, config.api_port), (web_app, config.web_port)):
        server = uvicorn.Server(uvicorn.Config(app, host="0.0.0.0", port=port,
                                               log_level="warning",
                                               timeout_graceful_shutdown=30))
        servers.append(server)
        threads.append(threading.Thread(target=server.run, daemon=True))

    stop = threading.Event()

    def handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handle_signal)
    signal.signal(signal.SIGTERM, handle_signal)

    def sweeper():
        ttl = config.ttl_days * 86400.0
        while not stop.wait(3600.0):
            try:
                sweep_expired(store, ttl)
            except PathoquantError:
                pass

    threading.Thread(target=sweeper, daemon=True).start()
    for t in threads:
        t.start()
    print(f"pathoquant: API on :{config.api_port}, web app on :{config.web_port}",
          flush=True)
    stop.wait()
    print("pathoquant: draining in-flight jobs", flush=True)
    for server in servers:
        server.should_exit = True
    pool.drain(timeout=30.0)
    for t in threads:
        t.join(timeout=35.0)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {"infer": cmd_infer, "batch": cmd_batch,
                "fixture": cmd_fixture, "serve": cmd_serve}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
