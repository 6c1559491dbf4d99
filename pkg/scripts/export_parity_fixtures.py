"""Export frontend parity fixtures: seg_raw planes plus /api/adjust scorings.

The browser client must reproduce the server's (num_total, num_pos)
exactly for any parameter set, so the expected values are taken from the
real /api/adjust endpoint, not recomputed separately.
"""

import base64
import json
import pathlib

import numpy as np
from fastapi.testclient import TestClient

from pathoquant.api import create_api_app
from pathoquant.config import ServiceConfig
from pathoquant.engine import Engine, ReferenceBackend
from pathoquant.fixtures import random_fixture, render_fixture
from pathoquant.imaging import quantize_plane
from pathoquant.pipeline import run_pipeline
from pathoquant.postprocess import PostprocessParams

OUT = pathlib.Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"


def main():
    spec = random_fixture(14, 6, seed=1234, width=360, height=300)
    img = render_fixture(spec)
    result = run_pipeline(img, "20x", Engine(backend=ReferenceBackend()),
                          PostprocessParams())
    pos_bytes = quantize_plane(result.seg_q.pos_score)
    fg_bytes = quantize_plane(result.seg_q.fg_prob)
    seg_raw_png = result.render("seg_raw")

    rng = np.random.default_rng(77)
    cases = []
    app = create_api_app(ServiceConfig(pool_size=1, queue_capacity=2))
    with TestClient(app) as client:
        for i in range(10):
            params = {
                "seg_threshold": round(float(rng.uniform(0.05, 0.95)), 3),
                "size_gate_min": round(float(rng.uniform(0.0, 200.0)), 1),
                "marker_threshold": round(float(rng.uniform(0.2, 0.8)), 3),
            }
            if i % 2 == 0:
                params["size_gate_max"] = round(
                    float(params["size_gate_min"] + rng.uniform(50.0, 2000.0)), 1)
            query = {k: repr(v) for k, v in params.items()}
            resp = client.post("/api/adjust", params=query,
                               files={"seg_raw": ("s.png", seg_raw_png, "image/png")})
            resp.raise_for_status()
            cases.append({"params": params, "expected": resp.json()["scoring"]})

    OUT.mkdir(parents=True, exist_ok=True)
    doc = {
        "width": img.width,
        "height": img.height,
        "truth": {"num_total": spec.num_total, "num_pos": spec.num_pos},
        "pos_b64": base64.b64encode(pos_bytes.tobytes()).decode(),
        "fg_b64": base64.b64encode(fg_bytes.tobytes()).decode(),
        "cases": cases,
    }
    (OUT / "parity.json").write_text(json.dumps(doc))
    print(f"wrote {OUT / 'parity.json'}: {len(cases)} cases, "
          f"{img.width}x{img.height} planes")


if __name__ == "__main__":
    main()
