"""Regenerate the bundled demo sample images (deterministic)."""

import pathlib

from pathoquant.fixtures import random_fixture, render_fixture
from pathoquant.imaging import encode_png

SAMPLES = {
    "demo_ki67_low": dict(num_cells=24, num_positive=4, seed=101, width=420, height=320),
    "demo_ki67_high": dict(num_cells=30, num_positive=21, seed=202, width=420, height=320),
    "demo_sparse": dict(num_cells=8, num_positive=3, seed=303, width=360, height=280),
}


def main():
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "src" / "pathoquant" / "samples"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, kwargs in SAMPLES.items():
        spec = random_fixture(**kwargs)
        path = out_dir / f"{name}.png"
        path.write_bytes(encode_png(render_fixture(spec)))
        print(f"{path}  cells={spec.num_total} positive={spec.num_pos}")


if __name__ == "__main__":
    main()
