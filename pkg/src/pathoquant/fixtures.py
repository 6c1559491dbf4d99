"""Synthetic IHC fixtures with exact ground truth.

Disks of pure hematoxylin or DAB color (forward Beer-Lambert rendering
at unit concentration) on a white background. Radii, margins, and
pairwise separation are constrained so the default pipeline recovers
each disk as exactly one cell, making (num_total, num_pos) known by
construction.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np

from .errors import BadParameter
from .imaging import RasterImage
from .stains import StainMatrix, stain_rgb

MIN_RADIUS = 4
MAX_RADIUS = 20
MIN_SEPARATION = 4   # edge-to-edge, guarantees smoothing cannot bridge disks
EDGE_MARGIN = 2      # keeps the smoothing support of every disk in bounds
MAX_PLACEMENT_ATTEMPTS = 10_000

KIND_HEMATOXYLIN = "hematoxylin"
KIND_DAB = "dab"


class FixturePackingError(BadParameter):
    """Rejection sampling could not place all requested disks."""


@dataclass(frozen=True)
class DiskSpec:
    center: tuple[int, int]  # (x, y)
    radius: int
    kind: str


@dataclass(frozen=True)
class FixtureSpec:
    width: int
    height: int
    cells: tuple[DiskSpec, ...]
    seed: int = 0

    def __post_init__(self):
        for cell in self.cells:
            x, y = cell.center
            r = cell.radius
            if not (MIN_RADIUS <= r <= MAX_RADIUS):
                raise BadParameter(f"radius {r} outside [{MIN_RADIUS}, {MAX_RADIUS}]")
            if cell.kind not in (KIND_HEMATOXYLIN, KIND_DAB):
                raise BadParameter(f"unknown cell kind {cell.kind!r}")
            if not (r <= x <= self.width - 1 - r and r <= y <= self.height - 1 - r):
                raise BadParameter(f"disk at {cell.center} r={r} leaves image bounds")
        for i, a in enumerate(self.cells):
            for b in self.cells[i + 1:]:
                dx = a.center[0] - b.center[0]
                dy = a.center[1] - b.center[1]
                need = a.radius + b.radius + MIN_SEPARATION
                if dx * dx + dy * dy < need * need:
                    raise BadParameter(f"disks at {a.center} and {b.center} closer "
                                       f"than {MIN_SEPARATION}px edge-to-edge")

    @property
    def num_total(self) -> int:
        return len(self.cells)

    @property
    def num_pos(self) -> int:
        return sum(1 for c in self.cells if c.kind == KIND_DAB)


def disk_area(radius: int) -> int:
    """Rasterized pixel count of a disk: #{(dx,dy): dx^2+dy^2 <= r^2}."""
    r = int(radius)
    span = np.arange(-r, r + 1)
    return int(np.count_nonzero(span[:, None] ** 2 + span[None, :] ** 2 <= r * r))


def render_fixture(spec: FixtureSpec, stains: StainMatrix | None = None) -> RasterImage:
    """White background with hard-edged stain-colored disks."""
    stains = stains or StainMatrix()
    pixels = np.full((spec.height, spec.width, 3), 255, dtype=np.uint8)
    colors = {KIND_HEMATOXYLIN: stain_rgb(stains, KIND_HEMATOXYLIN),
              KIND_DAB: stain_rgb(stains, KIND_DAB)}
    for cell in spec.cells:
        cx, cy = cell.center
        r = cell.radius
        ys = np.arange(cy - r, cy + r + 1)
        xs = np.arange(cx - r, cx + r + 1)
        mask = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2 <= r * r
        region = pixels[cy - r:cy + r + 1, cx - r:cx + r + 1]
        region[mask] = colors[cell.kind]
    return RasterImage(pixels)


def ground_truth(spec: FixtureSpec) -> dict:
    """Exact expected scoring plus per-cell geometry."""
    num_total = spec.num_total
    num_pos = spec.num_pos
    return {
        "num_total": num_total,
        "num_pos": num_pos,
        "percent_pos": 100.0 * num_pos / num_total if num_total else 0.0,
        "cells": [
            {"center": list(c.center), "radius": c.radius, "kind": c.kind,
             "area": disk_area(c.radius)}
            for c in spec.cells
        ],
    }


def default_side(num_cells: int) -> int:
    """Image side that makes rejection-sampled packing easy."""
    return max(256, int(np.ceil(np.sqrt(max(num_cells, 1)))) * 64)


def random_fixture(num_cells: int, num_positive: int, seed: int,
                   width: int | None = None, height: int | None = None) -> FixtureSpec:
    """Rejection-sample a fixture with the requested class counts."""
    if num_cells < 0 or num_positive < 0 or num_positive > num_cells:
        raise BadParameter(f"need 0 <= num_positive <= num_cells, "
                           f"got {num_positive}/{num_cells}")
    side = default_side(num_cells)
    width = width or side
    height = height or side
    rng = random.Random(seed)
    kinds = [KIND_DAB] * num_positive + [KIND_HEMATOXYLIN] * (num_cells - num_positive)
    rng.shuffle(kinds)
    placed: list[DiskSpec] = []
    failures = 0
    while len(placed) < num_cells:
        r = rng.randint(MIN_RADIUS, MAX_RADIUS)
        lo_x, hi_x = r + EDGE_MARGIN, width - 1 - r - EDGE_MARGIN
        lo_y, hi_y = r + EDGE_MARGIN, height - 1 - r - EDGE_MARGIN
        ok = hi_x >= lo_x and hi_y >= lo_y
        if ok:
            cx, cy = rng.randint(lo_x, hi_x), rng.randint(lo_y, hi_y)
            for other in placed:
                dx, dy = cx - other.center[0], cy - other.center[1]
                need = r + other.radius + MIN_SEPARATION
                if dx * dx + dy * dy < need * need:
                    ok = False
                    break
        if ok:
            placed.append(DiskSpec(center=(cx, cy), radius=r, kind=kinds[len(placed)]))
            failures = 0
        else:
            failures += 1
            if failures >= MAX_PLACEMENT_ATTEMPTS:
                raise FixturePackingError(
                    f"could not place disk {len(placed) + 1}/{num_cells} after "
                    f"{MAX_PLACEMENT_ATTEMPTS} attempts in {width}x{height}")
    return FixtureSpec(width=width, height=height, cells=tuple(placed), seed=seed)


def spec_from_json(document: str | dict) -> FixtureSpec:
    """Parse a fixture spec document: {width, height, seed?, cells: [...]}. """
    if isinstance(document, str):
        document = json.loads(document)
    cells = tuple(
        DiskSpec(center=(int(c["center"][0]), int(c["center"][1])),
                 radius=int(c["radius"]), kind=str(c["kind"]))
        for c in document.get("cells", []))
    return FixtureSpec(width=int(document["width"]), height=int(document["height"]),
                       cells=cells, seed=int(document.get("seed", 0)))
