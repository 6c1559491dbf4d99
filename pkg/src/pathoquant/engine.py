"""Inference engine: pluggable backends plus tile/stitch orchestration.

A backend is any pure mapping from an RGB raster to a ModalitySet and
SegScores of identical dimensions. The reference backend realizes it
classically: stain deconvolution, percentile normalization, a gradient
boundary channel, and Gaussian-smoothed foreground scores. Inputs are
first resampled to the canonical 20x-equivalent scale, processed in
overlapping tiles, and stitched by copying each tile's core region.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import BackendFailure, InvalidTileGeometry, BadParameter
from .imaging import RasterImage, rescale
from .stains import StainMatrix, deconvolve, normalize_concentration

# Declared scan magnification -> factor applied to reach the canonical
# 20x-equivalent processing scale.
RESOLUTION_SCALE = {"10x": 2.0, "20x": 1.0, "40x": 0.5}

DEFAULT_TILE_SIZE = 512
DEFAULT_OVERLAP = 64

_SOBEL_MAX = 4.0 * np.sqrt(2.0)  # gradient magnitude bound for a [0,1] plane


@dataclass(frozen=True)
class ModalitySet:
    """Inferred restained channels, all (H, W) float planes in [0, 1]."""

    hema: np.ndarray = field(repr=False)
    dapi: np.ndarray = field(repr=False)
    lap2: np.ndarray = field(repr=False)
    marker: np.ndarray = field(repr=False)

    def __post_init__(self):
        shapes = {p.shape for p in (self.hema, self.dapi, self.lap2, self.marker)}
        if len(shapes) != 1:
            raise ValueError(f"modality planes disagree on shape: {shapes}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.hema.shape

    def items(self):
        return (("hema", self.hema), ("dapi", self.dapi),
                ("lap2", self.lap2), ("marker", self.marker))


@dataclass(frozen=True)
class SegScores:
    """Per-pixel foreground probability and marker positivity score."""

    fg_prob: np.ndarray = field(repr=False)
    pos_score: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.fg_prob.shape != self.pos_score.shape:
            raise ValueError("fg_prob and pos_score shapes differ")

    @property
    def shape(self) -> tuple[int, int]:
        return self.fg_prob.shape


@dataclass(frozen=True)
class InferenceOutput:
    modalities: ModalitySet
    seg: SegScores
    canonical_scale: float

    def __post_init__(self):
        if self.canonical_scale not in (0.5, 1.0, 2.0):
            raise ValueError(f"canonical_scale must be 0.5/1.0/2.0, got {self.canonical_scale}")
        if self.modalities.shape != self.seg.shape:
            raise ValueError("modalities and seg scores disagree on shape")


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class TilePlan:
    tile_size: int
    overlap: int
    tiles: tuple[tuple[Rect, Rect], ...]  # (source, core) pairs


def plan_tiles(width: int, height: int, tile_size: int = DEFAULT_TILE_SIZE,
               overlap: int = DEFAULT_OVERLAP) -> TilePlan:
    """Partition an image into core rectangles with overlapping sources.

    Core rectangles exactly cover the image without overlap; each source
    extends its core by ``overlap`` on every side, clipped to bounds.
    """
    if width < 1 or height < 1:
        raise InvalidTileGeometry(f"image dimensions must be >= 1, got {width}x{height}")
    if tile_size <= 2 * overlap or overlap < 0:
        raise InvalidTileGeometry(f"need tile_size > 2*overlap >= 0, got "
                                  f"tile_size={tile_size} overlap={overlap}")
    tiles = []
    for y0 in range(0, height, tile_size):
        y1 = min(y0 + tile_size, height)
        for x0 in range(0, width, tile_size):
            x1 = min(x0 + tile_size, width)
            core = Rect(x0, y0, x1, y1)
            source = Rect(max(0, x0 - overlap), max(0, y0 - overlap),
                          min(width, x1 + overlap), min(height, y1 + overlap))
            tiles.append((source, core))
    return TilePlan(tile_size=tile_size, overlap=overlap, tiles=tuple(tiles))


def synthesize_modalities(img: RasterImage, stains: StainMatrix) -> ModalitySet:
    """Reference modality synthesis from stain concentrations.

    hema and dapi are the normalized hematoxylin concentration (dapi as a
    nuclear-location proxy), marker the normalized DAB concentration, and
    lap2 a boundary channel: Sobel gradient magnitude of dapi scaled by
    its theoretical maximum.
    """
    hema_conc, dab_conc = deconvolve(img, stains)
    hema = normalize_concentration(hema_conc)
    marker = normalize_concentration(dab_conc)
    dapi = hema
    gx = ndimage.sobel(dapi, axis=1, mode="reflect")
    gy = ndimage.sobel(dapi, axis=0, mode="reflect")
    lap2 = np.clip(np.hypot(gx, gy) / _SOBEL_MAX, 0.0, 1.0).astype(np.float32)
    return ModalitySet(hema=hema, dapi=dapi, lap2=lap2, marker=marker)


def compute_seg_scores(m: ModalitySet) -> SegScores:
    """Foreground probability and positivity score from modalities.

    fg_prob is a Gaussian-smoothed (sigma 1 px, 5x5 kernel) per-pixel max
    of dapi and marker; DAB-saturated nuclei lose hematoxylin signal, so
    the max recovers them. pos_score is the marker plane unchanged.
    """
    fg = np.maximum(m.dapi, m.marker)
    fg = ndimage.gaussian_filter(fg, sigma=1.0, truncate=2.0, mode="reflect")
    fg = np.clip(fg, 0.0, 1.0)
    return SegScores(fg_prob=fg, pos_score=m.marker)


class Backend(Protocol):
    """Pure mapping RasterImage -> (ModalitySet, SegScores), same dims."""

    def run(self, img: RasterImage) -> tuple[ModalitySet, SegScores]: ...


class ReferenceBackend:
    """Classical deconvolution backend; the default inference engine."""

    def __init__(self, stains: StainMatrix | None = None):
        self.stains = stains or StainMatrix()

    def run(self, img: RasterImage) -> tuple[ModalitySet, SegScores]:
        modalities = synthesize_modalities(img, self.stains)
        return modalities, compute_seg_scores(modalities)


class NullBackend:
    """Deterministic pixel-wise backend for tests.

    dapi is the luminance complement, marker the red excess over the
    green/blue mean; fg_prob and pos_score pass those through untouched.
    """

    def run(self, img: RasterImage) -> tuple[ModalitySet, SegScores]:
        p = img.pixels.astype(np.float32)
        lum = (0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]) / 255.0
        dapi = np.clip(1.0 - lum, 0.0, 1.0)
        marker = np.clip((p[:, :, 0] - 0.5 * (p[:, :, 1] + p[:, :, 2])) / 255.0, 0.0, 1.0)
        zeros = np.zeros_like(dapi)
        m = ModalitySet(hema=dapi, dapi=dapi, lap2=zeros, marker=marker)
        return m, SegScores(fg_prob=dapi, pos_score=marker)


def infer(img: RasterImage, resolution: str, backend: Backend,
          tile_size: int = DEFAULT_TILE_SIZE, overlap: int = DEFAULT_OVERLAP,
          parallelism: int = 1) -> InferenceOutput:
    """Run a backend over an image: canonicalize scale, tile, stitch.

    The image is resampled to the canonical 20x-equivalent scale, the
    backend is applied to each tile's source rectangle, and outputs are
    stitched by copying core regions. Stitching is deterministic
    regardless of tile completion order.
    """
    if resolution not in RESOLUTION_SCALE:
        raise BadParameter(f"unknown resolution {resolution!r}; "
                           f"expected one of {sorted(RESOLUTION_SCALE)}")
    scale = RESOLUTION_SCALE[resolution]
    canonical = rescale(img, scale)
    h, w = canonical.height, canonical.width
    plan = plan_tiles(w, h, tile_size=tile_size, overlap=overlap)

    names = ("hema", "dapi", "lap2", "marker", "fg_prob", "pos_score")
    stitched = {name: np.zeros((h, w), dtype=np.float32) for name in names}

    def run_tile(pair):
        source, core = pair
        crop = RasterImage(np.ascontiguousarray(
            canonical.pixels[source.y0:source.y1, source.x0:source.x1]))
        try:
            modalities, seg = backend.run(crop)
        except Exception as exc:
            raise BackendFailure(
                f"backend failed on tile x=[{source.x0},{source.x1}) "
                f"y=[{source.y0},{source.y1}): {exc}") from exc
        if modalities.shape != (source.height, source.width):
            raise BackendFailure(
                f"backend returned shape {modalities.shape} for "
                f"{source.height}x{source.width} tile")
        planes = dict(modalities.items())
        planes["fg_prob"] = seg.fg_prob
        planes["pos_score"] = seg.pos_score
        oy, ox = core.y0 - source.y0, core.x0 - source.x0
        for name in names:
            stitched[name][core.y0:core.y1, core.x0:core.x1] = \
                planes[name][oy:oy + core.height, ox:ox + core.width]

    if parallelism > 1 and len(plan.tiles) > 1:
        # tiles write disjoint core slices, so concurrent stitching is safe
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for future in [pool.submit(run_tile, pair) for pair in plan.tiles]:
                future.result()
    else:
        for pair in plan.tiles:
            run_tile(pair)

    modalities = ModalitySet(hema=stitched["hema"], dapi=stitched["dapi"],
                             lap2=stitched["lap2"], marker=stitched["marker"])
    seg = SegScores(fg_prob=stitched["fg_prob"], pos_score=stitched["pos_score"])
    return InferenceOutput(modalities=modalities, seg=seg, canonical_scale=scale)


@dataclass
class Engine:
    """Backend plus tiling parameters, bundled for service wiring."""

    backend: Backend = field(default_factory=ReferenceBackend)
    tile_size: int = DEFAULT_TILE_SIZE
    overlap: int = DEFAULT_OVERLAP
    parallelism: int = 1

    def infer(self, img: RasterImage, resolution: str) -> InferenceOutput:
        return infer(img, resolution, self.backend, tile_size=self.tile_size,
                     overlap=self.overlap, parallelism=self.parallelism)
