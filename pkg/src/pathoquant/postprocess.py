"""Segmentation post-processing and IHC scoring.

Turns per-pixel scores into labeled cells, applies the user-adjustable
threshold / size gate, classifies each cell against the marker
threshold, and computes the positivity score. Everything here is a pure
function so the browser preview can reimplement it bit-for-bit: masks
compare score >= threshold in IEEE doubles, and per-cell means are
integer byte sums divided once, so any client following the same recipe
reproduces the counts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .engine import ModalitySet, SegScores
from .errors import DimensionMismatch, InvalidGate, InvalidWindow, BadParameter
from .imaging import RasterImage, resize_nearest

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

POSITIVE_COLOR = (255, 0, 0)
NEGATIVE_COLOR = (0, 0, 255)


@dataclass(frozen=True)
class PostprocessParams:
    """User-adjustable segmentation and classification knobs.

    Areas are in squared pixels at the canonical processing scale.
    """

    seg_threshold: float = 0.5
    size_gate_min: float = 20.0
    size_gate_max: float | None = None
    marker_threshold: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.seg_threshold <= 1.0):
            raise BadParameter(f"seg_threshold must be in [0,1], got {self.seg_threshold}")
        if not (0.0 <= self.marker_threshold <= 1.0):
            raise BadParameter(f"marker_threshold must be in [0,1], got {self.marker_threshold}")
        if self.size_gate_min < 0:
            raise BadParameter(f"size_gate_min must be >= 0, got {self.size_gate_min}")
        if self.size_gate_max is not None and self.size_gate_max < self.size_gate_min:
            raise InvalidGate(f"size_gate_max {self.size_gate_max} < "
                              f"size_gate_min {self.size_gate_min}")


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel cell labels; 0 is background, labels are 1..count."""

    labels: np.ndarray = field(repr=False)
    count: int

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("labels must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class CellRecord:
    id: int
    area: int
    centroid: tuple[float, float]  # (x, y)
    mean_pos_score: float
    cls: str  # "positive" | "negative"


@dataclass(frozen=True)
class QuantResult:
    num_total: int
    num_pos: int
    percent_pos: float

    def as_dict(self) -> dict:
        return {"num_total": self.num_total, "num_pos": self.num_pos,
                "percent_pos": self.percent_pos}


@dataclass(frozen=True)
class ChannelSetting:
    enabled: bool = True
    window: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class ChannelView:
    """Display state of the multiplex composite: marker->R, lap2->G, dapi->B."""

    marker: ChannelSetting = ChannelSetting()
    dapi: ChannelSetting = ChannelSetting()
    lap2: ChannelSetting = ChannelSetting()


def threshold_mask(fg_prob: np.ndarray, t: float) -> np.ndarray:
    """Foreground mask: score >= t (so t = 0 keeps everything)."""
    if not (0.0 <= t <= 1.0):
        raise BadParameter(f"threshold must be in [0,1], got {t}")
    return np.asarray(fg_prob) >= t


def _renumber_by_first_pixel(labels: np.ndarray, count: int) -> np.ndarray:
    """Remap labels to 1..count in raster-scan order of first appearance."""
    if count == 0:
        return labels
    flat = labels.ravel()
    values, first = np.unique(flat, return_index=True)
    nonzero = values != 0
    values, first = values[nonzero], first[nonzero]
    remap = np.zeros(int(values.max()) + 1, dtype=labels.dtype)
    remap[values[np.argsort(first, kind="stable")]] = \
        np.arange(1, len(values) + 1, dtype=labels.dtype)
    return remap[labels]


def label_components(mask: np.ndarray) -> LabelMap:
    """8-connected component labeling, numbered in raster-scan order."""
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    labels = labels.astype(np.int32, copy=False)
    return LabelMap(labels=_renumber_by_first_pixel(labels, count), count=int(count))


def size_gate(lm: LabelMap, min_area: float, max_area: float | None = None) -> LabelMap:
    """Drop components outside [min_area, max_area]; renumber survivors."""
    if min_area < 0:
        raise BadParameter(f"min_area must be >= 0, got {min_area}")
    if max_area is not None and max_area < min_area:
        raise InvalidGate(f"max_area {max_area} < min_area {min_area}")
    if lm.count == 0:
        return lm
    areas = np.bincount(lm.labels.ravel(), minlength=lm.count + 1)
    keep = areas >= min_area
    if max_area is not None:
        keep &= areas <= max_area
    keep[0] = False
    remap = np.zeros(lm.count + 1, dtype=lm.labels.dtype)
    kept_ids = np.flatnonzero(keep)
    remap[kept_ids] = np.arange(1, len(kept_ids) + 1, dtype=lm.labels.dtype)
    return LabelMap(labels=remap[lm.labels], count=int(len(kept_ids)))


def classify_cells(lm: LabelMap, pos_score: np.ndarray,
                   marker_threshold: float) -> list[CellRecord]:
    """One record per label with area, centroid, and mean positivity.

    The mean is computed on the 8-bit wire grid (integer byte sums over
    the component, one division) so a browser client summing the same
    bytes gets a bit-identical value.
    """
    if lm.shape != np.asarray(pos_score).shape:
        raise DimensionMismatch(f"label map {lm.shape} vs pos_score "
                                f"{np.asarray(pos_score).shape}")
    if lm.count == 0:
        return []
    flat = lm.labels.ravel()
    n = lm.count + 1
    areas = np.bincount(flat, minlength=n)
    h, w = lm.shape
    ys, xs = np.divmod(np.arange(flat.size, dtype=np.int64), w)
    sum_x = np.bincount(flat, weights=xs, minlength=n)
    sum_y = np.bincount(flat, weights=ys, minlength=n)
    score_bytes = np.rint(np.asarray(pos_score, dtype=np.float64) * 255.0)
    byte_sums = np.bincount(flat, weights=score_bytes.ravel(), minlength=n)

    cells = []
    for label in range(1, n):
        area = int(areas[label])
        mean = float(byte_sums[label]) / (255.0 * area)
        cells.append(CellRecord(
            id=label,
            area=area,
            centroid=(float(sum_x[label]) / area, float(sum_y[label]) / area),
            mean_pos_score=mean,
            cls="positive" if mean >= marker_threshold else "negative",
        ))
    return cells


def quantify(cells: list[CellRecord]) -> QuantResult:
    """Positivity score: positive cells over total, as a percentage."""
    num_total = len(cells)
    num_pos = sum(1 for c in cells if c.cls == "positive")
    percent = 100.0 * num_pos / num_total if num_total > 0 else 0.0
    return QuantResult(num_total=num_total, num_pos=num_pos, percent_pos=percent)


def postprocess(seg: SegScores, params: PostprocessParams) -> tuple[LabelMap, list[CellRecord], QuantResult]:
    """threshold -> label -> size gate -> classify -> quantify."""
    mask = threshold_mask(seg.fg_prob, params.seg_threshold)
    lm = label_components(mask)
    lm = size_gate(lm, params.size_gate_min, params.size_gate_max)
    cells = classify_cells(lm, seg.pos_score, params.marker_threshold)
    return lm, cells, quantify(cells)


def _class_lut(cells: list[CellRecord], count: int) -> np.ndarray:
    """Label -> RGB color table; row 0 (background) stays black."""
    lut = np.zeros((count + 1, 3), dtype=np.uint8)
    for c in cells:
        lut[c.id] = POSITIVE_COLOR if c.cls == "positive" else NEGATIVE_COLOR
    return lut


def render_seg_image(lm: LabelMap, cells: list[CellRecord]) -> RasterImage:
    """Solid classification raster: positive red, negative blue, bg black."""
    return RasterImage(_class_lut(cells, lm.count)[lm.labels])


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbor carrying a different label."""
    boundary = np.zeros(labels.shape, dtype=bool)
    fg = labels > 0
    boundary[:-1, :] |= fg[:-1, :] & (labels[:-1, :] != labels[1:, :])
    boundary[1:, :] |= fg[1:, :] & (labels[1:, :] != labels[:-1, :])
    boundary[:, :-1] |= fg[:, :-1] & (labels[:, :-1] != labels[:, 1:])
    boundary[:, 1:] |= fg[:, 1:] & (labels[:, 1:] != labels[:, :-1])
    # image border pixels of a cell are outlines too
    boundary[0, :] |= fg[0, :]
    boundary[-1, :] |= fg[-1, :]
    boundary[:, 0] |= fg[:, 0]
    boundary[:, -1] |= fg[:, -1]
    return boundary


def render_overlay(original: RasterImage, lm: LabelMap, cells: list[CellRecord],
                   canonical_scale: float) -> RasterImage:
    """Draw classified cell outlines over the original-resolution image."""
    lh, lw = lm.shape
    expect_w = int(np.floor(original.width * canonical_scale + 0.5))
    expect_h = int(np.floor(original.height * canonical_scale + 0.5))
    if abs(expect_w - lw) > 1 or abs(expect_h - lh) > 1:
        raise DimensionMismatch(
            f"label map {lw}x{lh} does not match original "
            f"{original.width}x{original.height} at scale {canonical_scale}")
    labels = lm.labels
    if (lh, lw) != (original.height, original.width):
        labels = resize_nearest(labels, original.width, original.height)
    boundary = _boundary_mask(labels)
    out = original.pixels.copy()
    out[boundary] = _class_lut(cells, lm.count)[labels[boundary]]
    return RasterImage(out)


def _window(plane: np.ndarray, setting: ChannelSetting) -> np.ndarray:
    if not setting.enabled:
        return np.zeros(plane.shape, dtype=np.uint8)
    lo, hi = setting.window
    if not (0.0 <= lo < hi <= 1.0):
        raise InvalidWindow(f"window must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})")
    scaled = np.clip((np.asarray(plane, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(scaled * 255.0).astype(np.uint8)


def composite_multiplex(m: ModalitySet, view: ChannelView) -> RasterImage:
    """Pseudo-color composite: marker->R, lap2->G, dapi->B, per-channel windows."""
    rgb = np.stack([_window(m.marker, view.marker),
                    _window(m.lap2, view.lap2),
                    _window(m.dapi, view.dapi)], axis=-1)
    return RasterImage(rgb)
