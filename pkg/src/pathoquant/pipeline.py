"""End-to-end quantification pipeline shared by the API, web app, and CLI.

The inference scores are quantized to the 8-bit wire grid *before*
post-processing, and the same bytes are packed into the ``seg_raw``
image. A client that decodes seg_raw and reruns post-processing with the
same parameters therefore reproduces the server's scoring exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Engine, InferenceOutput, SegScores
from .errors import BadParameter, DimensionMismatch
from .imaging import (RasterImage, encode_gray_png, encode_png, plane_from_bytes,
                      quantize_plane, resize_bilinear)
from .postprocess import (CellRecord, LabelMap, PostprocessParams, QuantResult,
                          postprocess, render_overlay, render_seg_image)

MODALITY_NAMES = ("hema", "dapi", "lap2", "marker")
FULL_IMAGE_SET = MODALITY_NAMES + ("seg", "overlay", "seg_raw")
SLIM_IMAGE_SET = ("seg",)


def pack_seg_raw(seg: SegScores) -> RasterImage:
    """Pack quantized scores into an RGB raster: R=positivity, B=foreground."""
    pos = quantize_plane(seg.pos_score)
    fg = quantize_plane(seg.fg_prob)
    rgb = np.zeros(pos.shape + (3,), dtype=np.uint8)
    rgb[:, :, 0] = pos
    rgb[:, :, 2] = fg
    return RasterImage(rgb)


def unpack_seg_raw(img: RasterImage) -> SegScores:
    """Recover SegScores from a seg_raw raster (exact on the 8-bit grid)."""
    return SegScores(fg_prob=plane_from_bytes(img.pixels[:, :, 2]),
                     pos_score=plane_from_bytes(img.pixels[:, :, 0]))


def quantize_scores(seg: SegScores) -> SegScores:
    """Snap scores to the 8-bit grid the wire format carries."""
    return SegScores(fg_prob=plane_from_bytes(quantize_plane(seg.fg_prob)),
                     pos_score=plane_from_bytes(quantize_plane(seg.pos_score)))


@dataclass
class PipelineResult:
    """Everything a caller may render or persist after one inference run."""

    original: RasterImage
    inference: InferenceOutput
    seg_q: SegScores = field(repr=False)
    label_map: LabelMap = field(repr=False)
    cells: list[CellRecord] = field(repr=False)
    scoring: QuantResult = field(default=None)
    params: PostprocessParams = field(default=None)

    def __post_init__(self):
        if self.scoring is None or self.params is None:
            raise ValueError("scoring and params are required")

    @property
    def canonical_scale(self) -> float:
        return self.inference.canonical_scale

    def render(self, name: str) -> bytes:
        """Render one named result image to PNG bytes.

        Modality planes are 8-bit grayscale resampled to the original
        upload's dimensions; seg and seg_raw live at canonical scale;
        overlay is drawn over the original.
        """
        if name in MODALITY_NAMES:
            plane = dict(self.inference.modalities.items())[name]
            gray = quantize_plane(plane)
            if gray.shape != (self.original.height, self.original.width):
                gray = resize_bilinear(gray, self.original.width, self.original.height)
            return encode_gray_png(gray)
        if name == "seg":
            return encode_png(render_seg_image(self.label_map, self.cells))
        if name == "overlay":
            return encode_png(render_overlay(self.original, self.label_map,
                                             self.cells, self.canonical_scale))
        if name == "seg_raw":
            return encode_png(pack_seg_raw(self.seg_q))
        raise KeyError(name)

    def render_set(self, slim: bool = False) -> dict[str, bytes]:
        names = SLIM_IMAGE_SET if slim else FULL_IMAGE_SET
        return {name: self.render(name) for name in names}


def run_pipeline(img: RasterImage, resolution: str, engine: Engine,
                 params: PostprocessParams | None = None) -> PipelineResult:
    """Infer, quantize to the wire grid, then post-process."""
    params = params or PostprocessParams()
    inference = engine.infer(img, resolution)
    seg_q = quantize_scores(inference.seg)
    label_map, cells, scoring = postprocess(seg_q, params)
    return PipelineResult(original=img, inference=inference, seg_q=seg_q,
                          label_map=label_map, cells=cells, scoring=scoring,
                          params=params)


def adjust_from_seg_raw(seg_raw: RasterImage, params: PostprocessParams,
                        original: RasterImage | None = None
                        ) -> tuple[dict[str, bytes], QuantResult]:
    """Re-run post-processing on a decoded seg_raw image.

    Returns the re-rendered ``seg`` image (plus ``overlay`` when the
    original is supplied) and the new scoring.
    """
    scores = unpack_seg_raw(seg_raw)
    label_map, cells, scoring = postprocess(scores, params)
    images = {"seg": encode_png(render_seg_image(label_map, cells))}
    if original is not None:
        lh, lw = label_map.shape
        scale = _snap_scale(lw / original.width)
        images["overlay"] = encode_png(render_overlay(original, label_map, cells, scale))
    return images, scoring


def _snap_scale(ratio: float) -> float:
    """Map a seg_raw/original dimension ratio onto a canonical scale."""
    candidates = (0.5, 1.0, 2.0)
    best = min(candidates, key=lambda s: abs(s - ratio))
    if abs(best - ratio) > 0.05:
        raise DimensionMismatch(f"seg_raw/original ratio {ratio:.3f} matches "
                                f"no canonical scale {candidates}")
    return best


def parse_postprocess_params(args: dict) -> PostprocessParams:
    """Build PostprocessParams from string-valued request parameters."""
    defaults = PostprocessParams()
    values = {}
    for name, default in (("seg_threshold", defaults.seg_threshold),
                          ("size_gate_min", defaults.size_gate_min),
                          ("marker_threshold", defaults.marker_threshold)):
        raw = args.get(name)
        if raw is None or raw == "":
            values[name] = default
        else:
            try:
                values[name] = float(raw)
            except ValueError:
                raise BadParameter(f"{name} must be a number, got {raw!r}")
    raw_max = args.get("size_gate_max")
    if raw_max is None or raw_max == "":
        values["size_gate_max"] = None
    else:
        try:
            values["size_gate_max"] = float(raw_max)
        except ValueError:
            raise BadParameter(f"size_gate_max must be a number, got {raw_max!r}")
    return PostprocessParams(**values)
