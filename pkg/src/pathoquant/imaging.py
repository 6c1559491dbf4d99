"""Image decoding, encoding, resizing and optical-density conversion.

Pixel conventions used throughout the package:

* ``RasterImage`` wraps an ``(H, W, 3)`` uint8 array, RGB, row-major.
* "Planes" (normalized channels) are ``(H, W)`` float32 arrays in [0, 1].
* "OD planes" (optical density) are ``(H, W)`` float32 arrays, >= 0.

All functions here are pure; none touch the network or filesystem.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImage, ImageTooLarge, InvalidScale, UnsupportedFormat

Image.MAX_IMAGE_PIXELS = None  # size policy is enforced by ImageLimits, not PIL

# Formats decodable on the fast path; the extended path adds baseline TIFF.
FAST_FORMATS = ("png", "jpeg", "bmp")
EXTENDED_FORMATS = FAST_FORMATS + ("tiff",)

# Pixel modes we accept from the decoder. 16-bit/float/CMYK sources are out
# of scope and rejected as unsupported rather than silently converted.
_ACCEPTED_MODES = {"1", "L", "LA", "P", "PA", "RGB", "RGBA"}

# TIFF compression tags: none, LZW, Adobe deflate, deflate.
_TIFF_COMPRESSIONS = {1, 5, 8, 32946}


@dataclass(frozen=True)
class ImageLimits:
    """Upload size policy: hard cap on decode, preview thumbnail bound."""

    max_dim: int = 3000
    thumbnail_max_dim: int = 512

    def __post_init__(self):
        if not (self.max_dim >= self.thumbnail_max_dim >= 1):
            raise ValueError("require max_dim >= thumbnail_max_dim >= 1")


@dataclass(frozen=True)
class RasterImage:
    """Decoded 8-bit RGB raster, the pixel currency of the whole pipeline."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("pixels must be an (H, W, 3) uint8 array")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


def sniff_format(data: bytes) -> str | None:
    """Identify the container from magic bytes; None when unrecognized."""
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "png"
    if data.startswith(b"\xff\xd8\xff"):
        return "jpeg"
    if data.startswith(b"BM"):
        return "bmp"
    if data.startswith(b"II*\x00") or data.startswith(b"MM\x00*"):
        return "tiff"
    return None


def _flatten_to_rgb(im: Image.Image) -> Image.Image:
    """Convert any accepted PIL mode to RGB, compositing alpha over white."""
    if im.mode == "P" and "transparency" in im.info:
        im = im.convert("RGBA")
    if im.mode in ("RGBA", "LA", "PA"):
        rgba = im.convert("RGBA")
        background = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        im = Image.alpha_composite(background, rgba)
    return im.convert("RGB")


def decode_image(data: bytes, fast_path: bool = False,
                 limits: ImageLimits | None = None) -> RasterImage:
    """Decode image bytes to an RGB raster.

    ``fast_path`` restricts decoding to the common formats (PNG/JPEG/BMP);
    otherwise baseline TIFF is accepted as well. Grayscale sources are
    replicated across channels, alpha is composited over white, and all
    source metadata is discarded.
    """
    limits = limits or ImageLimits()
    if not data:
        raise UnsupportedFormat("empty byte stream")
    fmt = sniff_format(data)
    allowed = FAST_FORMATS if fast_path else EXTENDED_FORMATS
    if fmt is None or fmt not in allowed:
        raise UnsupportedFormat(f"unrecognized or unsupported image format "
                                f"(magic={data[:4]!r}, fast_path={fast_path})")
    try:
        im = Image.open(io.BytesIO(data))
        width, height = im.size
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImage(f"{fmt} header rejected: {exc}") from exc

    if width > limits.max_dim or height > limits.max_dim:
        raise ImageTooLarge(f"{width}x{height} exceeds limit "
                            f"{limits.max_dim}x{limits.max_dim}")
    if im.mode not in _ACCEPTED_MODES:
        raise UnsupportedFormat(f"unsupported pixel mode {im.mode!r}")
    if fmt == "tiff":
        compression = im.tag_v2.get(259, 1) if hasattr(im, "tag_v2") else 1
        if compression not in _TIFF_COMPRESSIONS:
            raise UnsupportedFormat(f"unsupported TIFF compression {compression}")

    try:
        im.load()
        im = _flatten_to_rgb(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptImage(f"{fmt} pixel data rejected: {exc}") from exc
    return RasterImage(np.asarray(im, dtype=np.uint8))


def encode_png(img: RasterImage) -> bytes:
    """Encode to PNG. Lossless: decode_image(encode_png(x)) == x."""
    buf = io.BytesIO()
    Image.fromarray(img.pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def encode_gray_png(plane_bytes: np.ndarray) -> bytes:
    """Encode an (H, W) uint8 array as an 8-bit grayscale PNG."""
    if plane_bytes.ndim != 2 or plane_bytes.dtype != np.uint8:
        raise ValueError("expected an (H, W) uint8 array")
    buf = io.BytesIO()
    Image.fromarray(plane_bytes, "L").save(buf, format="PNG")
    return buf.getvalue()


def resize_bilinear(array: np.ndarray, out_w: int, out_h: int,
                    _block_rows: int = 512) -> np.ndarray:
    """Bilinear resample of a uint8 array ((H, W) or (H, W, C)).

    Sampling is top-left aligned: destination pixel (x, y) reads source
    coordinate (x * W/out_w, y * H/out_h). With this convention an
    upscale by an integer factor followed by the inverse downscale is
    pixel-exact, which resolution canonicalization relies on.

    Output rows are computed in blocks to bound peak memory on large images.
    """
    in_h, in_w = array.shape[:2]
    if out_w == in_w and out_h == in_h:
        return array.copy()
    xs = np.arange(out_w, dtype=np.float64) * (in_w / out_w)
    ys = np.arange(out_h, dtype=np.float64) * (in_h / out_h)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, in_w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = (xs - x0)[None, :]
    fy_all = ys - y0
    if array.ndim == 3:
        fx = fx[..., None]
    out_shape = (out_h, out_w) + array.shape[2:]
    out = np.empty(out_shape, dtype=np.uint8)
    a = array.astype(np.float64, copy=False)
    for start in range(0, out_h, _block_rows):
        stop = min(start + _block_rows, out_h)
        ry0 = y0[start:stop, None]
        ry1 = y1[start:stop, None]
        fy = fy_all[start:stop, None]
        if array.ndim == 3:
            fy = fy[..., None]
        top = a[ry0, x0[None, :]] * (1 - fx) + a[ry0, x1[None, :]] * fx
        bottom = a[ry1, x0[None, :]] * (1 - fx) + a[ry1, x1[None, :]] * fx
        block = top * (1 - fy) + bottom * fy
        out[start:stop] = np.clip(np.rint(block), 0, 255).astype(np.uint8)
    return out


def resize_nearest(array: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor resample of an (H, W) array, top-left aligned."""
    in_h, in_w = array.shape[:2]
    xs = np.minimum((np.arange(out_w) * in_w) // out_w, in_w - 1)
    ys = np.minimum((np.arange(out_h) * in_h) // out_h, in_h - 1)
    return array[ys[:, None], xs[None, :]]


def rescale(img: RasterImage, factor: float) -> RasterImage:
    """Bilinear rescale by ``factor``; output dims are round(dim * factor)."""
    if not (factor > 0):
        raise InvalidScale(f"factor must be positive, got {factor}")
    if factor == 1.0:
        return img
    out_w = int(np.floor(img.width * factor + 0.5))
    out_h = int(np.floor(img.height * factor + 0.5))
    if out_w < 1 or out_h < 1:
        raise InvalidScale(f"factor {factor} collapses {img.width}x{img.height} to zero")
    return RasterImage(resize_bilinear(img.pixels, out_w, out_h))


def make_thumbnail(img: RasterImage, max_dim: int) -> RasterImage:
    """Shrink so the larger dimension equals max_dim; never upscales."""
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")
    w, h = img.width, img.height
    if max(w, h) <= max_dim:
        return img
    if w >= h:
        out_w = max_dim
        out_h = max(1, int(np.floor(h * max_dim / w + 0.5)))
    else:
        out_h = max_dim
        out_w = max(1, int(np.floor(w * max_dim / h + 0.5)))
    return RasterImage(resize_bilinear(img.pixels, out_w, out_h))


# Beer-Lambert with I0 = 255; the +1 numerator bias keeps OD finite at
# pixel value 0 (max representable OD is -log10(1/256) ~= 2.408).
_OD_LUT = (-np.log10((np.arange(256, dtype=np.float64) + 1.0) / 256.0)).astype(np.float32)


def rgb_to_od(img: RasterImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel optical density planes: OD_c = -log10((I_c + 1) / 256)."""
    od = _OD_LUT[img.pixels]
    return od[:, :, 0], od[:, :, 1], od[:, :, 2]


def quantize_plane(plane: np.ndarray) -> np.ndarray:
    """Map a [0, 1] float plane to uint8 by round(255 * v)."""
    return np.rint(np.asarray(plane, dtype=np.float64) * 255.0).astype(np.uint8)


def plane_from_bytes(plane_bytes: np.ndarray) -> np.ndarray:
    """Inverse of quantize_plane up to the 8-bit grid: bytes / 255.

    Returns float64 so that downstream threshold comparisons are the
    IEEE-double arithmetic a browser client reproduces bit-for-bit.
    """
    return plane_bytes.astype(np.float64) / 255.0
