"""Exception taxonomy shared across the platform.

Every error that can surface on the HTTP API carries a stable machine
``code`` so handlers can map exceptions to wire-level error bodies
without string matching.
"""


class PathoquantError(Exception):
    """Base class for all platform errors."""

    code = "internal"


class UnsupportedFormat(PathoquantError):
    """Input bytes match no supported image decoder."""

    code = "unsupported_format"


class CorruptImage(PathoquantError):
    """A supported decoder rejected the byte stream."""

    code = "corrupt_image"


class ImageTooLarge(PathoquantError):
    """Either image dimension exceeds the configured maximum."""

    code = "image_too_large"


class InvalidScale(PathoquantError):
    """Rescale factor is non-positive or collapses a dimension to zero."""

    code = "bad_parameter"


class DegenerateStains(PathoquantError):
    """Stain vectors are not usable for deconvolution (near-parallel or non-unit)."""

    code = "bad_parameter"


class InvalidTileGeometry(PathoquantError):
    """Tile size / overlap combination cannot cover the image."""

    code = "bad_parameter"


class BackendFailure(PathoquantError):
    """An inference backend failed; message carries the tile coordinates."""

    code = "internal"


class InvalidGate(PathoquantError):
    """Size gate maximum is below the minimum."""

    code = "bad_parameter"


class InvalidWindow(PathoquantError):
    """Channel window has lo >= hi."""

    code = "bad_parameter"


class DimensionMismatch(PathoquantError):
    """Raster and label-map dimensions are inconsistent."""

    code = "bad_parameter"


class BadParameter(PathoquantError):
    """Request parameter failed validation."""

    code = "bad_parameter"


class PoolSaturated(PathoquantError):
    """Job pool and queue are full; request must be shed."""

    code = "overloaded"


class KeyInvalid(PathoquantError):
    """Object key violates the key grammar."""

    code = "bad_parameter"


class NotFound(PathoquantError):
    """Requested object or record does not exist."""

    code = "not_found"


class StorageUnavailable(PathoquantError):
    """Object store backend I/O failed."""

    code = "internal"


_BY_CODE = {
    "unsupported_format": UnsupportedFormat,
    "corrupt_image": CorruptImage,
    "image_too_large": ImageTooLarge,
    "bad_parameter": BadParameter,
    "overloaded": PoolSaturated,
    "not_found": NotFound,
    "internal": PathoquantError,
}


def from_code(code: str, message: str) -> PathoquantError:
    """Rebuild a typed error from a wire-level error code."""
    return _BY_CODE.get(code, PathoquantError)(message)
