"""Stain deconvolution: Beer-Lambert unmixing of H-DAB brightfield images.

The RGB optical-density vector of each pixel is modeled as a nonnegative
combination of two unit stain vectors (hematoxylin and DAB). Unmixing is
the least-squares solve through the 2x3 pseudo-inverse of the stain
matrix, with negative concentrations clamped to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStains
from .imaging import RasterImage, rgb_to_od

# Standard published H-DAB optical-density vectors (Ruifrok & Johnston
# convention), normalized to unit length at load.
DEFAULT_HEMA = (0.650, 0.704, 0.286)
DEFAULT_DAB = (0.269, 0.568, 0.776)

_MIN_ANGLE_DEG = 1.0
_UNIT_TOL = 1e-6


def _normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise DegenerateStains("stain vector has zero norm")
    return v / n


@dataclass(frozen=True)
class StainMatrix:
    """Pair of unit stain vectors in OD space."""

    hema_vector: tuple[float, float, float] = DEFAULT_HEMA
    dab_vector: tuple[float, float, float] = DEFAULT_DAB

    def __post_init__(self):
        # raw tuples may be unnormalized; hema/dab normalize on access and
        # reject zero vectors, so independence is the only load-time check
        h, d = self.hema, self.dab
        angle = math.degrees(math.acos(np.clip(float(h @ d), -1.0, 1.0)))
        if angle < _MIN_ANGLE_DEG or angle > 180.0 - _MIN_ANGLE_DEG:
            raise DegenerateStains(f"stain vectors separated by {angle:.3f} degrees")

    @property
    def hema(self) -> np.ndarray:
        return _normalize(self.hema_vector)

    @property
    def dab(self) -> np.ndarray:
        return _normalize(self.dab_vector)

    def basis(self) -> np.ndarray:
        """3x2 matrix with unit stain vectors as columns."""
        return np.stack([self.hema, self.dab], axis=1)

    def pinv(self) -> np.ndarray:
        """2x3 pseudo-inverse solving OD -> (c_hema, c_dab) in least squares."""
        return np.linalg.pinv(self.basis())


def deconvolve_od(od: np.ndarray, stains: StainMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Unmix an (..., 3) optical-density array into two concentration arrays.

    Concentrations are clamped at zero; dtype follows the input.
    """
    od = np.asarray(od)
    conc = od @ stains.pinv().T.astype(od.dtype, copy=False)
    np.maximum(conc, 0, out=conc)
    return conc[..., 0], conc[..., 1]


def deconvolve(img: RasterImage, stains: StainMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel hematoxylin / DAB concentration planes for an RGB raster."""
    od_r, od_g, od_b = rgb_to_od(img)
    od = np.stack([od_r, od_g, od_b], axis=-1)
    return deconvolve_od(od, stains)


# Concentrations below this are indistinguishable from 8-bit quantization
# cross-talk (measured <= 0.007 for the default vectors) and must not be
# stretched to full scale by percentile normalization.
NOISE_FLOOR = 0.01


def normalize_concentration(plane: np.ndarray, p: float = 99.0,
                            noise_floor: float = NOISE_FLOOR) -> np.ndarray:
    """Scale a concentration plane into [0, 1] by its p-th percentile.

    The percentile is taken over values above the quantization noise
    floor; a plane with no such values maps to all zeros rather than
    amplifying noise to full scale.
    """
    if not (50.0 < p <= 100.0):
        raise ValueError(f"percentile must be in (50, 100], got {p}")
    plane = np.asarray(plane)
    signal = plane[plane > noise_floor]
    if signal.size == 0:
        return np.zeros(plane.shape, dtype=np.float32)
    scale = float(np.percentile(signal, p))
    return np.clip(plane / scale, 0.0, 1.0).astype(np.float32)


def stain_rgb(stains: StainMatrix, kind: str, concentration: float = 1.0) -> tuple[int, int, int]:
    """Forward-render the 8-bit RGB color of a pure stain at a concentration."""
    v = stains.hema if kind == "hematoxylin" else stains.dab
    vals = np.round(255.0 * np.power(10.0, -concentration * v)).astype(int)
    return tuple(int(x) for x in np.clip(vals, 0, 255))
