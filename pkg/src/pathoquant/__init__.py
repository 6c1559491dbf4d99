"""pathoquant: self-hostable IHC slide quantification platform."""

__version__ = "0.1.0"

from .imaging import ImageLimits, RasterImage, decode_image, encode_png  # noqa: F401
from .stains import StainMatrix  # noqa: F401
from .engine import Engine, ReferenceBackend, NullBackend, infer  # noqa: F401
from .postprocess import PostprocessParams, QuantResult, postprocess  # noqa: F401
