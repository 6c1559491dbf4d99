"""Service configuration: JSON file plus PQ_* environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace

from .imaging import ImageLimits
from .stains import DEFAULT_DAB, DEFAULT_HEMA, StainMatrix


@dataclass(frozen=True)
class ServiceConfig:
    api_port: int = 8000
    web_port: int = 8001
    pool_size: int = 0          # 0 -> number of processor cores
    queue_capacity: int = 0     # 0 -> 2x pool size
    max_dim: int = 3000
    thumbnail_max_dim: int = 512
    stain_hema: tuple = DEFAULT_HEMA
    stain_dab: tuple = DEFAULT_DAB
    tile_size: int = 512
    tile_overlap: int = 64
    tile_parallelism: int = 1
    storage_backend: str = "local"
    storage_root: str = "pq-data"
    s3_endpoint: str = ""
    s3_bucket: str = ""
    s3_region: str = "us-east-1"
    s3_access_key: str = ""
    s3_secret_key: str = ""
    ttl_days: float = 7.0
    sample_dir: str = ""        # "" -> bundled sample images
    static_dir: str = ""        # "" -> built-in page
    api_url: str = ""           # webapp computes over loopback HTTP when set
    secret_key: str = ""        # "" -> random per process

    def effective_pool_size(self) -> int:
        return self.pool_size if self.pool_size > 0 else (os.cpu_count() or 1)

    def effective_queue_capacity(self) -> int:
        return self.queue_capacity if self.queue_capacity > 0 \
            else 2 * self.effective_pool_size()

    @property
    def limits(self) -> ImageLimits:
        return ImageLimits(max_dim=self.max_dim, thumbnail_max_dim=self.thumbnail_max_dim)

    @property
    def stains(self) -> StainMatrix:
        return StainMatrix(hema_vector=tuple(self.stain_hema),
                           dab_vector=tuple(self.stain_dab))


_ENV_PREFIX = "PQ_"

_INT_FIELDS = {"api_port", "web_port", "pool_size", "queue_capacity", "max_dim",
               "thumbnail_max_dim", "tile_size", "tile_overlap", "tile_parallelism"}
_FLOAT_FIELDS = {"ttl_days"}
_VECTOR_FIELDS = {"stain_hema", "stain_dab"}


def _coerce(name: str, raw):
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name in _VECTOR_FIELDS:
        if isinstance(raw, str):
            raw = [part for part in raw.replace(",", " ").split() if part]
        vec = tuple(float(x) for x in raw)
        if len(vec) != 3:
            raise ValueError(f"{name} needs exactly 3 components, got {len(vec)}")
        return vec
    return str(raw)


def load_config(path: str | None = None, env: dict | None = None) -> ServiceConfig:
    """Defaults, overlaid with a JSON config file, overlaid with PQ_* env vars."""
    env = os.environ if env is None else env
    cfg = ServiceConfig()
    names = {f.name for f in fields(ServiceConfig)}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
        unknown = set(document) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **{k: _coerce(k, v) for k, v in document.items()})
    overrides = {}
    for name in names:
        raw = env.get(_ENV_PREFIX + name.upper())
        if raw is not None:
            overrides[name] = _coerce(name, raw)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg
