"""Object storage abstraction: local filesystem reference implementation
plus an S3-compatible remote client (AWS Signature v4 over plain HTTP(S)).

Keys are slash-separated paths of ``[A-Za-z0-9._-]+`` segments. The local
backend keeps payloads under ``<root>/data`` and content types under
``<root>/meta``; writes go through a temp file and an atomic rename so
readers never observe partial bytes.
"""

from __future__ import annotations

import datetime
import hashlib
import hmac
import os
import re
import tempfile
import urllib.parse
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .errors import KeyInvalid, NotFound, StorageUnavailable

MAX_KEY_LENGTH = 1024
MAX_OBJECT_BYTES = 256 * 1024 * 1024

_SEGMENT_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def validate_key(key: str) -> list[str]:
    """Check the key grammar; returns the path segments."""
    if not key or len(key) > MAX_KEY_LENGTH:
        raise KeyInvalid(f"key length must be in [1, {MAX_KEY_LENGTH}]")
    segments = key.split("/")
    for seg in segments:
        if seg in (".", "..") or not _SEGMENT_RE.match(seg):
            raise KeyInvalid(f"bad key segment {seg!r} in {key!r}")
    return segments


@dataclass(frozen=True)
class StoredObject:
    key: str
    data: bytes
    content_type: str


class ObjectStore:
    """Interface: put / get / delete / list with per-key atomicity."""

    def put(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> None:
        raise NotImplementedError

    def get(self, key: str) -> StoredObject:
        raise NotImplementedError

    def delete(self, key: str) -> None:
        raise NotImplementedError

    def list(self, prefix: str = "") -> list[str]:
        raise NotImplementedError

    def delete_prefix(self, prefix: str) -> None:
        for key in self.list(prefix):
            self.delete(key)


class LocalStore(ObjectStore):
    """Filesystem-backed store rooted at a directory."""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self._data = os.path.join(self.root, "data")
        self._meta = os.path.join(self.root, "meta")
        os.makedirs(self._data, exist_ok=True)
        os.makedirs(self._meta, exist_ok=True)

    def _path(self, base: str, key: str) -> str:
        segments = validate_key(key)
        path = os.path.realpath(os.path.join(base, *segments))
        if not path.startswith(os.path.realpath(base) + os.sep):
            raise KeyInvalid(f"key {key!r} escapes the storage root")
        return path

    def _atomic_write(self, path: str, data: bytes) -> None:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def put(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> None:
        if len(data) > MAX_OBJECT_BYTES:
            raise KeyInvalid(f"object exceeds {MAX_OBJECT_BYTES} byte cap")
        try:
            self._atomic_write(self._path(self._meta, key), content_type.encode("utf-8"))
            self._atomic_write(self._path(self._data, key), data)
        except OSError as exc:
            raise StorageUnavailable(f"put {key!r} failed: {exc}") from exc

    def get(self, key: str) -> StoredObject:
        path = self._path(self._data, key)
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise NotFound(f"no object at {key!r}")
        except OSError as exc:
            raise StorageUnavailable(f"get {key!r} failed: {exc}") from exc
        content_type = "application/octet-stream"
        try:
            with open(self._path(self._meta, key), "rb") as fh:
                content_type = fh.read().decode("utf-8")
        except OSError:
            pass
        return StoredObject(key=key, data=data, content_type=content_type)

    def delete(self, key: str) -> None:
        for base in (self._data, self._meta):
            try:
                os.unlink(self._path(base, key))
            except FileNotFoundError:
                pass
            except OSError as exc:
                raise StorageUnavailable(f"delete {key!r} failed: {exc}") from exc

    def list(self, prefix: str = "") -> list[str]:
        keys = []
        for dirpath, _dirnames, filenames in os.walk(self._data):
            rel = os.path.relpath(dirpath, self._data)
            for name in filenames:
                if name.startswith(".tmp-"):
                    continue
                key = name if rel == "." else "/".join(rel.split(os.sep) + [name])
                if key.startswith(prefix):
                    keys.append(key)
        return sorted(keys)


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hmac(key: bytes, msg: str) -> bytes:
    return hmac.new(key, msg.encode("utf-8"), hashlib.sha256).digest()


class S3Store(ObjectStore):
    """Minimal S3 REST client: PUT/GET/DELETE object + ListObjectsV2.

    Uses path-style addressing and AWS Signature v4, so it also works
    against S3-compatible servers (MinIO etc.). Requires ``requests``.
    """

    def __init__(self, endpoint: str, bucket: str, access_key: str,
                 secret_key: str, region: str = "us-east-1", session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.bucket = bucket
        self.access_key = access_key
        self.secret_key = secret_key
        self.region = region
        self.session = session or requests.Session()
        parsed = urllib.parse.urlparse(self.endpoint)
        self.host = parsed.netloc

    def _sign(self, method: str, path: str, query: dict[str, str],
              payload: bytes) -> dict[str, str]:
        now = datetime.datetime.now(datetime.timezone.utc)
        amz_date = now.strftime("%Y%m%dT%H%M%SZ")
        datestamp = now.strftime("%Y%m%d")
        payload_hash = _sha256_hex(payload)
        headers = {
            "host": self.host,
            "x-amz-content-sha256": payload_hash,
            "x-amz-date": amz_date,
        }
        signed_headers = ";".join(sorted(headers))
        canonical_headers = "".join(f"{k}:{headers[k]}\n" for k in sorted(headers))
        canonical_query = "&".join(
            f"{urllib.parse.quote(k, safe='')}={urllib.parse.quote(v, safe='')}"
            for k, v in sorted(query.items()))
        canonical_request = "\n".join([
            method, urllib.parse.quote(path), canonical_query,
            canonical_headers, signed_headers, payload_hash])
        scope = f"{datestamp}/{self.region}/s3/aws4_request"
        string_to_sign = "\n".join([
            "AWS4-HMAC-SHA256", amz_date, scope, _sha256_hex(canonical_request.encode())])
        k = _hmac(b"AWS4" + self.secret_key.encode("utf-8"), datestamp)
        k = _hmac(k, self.region)
        k = _hmac(k, "s3")
        k = _hmac(k, "aws4_request")
        signature = hmac.new(k, string_to_sign.encode("utf-8"), hashlib.sha256).hexdigest()
        headers["Authorization"] = (
            f"AWS4-HMAC-SHA256 Credential={self.access_key}/{scope}, "
            f"SignedHeaders={signed_headers}, Signature={signature}")
        return headers

    def _request(self, method: str, key: str | None, query: dict[str, str] | None = None,
                 payload: bytes = b"", content_type: str | None = None):
        query = query or {}
        path = f"/{self.bucket}" + (f"/{key}" if key else "")
        headers = self._sign(method, path, query, payload)
        if content_type:
            headers["Content-Type"] = content_type
        url = self.endpoint + path
        try:
            return self.session.request(method, url, params=query, data=payload or None,
                                        headers=headers, timeout=30)
        except Exception as exc:
            raise StorageUnavailable(f"S3 {method} {key!r} failed: {exc}") from exc

    def put(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> None:
        validate_key(key)
        if len(data) > MAX_OBJECT_BYTES:
            raise KeyInvalid(f"object exceeds {MAX_OBJECT_BYTES} byte cap")
        resp = self._request("PUT", key, payload=data, content_type=content_type)
        if resp.status_code not in (200, 201):
            raise StorageUnavailable(f"S3 put {key!r}: HTTP {resp.status_code}")

    def get(self, key: str) -> StoredObject:
        validate_key(key)
        resp = self._request("GET", key)
        if resp.status_code == 404:
            raise NotFound(f"no object at {key!r}")
        if resp.status_code != 200:
            raise StorageUnavailable(f"S3 get {key!r}: HTTP {resp.status_code}")
        return StoredObject(key=key, data=resp.content,
                            content_type=resp.headers.get("Content-Type",
                                                          "application/octet-stream"))

    def delete(self, key: str) -> None:
        validate_key(key)
        resp = self._request("DELETE", key)
        if resp.status_code not in (200, 204, 404):
            raise StorageUnavailable(f"S3 delete {key!r}: HTTP {resp.status_code}")

    def list(self, prefix: str = "") -> list[str]:
        keys: list[str] = []
        token: str | None = None
        while True:
            query = {"list-type": "2", "prefix": prefix}
            if token:
                query["continuation-token"] = token
            resp = self._request("GET", None, query=query)
            if resp.status_code != 200:
                raise StorageUnavailable(f"S3 list {prefix!r}: HTTP {resp.status_code}")
            root = ET.fromstring(resp.content)
            ns = ""
            if root.tag.startswith("{"):
                ns = root.tag[:root.tag.index("}") + 1]
            for contents in root.findall(f"{ns}Contents"):
                key_el = contents.find(f"{ns}Key")
                if key_el is not None and key_el.text:
                    keys.append(key_el.text)
            truncated = root.findtext(f"{ns}IsTruncated") == "true"
            token = root.findtext(f"{ns}NextContinuationToken")
            if not truncated or not token:
                break
        return sorted(keys)


def open_store(backend: str, **kwargs) -> ObjectStore:
    """Factory for configured store backends."""
    if backend == "local":
        return LocalStore(kwargs["root"])
    if backend == "s3":
        return S3Store(endpoint=kwargs["endpoint"], bucket=kwargs["bucket"],
                       access_key=kwargs["access_key"], secret_key=kwargs["secret_key"],
                       region=kwargs.get("region", "us-east-1"))
    raise ValueError(f"unknown storage backend {backend!r}")
