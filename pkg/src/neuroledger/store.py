"""Content-addressed store for encrypted blobs.

Objects live under objects/<first two hex chars>/<full 64-char digest>.
The key is the SHA-256 of the stored bytes, which makes puts idempotent
and lets every read verify integrity before returning. The store only
ever holds ciphertext; it has no notion of plaintext or keys, and there
is no delete.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .crypto import sha256

DEFAULT_MAX_BYTES = 64 * 1024 * 1024


class StoreError(Exception):
    pass


class BlobTooLarge(StoreError):
    pass


class BlobNotFound(StoreError):
    pass


class BlobCorrupt(StoreError):
    """On-disk bytes no longer hash to the key."""


def _check_key(key: str) -> str:
    if not isinstance(key, str) or len(key) != 64:
        raise StoreError(f"malformed storage key: {key!r}")
    try:
        bytes.fromhex(key)
    except ValueError:
        raise StoreError(f"malformed storage key: {key!r}") from None
    if key != key.lower():
        raise StoreError("storage keys are lowercase hex")
    return key


class BlobStore:
    def __init__(self, root: str | Path, max_bytes: int = DEFAULT_MAX_BYTES):
        self.root = Path(root)
        self.max_bytes = max_bytes
        (self.root / "objects").mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / "objects" / key[:2] / key

    def put(self, blob: bytes) -> str:
        if len(blob) > self.max_bytes:
            raise BlobTooLarge(f"blob of {len(blob)} bytes exceeds limit {self.max_bytes}")
        key = sha256(blob).hex()
        path = self._path(key)
        if path.exists():
            return key
        path.parent.mkdir(parents=True, exist_ok=True)
        # temp file + atomic rename so concurrent identical puts are safe
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".put-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
        return key

    def has(self, key: str) -> bool:
        return self._path(_check_key(key)).exists()

    def get(self, key: str) -> bytes:
        key = _check_key(key)
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            raise BlobNotFound(key) from None
        if sha256(blob).hex() != key:
            raise BlobCorrupt(key)
        return blob

    def keys(self) -> list[str]:
        found = []
        objects = self.root / "objects"
        for shard in sorted(objects.iterdir()) if objects.exists() else []:
            if not shard.is_dir():
                continue
            for path in sorted(shard.iterdir()):
                if not path.name.startswith("."):
                    found.append(path.name)
        return found

    def verify_all(self) -> list[tuple[str, str]]:
        """Re-hash every object; returns (key, "ok" | "corrupt") pairs."""
        results = []
        for key in self.keys():
            blob = self._path(key).read_bytes()
            results.append((key, "ok" if sha256(blob).hex() == key else "corrupt"))
        return results
