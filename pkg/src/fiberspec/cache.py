"""On-disk cache of ground-state records.

Layout: ``<root>/<model_hash>/<key>.npz`` with a ``<key>.json`` manifest
holding the payload checksum.  A checksum mismatch drops the entry so the
caller recomputes.  Total size is capped with least-recently-used eviction.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import threading
import time
from pathlib import Path

import numpy as np

from . import __version__
from .spectral import GroundStateRecord

log = logging.getLogger(__name__)

DEFAULT_CAP = 2 * 1024 ** 3
ENV_VAR = "FIBERSPEC_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fiberspec"


def record_key(xi, extra: str = "") -> str:
    xi = np.asarray(xi, dtype=float)
    text = ",".join(repr(float(x)) for x in xi) + "|" + extra
    return hashlib.sha256(text.encode()).hexdigest()[:24]


def _serialize(rec: GroundStateRecord) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, xi=rec.xi, energy=rec.energy, psi=rec.psi, cluster=rec.cluster,
             gap=rec.gap, energies=rec.energies, iterations=rec.iterations,
             residual=rec.residual, method=np.array(rec.method))
    return buf.getvalue()


def _deserialize(data: bytes) -> GroundStateRecord:
    with np.load(io.BytesIO(data)) as z:
        return GroundStateRecord(z["xi"], float(z["energy"]), z["psi"], z["cluster"],
                                 float(z["gap"]), z["energies"], int(z["iterations"]),
                                 float(z["residual"]), str(z["method"]))


class ResultCache:
    def __init__(self, root=None, cap_bytes: int = DEFAULT_CAP):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.cap_bytes = cap_bytes
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _paths(self, namespace, key):
        d = self.root / namespace
        return d / f"{key}.npz", d / f"{key}.json"

    def get(self, namespace: str, key: str) -> GroundStateRecord | None:
        payload, manifest = self._paths(namespace, key)
        try:
            meta = json.loads(manifest.read_text())
            data = payload.read_bytes()
        except (OSError, ValueError):
            self.misses += 1
            return None
        if meta.get("version") != __version__:
            self._drop(payload, manifest)
            self.misses += 1
            return None
        if hashlib.sha256(data).hexdigest() != meta.get("checksum"):
            log.warning("cache entry %s/%s failed its checksum; recomputing", namespace, key)
            self._drop(payload, manifest)
            self.misses += 1
            return None
        try:
            rec = _deserialize(data)
        except Exception:
            self._drop(payload, manifest)
            self.misses += 1
            return None
        with self._lock:
            meta["last_access"] = time.time()
            manifest.write_text(json.dumps(meta))
        self.hits += 1
        return rec

    def put(self, namespace: str, key: str, rec: GroundStateRecord) -> None:
        data = _serialize(rec)
        payload, manifest = self._paths(namespace, key)
        meta = {"hash": namespace, "key": key, "version": __version__,
                "timestamp": time.time(), "last_access": time.time(),
                "checksum": hashlib.sha256(data).hexdigest(), "size": len(data)}
        with self._lock:
            payload.parent.mkdir(parents=True, exist_ok=True)
            tmp = payload.with_suffix(".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, payload)
            manifest.write_text(json.dumps(meta))
            self._evict()

    def _drop(self, *paths):
        for p in paths:
            try:
                p.unlink()
            except OSError:
                pass

    def _evict(self):
        entries = []
        for m in self.root.glob("*/*.json"):
            try:
                meta = json.loads(m.read_text())
            except (OSError, ValueError):
                continue
            entries.append((meta.get("last_access", 0), meta.get("size", 0), m))
        total = sum(e[1] for e in entries)
        for _, size, m in sorted(entries, key=lambda e: e[0]):
            if total <= self.cap_bytes:
                break
            self._drop(m.with_suffix(".npz"), m)
            total -= size
