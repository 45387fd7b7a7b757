"""Binary cache for killed Green tables.

One file per (backend, measure hash, domain label, tolerance).  Layout:
an 8-byte little-endian length prefix, a UTF-8 JSON metadata block, then
the table values as little-endian float64.  Metadata (parameters and code
version) is validated on read; any mismatch or corruption is a miss.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import warnings

import numpy as np

from . import __version__
from .green import Domain, GreenTable


def measure_hash(descriptor: dict) -> str:
    blob = json.dumps(descriptor, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(blob.encode("utf-8")).hexdigest()[:16]


def element_to_jsonable(g):
    if isinstance(g, tuple):
        return [element_to_jsonable(c) for c in g]
    return g


def element_from_jsonable(v):
    if isinstance(v, list):
        return tuple(element_from_jsonable(c) for c in v)
    return v


def cache_key(backend: str, mhash: str, domain_label: str, tol: float) -> str:
    safe = f"{backend}|{mhash}|{domain_label}|{tol:.3e}"
    return hashlib.md5(safe.encode("utf-8")).hexdigest()[:24] + ".green"


def default_cache_dir() -> str:
    return os.environ.get("GREENLAB_CACHE", os.path.join(".", ".greenlab-cache"))


def save_table(cache_dir: str, backend: str, mhash: str, table: GreenTable) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    meta = {
        "version": __version__,
        "backend": backend,
        "measure_hash": mhash,
        "measure_name": table.measure_name,
        "domain_label": table.omega.label,
        "tol": table.tol,
        "laziness": table.laziness,
        "sources": [element_to_jsonable(s) for s in table.sources],
        "residuals": [float(r) for r in table.residuals],
        "n_values": int(table.values.shape[1]),
        "boundary_support": [element_to_jsonable(s) for s in table.omega.support],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = table.values.astype("<f8").tobytes()
    path = os.path.join(cache_dir,
                        cache_key(backend, mhash, table.omega.label, table.tol))
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(payload)
        os.replace(tmp, path)       # atomic publish
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_table(cache_dir: str, backend: str, mhash: str, domain: Domain,
               tol: float):
    """Rebind cached values to a freshly built domain; None on any miss."""
    path = os.path.join(cache_dir, cache_key(backend, mhash, domain.label, tol))
    if not os.path.exists(path):
        return None
    try:
        with open(path, "rb") as fh:
            (mlen,) = struct.unpack("<Q", fh.read(8))
            meta = json.loads(fh.read(mlen).decode("utf-8"))
            payload = fh.read()
        if meta["version"] != __version__:
            return None
        if meta["backend"] != backend or meta["measure_hash"] != mhash:
            return None
        if meta["domain_label"] != domain.label or meta["tol"] != tol:
            return None
        sources = [element_from_jsonable(s) for s in meta["sources"]]
        vals = np.frombuffer(payload, dtype="<f8")
        expect = len(sources) * meta["n_values"]
        if len(vals) != expect or meta["n_values"] != len(domain):
            warnings.warn(f"corrupt cache file {path}; recomputing")
            return None
        values = vals.reshape(len(sources), meta["n_values"]).copy()
        return GreenTable(domain, sources, values,
                          np.array(meta["residuals"]), meta["laziness"],
                          meta["measure_name"], tol)
    except Exception:
        warnings.warn(f"unreadable cache file {path}; recomputing")
        return None
