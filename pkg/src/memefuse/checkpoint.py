"""Binary checkpoint files.

Layout: an ASCII header (magic line, counts line, metadata lines, one
manifest line per parameter with its shape), then the raw little-endian
float64 values in manifest order. Fusion checkpoints record the content
hashes of their frozen member checkpoints in the metadata, so the
frozen-member guarantee can be audited after the fact.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor

MAGIC = b"GFCKPT1"


def _as_arrays(params: dict) -> dict[str, np.ndarray]:
    return {k: (v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64))
            for k, v in params.items()}


def save_checkpoint(path: str, params: dict,
                    meta: dict[str, str] | None = None) -> None:
    arrays = _as_arrays(params)
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(f"{len(meta)} {len(arrays)}\n".encode())
        for key in sorted(meta):
            fh.write(f"{key}\t{meta[key]}\n".encode())
        for name in sorted(arrays):
            shape = ",".join(str(d) for d in arrays[name].shape)
            fh.write(f"{name}\t{shape}\n".encode())
        for name in sorted(arrays):
            fh.write(arrays[name].astype("<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        n_meta, n_params = map(int, fh.readline().split())
        meta = {}
        for _ in range(n_meta):
            key, value = fh.readline().decode().rstrip("\n").split("\t", 1)
            meta[key] = value
        manifest = []
        for _ in range(n_params):
            name, shape = fh.readline().decode().rstrip("\n").split("\t")
            dims = tuple(int(d) for d in shape.split(",") if d)
            manifest.append((name, dims))
        params = {}
        for name, dims in manifest:
            count = int(np.prod(dims)) if dims else 1
            buf = fh.read(count * 8)
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(dims).copy()
    return params, meta


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def average_checkpoints(first: dict[str, np.ndarray],
                        second: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Elementwise mean of two parameter sets with identical manifests."""
    a, b = _as_arrays(first), _as_arrays(second)
    if set(a) != set(b) or any(a[k].shape != b[k].shape for k in a):
        raise ValueError("checkpoint manifests do not match")
    return {k: (a[k] + b[k]) / 2.0 for k in a}
