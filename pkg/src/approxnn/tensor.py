"""Dense float32 tensors, emulated half precision, and the on-disk weight archive.

Tensors are plain numpy float32 arrays in NCHW order (lower-rank arrays get
leading size-1 extents when a rank-4 view is needed). Half precision is
emulated by round-tripping values through IEEE binary16 at operation
boundaries; storage and accumulation stay 32-bit.
"""

from __future__ import annotations

import json
import os

import numpy as np

# Largest finite binary16 magnitude. Conversions that would overflow to
# infinity clamp here instead, so tensors stay finite end to end.
FP16_MAX = 65504.0

ARCHIVE_VERSION = "wa-1"
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "weights.bin"


class ArchiveError(ValueError):
    """A weight archive is malformed or inconsistent with its manifest."""


def as_tensor(values) -> np.ndarray:
    """Coerce nested lists / arrays to a float32 ndarray."""
    return np.asarray(values, dtype=np.float32)


def as_nchw(t: np.ndarray) -> np.ndarray:
    """View ``t`` as rank 4 by prepending size-1 extents. Rank > 4 is rejected."""
    if t.ndim > 4:
        raise ValueError(f"tensor rank {t.ndim} exceeds 4 (shape {t.shape})")
    return t.reshape((1,) * (4 - t.ndim) + t.shape)


def quantize(t: np.ndarray) -> np.ndarray:
    """Round every element through binary16 and widen back to float32.

    Uses round-to-nearest-even; magnitudes beyond the binary16 finite range
    clamp to +-FP16_MAX (including infinities), NaN propagates. Values below
    the subnormal range flush toward zero per IEEE conversion rules.
    """
    x = np.asarray(t, dtype=np.float32)
    # Pre-clipping at +-FP16_MAX is exact: every magnitude that survives the
    # clip rounds to a finite binary16, and everything above would have
    # rounded to FP16_MAX or overflowed.
    clipped = np.clip(x, -FP16_MAX, FP16_MAX)
    return clipped.astype(np.float16).astype(np.float32)


def fp16_round_trip(x: float) -> float:
    """Scalar form of :func:`quantize`."""
    return float(quantize(np.float32(x)))


def save_archive(tensors, path, meta=None) -> None:
    """Write named float32 tensors to ``path`` (a directory).

    Layout: ``manifest.json`` describing entries (name, shape, byte offset,
    element count) plus ``weights.bin`` holding the little-endian float32
    payloads back to back, ordered by entry name.
    """
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float32))
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"entry '{name}' contains non-finite values")
        payload = arr.astype("<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": [int(d) for d in arr.shape],
                "offset": offset,
                "numel": int(arr.size),
            }
        )
        blobs.append(payload)
        offset += len(payload)
    manifest = {
        "format_version": ARCHIVE_VERSION,
        "byte_order": "little",
        "blob": BLOB_NAME,
        "entries": entries,
    }
    if meta is not None:
        manifest["meta"] = meta
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(blobs))


def load_archive(path):
    """Load an archive directory back into a dict of float32 arrays.

    Raises :class:`ArchiveError` naming the offending entry on any shape,
    offset, or version mismatch.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ArchiveError(f"missing manifest: {manifest_path}")
    except json.JSONDecodeError as err:
        raise ArchiveError(f"malformed manifest {manifest_path}: {err}")

    version = manifest.get("format_version")
    if version != ARCHIVE_VERSION:
        raise ArchiveError(f"unsupported archive version {version!r} (expected {ARCHIVE_VERSION!r})")
    blob_name = manifest.get("blob", BLOB_NAME)
    with open(os.path.join(path, blob_name), "rb") as fh:
        blob = fh.read()

    tensors = {}
    for entry in manifest.get("entries", []):
        name = entry.get("name", "<unnamed>")
        shape = tuple(entry["shape"])
        numel = int(entry["numel"])
        offset = int(entry["offset"])
        expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if expected != numel:
            raise ArchiveError(
                f"entry '{name}': shape {list(shape)} implies {expected} elements, manifest says {numel}"
            )
        end = offset + 4 * numel
        if end > len(blob):
            raise ArchiveError(
                f"entry '{name}': blob slice [{offset}:{end}) exceeds blob size {len(blob)}"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=numel, offset=offset)
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"entry '{name}' contains non-finite values")
        tensors[name] = arr.astype(np.float32).reshape(shape)
    return tensors


def archive_meta(path):
    """Return the manifest's optional ``meta`` block (or ``{}``)."""
    with open(os.path.join(path, MANIFEST_NAME)) as fh:
        return json.load(fh).get("meta", {})
