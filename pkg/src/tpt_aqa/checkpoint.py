"""Flat parameter archive: name -> little-endian float64 array.

Stored as an uncompressed ``.npz`` with two reserved entries, the format
version and a JSON metadata string.
"""

import json

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1
_VERSION_KEY = "__format_version__"
_META_KEY = "__metadata__"


def save_checkpoint(path, params, metadata=None):
    """Write ``params`` (mapping name -> array or Tensor) to ``path``."""
    arrays = {}
    for name, value in params.items():
        if name.startswith("__"):
            raise CheckpointError(f"reserved parameter name {name!r}")
        data = getattr(value, "data", value)
        arrays[name] = np.asarray(data, dtype="<f8").copy(order="C")
    arrays[_VERSION_KEY] = np.array(FORMAT_VERSION, dtype="<i8")
    arrays[_META_KEY] = np.array(json.dumps(metadata or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(params, metadata)`` from an archive written by :func:`save_checkpoint`."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if _VERSION_KEY not in archive.files:
            raise CheckpointError(f"{path} has no format version header")
        version = int(archive[_VERSION_KEY])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        metadata = json.loads(str(archive[_META_KEY]))
        params = {
            k: archive[k].astype(np.float64)
            for k in archive.files
            if k not in (_VERSION_KEY, _META_KEY)
        }
    return params, metadata


def assign(named_params, arrays, strict=True):
    """Copy ``arrays`` into the Parameter objects in ``named_params``."""
    missing = set(named_params) - set(arrays)
    extra = set(arrays) - set(named_params)
    if strict and (missing or extra):
        raise CheckpointError(
            f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    for name, p in named_params.items():
        if name not in arrays:
            continue
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {arrays[name].shape} != model shape {p.data.shape}"
            )
        p.data[...] = arrays[name]
