"""Flat parameter archive: one little-endian float64 payload per name plus a JSON manifest.

Archives are written with fixed timestamps and sorted entries so identical
parameters always produce identical bytes.
"""

from __future__ import annotations

import json
import os
import zipfile
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name: str) -> str:
    return f"params/{name}.f64"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], seed: int,
                    meta: dict | None = None) -> None:
    path = Path(path)
    manifest = {
        "seed": int(seed),
        "dtype": "<f8",
        "shapes": {k: list(np.shape(v)) for k, v in sorted(arrays.items())},
        "meta": meta or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(MANIFEST, date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
            zf.writestr(zipfile.ZipInfo(_entry(name), date_time=_EPOCH), data)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read(MANIFEST))
        arrays = {}
        for name, shape in manifest["shapes"].items():
            buf = zf.read(_entry(name))
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"{path}: payload of {name} has {arr.size} values, shape {shape}")
            arrays[name] = arr.reshape(shape)
    return arrays, manifest
