"""Field format: raw little-endian samples plus a JSON sidecar.

``<stem>.raw`` holds the samples (complex stored interleaved re, im) in
slice-major, row-major order; ``<stem>.json`` holds::

    {"width": W, "height": H, "slices": S, "dtype": "f32|f64|c64|c128",
     "spacing_mm": [dx, dy], "slice_thickness_mm": t,
     "domain": "image|kspace|hybrid"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ComplexSlice, Domain, RealSlice, Volume
from .errors import DataError

DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "c64": np.dtype("<c8"),
    "c128": np.dtype("<c16"),
}


class FieldFormatError(DataError):
    pass


@dataclass(frozen=True)
class FieldMeta:
    width: int
    height: int
    slices: int
    dtype: str
    spacing_mm: tuple[float, float] = (1.0, 1.0)
    slice_thickness_mm: float = 1.0
    domain: str = "image"

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["spacing_mm"] = list(self.spacing_mm)
        return d


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".raw", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".raw"), p.with_suffix(".json")


def _default_dtype(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "c64" if arr.dtype == np.complex64 else "c128"
    return "f32" if arr.dtype == np.float32 else "f64"


def save_field(path, data, *, dtype=None, spacing=None, slice_thickness=None, domain=None) -> Path:
    """Write a 2-D or 3-D array (or slice/volume container) in field format.

    Returns the path of the sidecar.
    """
    if isinstance(data, (RealSlice, ComplexSlice, Volume)):
        spacing = spacing or data.spacing
        domain = domain or getattr(data, "domain", Domain.IMAGE)
        if isinstance(data, Volume):
            slice_thickness = slice_thickness or data.slice_thickness
            arr = data.to_array()
        else:
            arr = data.data
    else:
        arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FieldFormatError(f"field data must be 2-D or 3-D, got shape {arr.shape}")
    dtype = dtype or _default_dtype(arr)
    if dtype not in DTYPES:
        raise FieldFormatError(f"unknown dtype {dtype!r}")
    if np.iscomplexobj(arr) and dtype.startswith("f"):
        raise FieldFormatError("complex data needs a complex dtype")
    domain = Domain(domain or Domain.IMAGE).value
    meta = FieldMeta(
        width=int(arr.shape[2]),
        height=int(arr.shape[1]),
        slices=int(arr.shape[0]),
        dtype=dtype,
        spacing_mm=tuple(float(s) for s in (spacing or (1.0, 1.0))),
        slice_thickness_mm=float(slice_thickness or 1.0),
        domain=domain,
    )
    raw_path, json_path = _paths(path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes())
    json_path.write_text(json.dumps(meta.to_json(), indent=2, sort_keys=True) + "\n")
    return json_path


def load_field(path) -> tuple[np.ndarray, FieldMeta]:
    """Read a field-format pair; returns a ``(slices, height, width)`` array."""
    raw_path, json_path = _paths(path)
    try:
        info = json.loads(json_path.read_text())
        meta = FieldMeta(
            width=int(info["width"]),
            height=int(info["height"]),
            slices=int(info["slices"]),
            dtype=str(info["dtype"]),
            spacing_mm=tuple(info.get("spacing_mm", (1.0, 1.0))),
            slice_thickness_mm=float(info.get("slice_thickness_mm", 1.0)),
            domain=str(info.get("domain", "image")),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"bad sidecar {json_path}: {exc}") from exc
    if meta.dtype not in DTYPES:
        raise FieldFormatError(f"unknown dtype {meta.dtype!r}")
    dt = DTYPES[meta.dtype]
    blob = raw_path.read_bytes()
    expected = meta.width * meta.height * meta.slices * dt.itemsize
    if len(blob) != expected:
        raise FieldFormatError(f"{raw_path}: expected {expected} bytes, found {len(blob)}")
    arr = np.frombuffer(blob, dtype=dt).reshape(meta.slices, meta.height, meta.width).copy()
    return arr, meta
