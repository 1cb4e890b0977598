"""Noise-free brain-like modulus images from tissue fraction maps.

Tissue maps are ``(n_classes, depth, height, width)`` fraction arrays,
i.e. numpy order ``(z, y, x)`` per class.  Coronal slices fix ``y`` and
axial slices fix ``z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class TissueClass:
    class_id: int
    name: str
    rho: float
    t1_ms: float
    t2_ms: float
    d: float = 0.0

    def __post_init__(self):
        if self.t1_ms <= 0 or self.t2_ms <= 0:
            raise ConfigurationError(f"{self.name}: relaxation times must be positive")
        if self.rho < 0 or self.d < 0:
            raise ConfigurationError(f"{self.name}: rho and d must be non-negative")


@dataclass(frozen=True)
class TissueProperties:
    classes: tuple[TissueClass, ...]

    def __getitem__(self, class_id: int) -> TissueClass:
        for c in self.classes:
            if c.class_id == class_id:
                return c
        raise ConfigurationError(f"no tissue properties for class {class_id}")

    def to_json(self) -> list[dict]:
        return [dict(c.__dict__) for c in self.classes]


def load_tissue_table(path=None) -> TissueProperties:
    """Read a JSON array of ``{class_id, name, rho, t1_ms, t2_ms, d}``.

    Without a path the packaged default table is used.
    """
    if path is None:
        text = resources.files("epidenoise").joinpath("data/tissues.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        rows = json.loads(text)
        classes = tuple(
            TissueClass(
                class_id=int(r["class_id"]),
                name=str(r["name"]),
                rho=float(r["rho"]),
                t1_ms=float(r["t1_ms"]),
                t2_ms=float(r["t2_ms"]),
                d=float(r.get("d", 0.0)),
            )
            for r in rows
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed tissue table: {exc}") from exc
    return TissueProperties(classes)


@dataclass(frozen=True)
class AcquisitionParams:
    tr_ms: float = 5700.0
    te_ms: float = 114.0
    b_value: float = 0.0
    gain_k: float = 1.0

    def __post_init__(self):
        if not self.tr_ms > self.te_ms > 0:
            raise ConfigurationError("need tr_ms > te_ms > 0")
        if self.b_value < 0 or self.gain_k <= 0:
            raise ConfigurationError("need b_value >= 0 and gain_k > 0")


@dataclass(frozen=True)
class TissueMap:
    fractions: np.ndarray  # (n_classes, depth, height, width)

    def __post_init__(self):
        f = np.asarray(self.fractions)
        if f.ndim != 4:
            raise DataError("tissue fractions must be (n_classes, depth, height, width)")
        object.__setattr__(self, "fractions", f)

    @property
    def n_classes(self) -> int:
        return self.fractions.shape[0]

    @property
    def depth(self) -> int:
        return self.fractions.shape[1]

    @property
    def height(self) -> int:
        return self.fractions.shape[2]

    @property
    def width(self) -> int:
        return self.fractions.shape[3]

    def coronal(self, y: int) -> np.ndarray:
        """Fractions of one coronal plane, shape ``(n_classes, depth, width)``."""
        return np.asarray(self.fractions[:, :, y, :], dtype=np.float64)

    def axial(self, z: int) -> np.ndarray:
        """Fractions of one axial plane, shape ``(n_classes, height, width)``."""
        return np.asarray(self.fractions[:, z, :, :], dtype=np.float64)


def class_signal(tissue: TissueClass, acq: AcquisitionParams) -> float:
    """Spin-echo DWI intensity of a pure voxel, without the gain factor."""
    return (
        tissue.rho
        * np.exp(-acq.te_ms / tissue.t2_ms)
        * (1.0 - np.exp(-acq.tr_ms / tissue.t1_ms))
        * np.exp(-acq.b_value * tissue.d)
    )


def synthesize_signal(fractions, props: TissueProperties, acq: AcquisitionParams) -> np.ndarray:
    """Fraction-weighted sum of per-class spin-echo signals.

    ``fractions`` is a TissueMap or any array whose first axis indexes
    classes; the result drops that axis.
    """
    f = fractions.fractions if isinstance(fractions, TissueMap) else np.asarray(fractions)
    signals = np.array([class_signal(props[c], acq) for c in range(f.shape[0])])
    out = np.tensordot(signals, f, axes=(0, 0))
    return acq.gain_k * np.maximum(out, 0.0)


def load_brainweb_raw(data_path, sidecar_path) -> TissueMap:
    """Ingest a raw BrainWeb-style dump described by a JSON sidecar.

    Sidecar keys: ``width, height, depth, n_classes, dtype ("u8"|"u16"),
    layout ("crisp"|"fuzzy")`` and optionally ``background_label``.  Crisp
    files hold one label per voxel; fuzzy files hold ``n_classes``
    consecutive volumes scaled to the dtype maximum.  Voxels are stored with
    x fastest, then y, then z.
    """
    try:
        meta = json.loads(Path(sidecar_path).read_text())
        w, h, d = int(meta["width"]), int(meta["height"]), int(meta["depth"])
        n_classes = int(meta["n_classes"])
        dtype = {"u8": np.dtype("u1"), "u16": np.dtype("<u2")}[meta["dtype"]]
        layout = meta["layout"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"bad BrainWeb sidecar {sidecar_path}: {exc}") from exc
    if layout not in ("crisp", "fuzzy"):
        raise DataError(f"unknown layout {layout!r}")
    blob = Path(data_path).read_bytes()
    n_vox = w * h * d
    n_values = n_vox if layout == "crisp" else n_vox * n_classes
    if len(blob) != n_values * dtype.itemsize:
        raise DataError(
            f"{data_path}: expected {n_values * dtype.itemsize} bytes for "
            f"{w}x{h}x{d} ({layout}), found {len(blob)}"
        )
    values = np.frombuffer(blob, dtype=dtype)
    if layout == "crisp":
        labels = values.reshape(d, h, w).astype(np.int64)
        if labels.max(initial=0) >= n_classes:
            raise DataError("crisp label exceeds declared class count")
        frac = np.zeros((n_classes, d, h, w), dtype=np.float32)
        for c in range(n_classes):
            frac[c] = labels == c
        bg = meta.get("background_label")
        if bg is not None:
            frac[int(bg)] = 0.0
    else:
        scale = float(np.iinfo(dtype).max)
        frac = (values.reshape(n_classes, d, h, w) / scale).astype(np.float32)
    return TissueMap(frac)


def _smoothstep(dist, width):
    # exact 0 / 1 outside a transition band of the given width (voxels)
    t = np.clip(dist / width + 0.5, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def procedural_phantom(seed, width=181, height=217, depth=181, n_classes=3) -> TissueMap:
    """Deterministic nested-ellipsoid head phantom.

    Classes: 0 CSF, 1 gray matter, 2 white matter and, when ``n_classes``
    is at least 4, a scalp shell as class 3.  Further classes stay empty.
    The white/gray boundary is folded by a seeded angular modulation so the
    slices carry fine edges.  Boundaries are smooth over ~1.5 voxels and the
    background is exactly zero.
    """
    if min(width, height, depth) <= 0:
        raise ConfigurationError("phantom dimensions must be positive")
    if n_classes < 3:
        raise ConfigurationError("procedural phantom needs at least 3 classes")
    rng = np.random.default_rng(seed)
    jit = lambda s: 1.0 + rng.uniform(-s, s)  # noqa: E731

    cx, cy, cz = (width - 1) / 2.0, (height - 1) / 2.0, 0.56 * (depth - 1)
    ax, ay, az = 0.36 * width * jit(0.03), 0.40 * height * jit(0.03), 0.34 * depth * jit(0.03)
    mean_axis = (ax + ay + az) / 3.0
    band = 1.5

    n_fold = 10
    fold_dir = rng.standard_normal((2, n_fold, 3))
    fold_dir /= np.linalg.norm(fold_dir, axis=-1, keepdims=True)
    fold_freq = rng.uniform(6.0, 16.0, (2, n_fold))
    fold_phase = rng.uniform(0, 2 * np.pi, (2, n_fold))
    vent = [(s * 0.13 * ax, -0.05 * ay, -0.04 * az) for s in (-1, 1)]
    vent_axes = (0.09 * ax * jit(0.1), 0.30 * ay * jit(0.1), 0.14 * az * jit(0.1))
    nuclei = [(s * 0.30 * ax, 0.02 * ay, 0.08 * az) for s in (-1, 1)]
    nuclei_axes = (0.10 * ax * jit(0.1), 0.15 * ay * jit(0.1), 0.12 * az * jit(0.1))

    out = np.zeros((n_classes, depth, height, width), dtype=np.float32)
    yy, xx = np.meshgrid(np.arange(height) - cy, np.arange(width) - cx, indexing="ij")
    for z in range(depth):
        dz = z - cz
        u, v, w = xx / ax, yy / ay, dz / az
        r = np.sqrt(u * u + v * v + w * w)
        s_out = _smoothstep((1.0 - r) * mean_axis, band)
        if not s_out.any() and n_classes < 4:
            continue
        inv_r = 1.0 / np.maximum(r, 1e-9)
        nx, ny, nz = u * inv_r, v * inv_r, w * inv_r
        fold = np.zeros((2,) + r.shape)
        for j in range(2):
            for i in range(n_fold):
                dx, dy, dzn = fold_dir[j, i]
                fold[j] += np.sin(fold_freq[j, i] * (dx * nx + dy * ny + dzn * nz) + fold_phase[j, i])
        fold /= np.sqrt(n_fold)
        s_gm = np.minimum(_smoothstep((0.93 * (1 + 0.02 * fold[0]) - r) * mean_axis, band), s_out)
        s_wm = np.minimum(_smoothstep((0.74 * (1 + 0.09 * fold[0]) - r) * mean_axis, band), s_gm)
        # sulci: CSF clefts cutting into the gray matter ribbon
        s_sulc = _smoothstep((fold[1] - 0.7) * 8.0, band) * (s_gm - s_wm)
        s_gm = s_gm - s_sulc

        def blob(centers, axes):
            s = np.zeros_like(r)
            for ox, oy, oz in centers:
                rb = np.sqrt(((xx - ox) / axes[0]) ** 2 + ((yy - oy) / axes[1]) ** 2 + ((dz - oz) / axes[2]) ** 2)
                s = np.maximum(s, _smoothstep((1.0 - rb) * min(axes), band))
            return s

        s_vent = blob(vent, vent_axes)
        s_nuc = blob(nuclei, nuclei_axes) * (1.0 - s_vent)
        wm = s_wm * (1.0 - s_vent) * (1.0 - s_nuc)
        out[2, z] = wm
        out[1, z] = (s_gm - s_wm) + s_wm * (1.0 - s_vent) * s_nuc
        out[0, z] = (s_out - s_gm) + s_wm * s_vent
        if n_classes >= 4:
            s_scalp = _smoothstep((1.08 - r) * mean_axis, band)
            out[3, z] = s_scalp - s_out
    np.clip(out, 0.0, 1.0, out=out)
    return TissueMap(out)


def shift_rows(image, rows: int):
    """Integer shift along the row axis with zero fill.

    Positive ``rows`` moves content toward row 0.
    """
    a = np.asarray(image)
    out = np.zeros_like(a)
    n = a.shape[-2]
    if rows == 0:
        out[...] = a
    elif abs(rows) < n:
        if rows > 0:
            out[..., : n - rows, :] = a[..., rows:, :]
        else:
            out[..., -rows:, :] = a[..., : n + rows, :]
    return out


def resample_for_training(slices, shape=(160, 320), inner=125, center_shift=0, crop=180):
    """Crop, nearest-neighbour downsample and embed slices in a larger canvas.

    Each slice is center-cropped to ``crop x crop``, reduced to
    ``inner x inner`` by nearest-neighbour sampling, placed at the center of
    a zero canvas of ``shape = (rows, cols)`` and finally shifted by
    ``center_shift`` rows (see :func:`shift_rows`).
    """
    rows, cols = shape
    if inner > min(rows, cols):
        raise ConfigurationError(f"inner size {inner} does not fit in canvas {shape}")
    if inner > crop:
        raise ConfigurationError("inner size larger than the crop")
    a = np.asarray(slices, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    h, w = a.shape[-2:]
    if h < crop or w < crop:
        raise ConfigurationError(f"slices must be at least {crop}x{crop}, got {h}x{w}")
    r0, c0 = (h - crop) // 2, (w - crop) // 2
    a = a[:, r0 : r0 + crop, c0 : c0 + crop]
    idx = np.floor((np.arange(inner) + 0.5) * crop / inner).astype(int)
    a = a[:, idx][:, :, idx]
    out = np.zeros((a.shape[0], rows, cols))
    er, ec = (rows - inner) // 2, (cols - inner) // 2
    out[:, er : er + inner, ec : ec + inner] = a
    out = shift_rows(out, center_shift)
    return out[0] if single else out


def centering_shift(image) -> int:
    """Row shift that moves the intensity centroid to the canvas center."""
    a = np.asarray(image, dtype=np.float64)
    total = a.sum()
    if total <= 0:
        return 0
    centroid = (a.sum(axis=1) * np.arange(a.shape[0])).sum() / total
    return int(round(centroid - (a.shape[0] - 1) / 2.0))
