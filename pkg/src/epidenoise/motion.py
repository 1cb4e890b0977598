"""In-plane inter-scan motion: affine resampling, registration, motion traces.

Coordinates are ``(x, y) = (column, row)`` and transforms act about the
image centre ``((W - 1) / 2, (H - 1) / 2)``::

    p_out = A @ (p_in - c) + c + t

Resampling pulls: ``output(p) = input(T^-1(p))``; samples whose source
falls outside the image are 0.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import gaussian_blur
from .errors import ConfigurationError, DataError, NumericalError

NEAREST = "nearest"
BICUBIC = "bicubic"


class RegistrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AffineTransform:
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.linear, dtype=np.float64).reshape(2, 2)
        t = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if abs(np.linalg.det(a)) <= 1e-6:
            raise NumericalError("affine transform is singular")
        object.__setattr__(self, "linear", a)
        object.__setattr__(self, "translation", t)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_params(cls, tx=0.0, ty=0.0, rotation_deg=0.0, scale=1.0) -> "AffineTransform":
        th = math.radians(rotation_deg)
        c, s = math.cos(th), math.sin(th)
        return cls(scale * np.array([[c, -s], [s, c]]), np.array([tx, ty]))

    def inverse(self) -> "AffineTransform":
        ai = np.linalg.inv(self.linear)
        return AffineTransform(ai, -ai @ self.translation)

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """``self`` after ``other``."""
        return AffineTransform(self.linear @ other.linear, self.linear @ other.translation + self.translation)

    def is_identity(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.linear - np.eye(2)) <= tol) and np.all(np.abs(self.translation) <= tol))

    def to_json(self) -> dict:
        return {"linear": self.linear.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_json(cls, d) -> "AffineTransform":
        return cls(d["linear"], d["translation"])


def _keys(s, a=-0.5):
    s = np.abs(s)
    s2, s3 = s * s, s * s * s
    return np.where(
        s <= 1, (a + 2) * s3 - (a + 3) * s2 + 1,
        np.where(s < 2, a * s3 - 5 * a * s2 + 8 * a * s - 4 * a, 0.0),
    )


def _sample_bicubic(img, u, v):
    """Keys cubic convolution (a = -0.5) at column ``u``, row ``v``; taps
    beyond the border replicate the edge pixel."""
    h, w = img.shape
    u0, v0 = np.floor(u).astype(np.int64), np.floor(v).astype(np.int64)
    fu, fv = u - u0, v - v0
    out = np.zeros(u.shape, dtype=img.dtype)
    for j in range(-1, 3):
        wy = _keys(fv - j)
        rows = np.clip(v0 + j, 0, h - 1)
        acc = np.zeros(u.shape, dtype=img.dtype)
        for i in range(-1, 3):
            acc += _keys(fu - i) * img[rows, np.clip(u0 + i, 0, w - 1)]
        out += wy * acc
    return out


def _sample_nearest(img, u, v):
    h, w = img.shape
    ui = np.clip(np.floor(u + 0.5).astype(np.int64), 0, w - 1)
    vi = np.clip(np.floor(v + 0.5).astype(np.int64), 0, h - 1)
    return img[vi, ui]


def apply_affine(image, t: AffineTransform, interpolation: str = NEAREST) -> np.ndarray:
    """Resample a 2-D image (or a stack of them) under ``t``."""
    data = np.asarray(getattr(image, "data", image))
    if data.ndim == 3:
        return np.stack([apply_affine(s, t, interpolation) for s in data])
    if t.is_identity():
        return data.copy()
    h, w = data.shape
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    inv = t.inverse()
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px = np.stack([xx.ravel() - c[0], yy.ravel() - c[1]])
    src = inv.linear @ px + (inv.translation + c)[:, None]
    u, v = src[0].reshape(h, w), src[1].reshape(h, w)
    tol = 1e-9
    inside = (u >= -tol) & (u <= w - 1 + tol) & (v >= -tol) & (v <= h - 1 + tol)
    # snap near-integer coordinates so on-grid sampling is exact
    u = np.where(np.abs(u - np.round(u)) < tol, np.round(u), u)
    v = np.where(np.abs(v - np.round(v)) < tol, np.round(v), v)
    if interpolation == NEAREST:
        out = _sample_nearest(data, u, v)
    elif interpolation == BICUBIC:
        out = _sample_bicubic(data, u, v)
    else:
        raise ConfigurationError(f"unknown interpolation {interpolation!r}")
    return np.where(inside, out, 0)


def register_back(image, known: AffineTransform) -> np.ndarray:
    """Undo a known transform with bicubic resampling."""
    return apply_affine(image, known.inverse(), BICUBIC)


# --------------------------------------------------------------------------
# Registration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineEstimate:
    transform: AffineTransform   # motion: moving ~ apply_affine(fixed, transform)
    alignment: AffineTransform   # moving -> fixed, the MSE minimiser
    mse: float
    converged: bool


def _params_to_t(p):
    return AffineTransform.from_params(p[0], p[1], p[2], math.exp(p[3]))


def _downsample(img, factor):
    if factor == 1:
        return img
    return gaussian_blur(img, 0.5 * factor)[::factor, ::factor]


def estimate_affine(fixed, moving, levels: int = 3, iters: int = 200, max_translation: float = 8.0,
                    max_rotation_deg: float = 10.0, tol: float = 1e-3, ncc_threshold: float = 0.5,
                    presmooth_sigma: float = 1.0) -> AffineEstimate:
    """Translation + rotation + isotropic scale by multi-resolution coordinate descent.

    Minimises ``MSE(fixed, apply_affine(moving, s, BICUBIC))`` over ``s``;
    both images are first blurred with a Gaussian of ``presmooth_sigma``
    pixels, because hard object edges otherwise bias the interpolated MSE
    towards too-small rotations. The returned ``transform`` is ``s^-1``,
    i.e. the motion that maps the fixed image onto the moving one. If the iteration budget runs out or
    the aligned images are poorly correlated, ``converged`` is False and a
    :class:`RegistrationWarning` is issued.
    """
    f = np.asarray(getattr(fixed, "data", fixed), dtype=np.float64)
    m = np.asarray(getattr(moving, "data", moving), dtype=np.float64)
    if f.shape != m.shape:
        raise DataError("fixed and moving images differ in shape")
    fs, ms = (gaussian_blur(f, presmooth_sigma), gaussian_blur(m, presmooth_sigma)) if presmooth_sigma > 0 else (f, m)
    p = np.zeros(4)  # tx, ty (full-res px), rotation (deg), log scale
    budget_hit = False
    for level in range(levels - 1, -1, -1):
        factor = 2 ** level
        fl, ml = _downsample(fs, factor), _downsample(ms, factor)

        def cost(q):
            q = q.copy()
            q[:2] /= factor
            return float(np.mean((fl - apply_affine(ml, _params_to_t(q), BICUBIC)) ** 2))

        steps = np.array([1.0 * factor, 1.0 * factor, 1.0, 0.02])
        floor = np.array([tol, tol, tol, tol * 0.01])
        best = cost(p)
        it = 0
        while np.any(steps > floor) and it < iters:
            it += 1
            improved = False
            for k in range(4):
                if steps[k] <= floor[k]:
                    continue
                for sgn in (1.0, -1.0):
                    q = p.copy()
                    q[k] += sgn * steps[k]
                    if abs(q[0]) > max_translation or abs(q[1]) > max_translation or abs(q[2]) > max_rotation_deg:
                        continue
                    c = cost(q)
                    if c < best:
                        best, p, improved = c, q, True
                        break
            if not improved:
                steps = steps * 0.5
        budget_hit = budget_hit or (it >= iters and np.any(steps > floor))
    s = _params_to_t(p)
    aligned = apply_affine(m, s, BICUBIC)
    mse = float(np.mean((f - aligned) ** 2))
    a, b = f - f.mean(), aligned - aligned.mean()
    denom = math.sqrt(float(np.sum(a * a) * np.sum(b * b)))
    ncc = float(np.sum(a * b) / denom) if denom > 0 else 0.0
    converged = (not budget_hit) and ncc >= ncc_threshold
    if not converged:
        warnings.warn(f"registration unreliable (ncc={ncc:.3f}, budget_exhausted={budget_hit})",
                      RegistrationWarning, stacklevel=2)
    return AffineEstimate(s.inverse(), s, mse, converged)


# --------------------------------------------------------------------------
# Traces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionTrace:
    transforms: tuple

    def __post_init__(self):
        if not self.transforms:
            raise ConfigurationError("motion trace must hold at least one transform")
        if not self.transforms[0].is_identity(1e-15):
            raise ConfigurationError("first transform of a motion trace must be the identity")

    def __len__(self):
        return len(self.transforms)

    def __getitem__(self, i):
        return self.transforms[i]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps([t.to_json() for t in self.transforms], indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "MotionTrace":
        return cls(tuple(AffineTransform.from_json(d) for d in json.loads(Path(path).read_text())))


def generate_motion_trace(seed, nex: int, max_translation_px: float = 2.0, max_rotation_deg: float = 2.0) -> MotionTrace:
    """Identity, then rigid transforms with parameters uniform within bounds."""
    if nex < 1:
        raise ConfigurationError("nex must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = [AffineTransform.identity()]
    for _ in range(nex - 1):
        tx, ty = rng.uniform(-max_translation_px, max_translation_px, 2) if max_translation_px > 0 else (0.0, 0.0)
        rot = rng.uniform(-max_rotation_deg, max_rotation_deg) if max_rotation_deg > 0 else 0.0
        out.append(AffineTransform.from_params(tx, ty, rot))
    return MotionTrace(tuple(out))
