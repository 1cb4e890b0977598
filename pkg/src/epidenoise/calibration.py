"""Noise generation and normalisation, SNR scaling, PSF estimation, blurring.

Conventions: noise maps are complex with unit per-component standard
deviation unless a profile says otherwise; SNR is the mean of the noise-free
modulus object divided by that unit standard deviation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .errors import ConfigurationError, DataError, NumericalError


# --------------------------------------------------------------------------
# Gaussian blur
# --------------------------------------------------------------------------

def gaussian_kernel1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Sampled Gaussian truncated at ``truncate * sigma`` and renormalised."""
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.floor(truncate * sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma: float, passes: int = 1):
    """Separable Gaussian blur with reflective borders.

    Complex input is blurred per component. ``passes`` repeats the blur.
    """
    data = np.asarray(getattr(image, "data", image))
    kernel = gaussian_kernel1d(sigma)
    if kernel.size == 1 or passes <= 0:
        return data.copy()
    if np.iscomplexobj(data):
        return gaussian_blur(data.real, sigma, passes) + 1j * gaussian_blur(data.imag, sigma, passes)
    out = np.asarray(data, dtype=np.float64)
    for _ in range(passes):
        for axis in range(out.ndim):
            out = ndimage.correlate1d(out, kernel, axis=axis, mode="reflect")
    return out


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseMap:
    data: np.ndarray
    declared_std: float = 1.0
    profile: np.ndarray | None = None


def generate_noise_map(seed, width: int, height: int, profile=None, std: float = 1.0) -> NoiseMap:
    """Complex i.i.d. Gaussian noise, optionally shaped per column.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if width <= 0 or height <= 0:
        raise ConfigurationError("noise map dimensions must be positive")
    col_std = np.full(width, float(std))
    if profile is not None:
        profile = np.asarray(profile, dtype=np.float64)
        if profile.shape != (width,):
            raise ConfigurationError(f"profile length {profile.shape} != width {width}")
        if np.any(profile < 0):
            raise ConfigurationError("noise profile values must be non-negative")
        col_std = col_std * profile
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((2, height, width))
    data = (z[0] + 1j * z[1]) * col_std
    return NoiseMap(data, float(std), None if profile is None else profile.copy())


def add_noise(image, noise) -> np.ndarray:
    """Componentwise sum of an image and a noise map."""
    a = np.asarray(getattr(image, "data", image))
    n = np.asarray(getattr(noise, "data", noise))
    if a.shape != n.shape:
        raise DataError(f"noise shape {n.shape} does not match image {a.shape}")
    return a + n


@dataclass(frozen=True)
class NoiseProfile:
    std: np.ndarray
    background: np.ndarray  # bool per column: usable for matching

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["column_index", "std", "is_background"])
            for i, (s, b) in enumerate(zip(self.std, self.background)):
                w.writerow([i, repr(float(s)), int(bool(b))])
        return path

    @classmethod
    def from_csv(cls, path) -> "NoiseProfile":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise DataError(f"{path}: empty noise profile")
        std = np.array([float(r["std"]) for r in rows])
        bg = np.array([bool(int(r["is_background"])) for r in rows])
        return cls(std, bg)


def noise_std_profile(samples, background_mask=None) -> NoiseProfile:
    """Per-column standard deviation over background pixels.

    ``samples`` has shape ``(reps, height, width)``; every background pixel
    of every repetition in a column contributes one sample (real and
    imaginary parts both count for complex data). Columns with fewer than
    two samples are flagged invalid.
    """
    s = np.asarray(samples)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[0] < 2:
        raise DataError("noise_std_profile needs at least 2 repetitions (shape (reps, H, W))")
    if np.iscomplexobj(s):
        s = np.concatenate([s.real, s.imag], axis=0)
    h, w = s.shape[1:]
    mask = np.ones((h, w), bool) if background_mask is None else np.asarray(background_mask, bool)
    if mask.shape != (h, w):
        raise DataError("background mask shape mismatch")
    std = np.zeros(w)
    valid = np.zeros(w, bool)
    for c in range(w):
        vals = s[:, mask[:, c], c].ravel()
        if vals.size >= 2:
            std[c] = vals.std(ddof=1)
            valid[c] = True
    return NoiseProfile(std, valid)


def _as_profile(p):
    return np.asarray(p.std if isinstance(p, NoiseProfile) else p, dtype=np.float64)


def match_noise_scale(image_profile, reference_profile, background_columns=None, method: str = "lsq") -> float:
    """Scale ``s`` that best maps the image noise profile onto the reference.

    ``lsq`` minimises ``sum (s p_img - p_ref)^2`` in closed form; ``abs``
    minimises the absolute error (a weighted median of the ratios).
    """
    p_img = _as_profile(image_profile)
    p_ref = _as_profile(reference_profile)
    if p_img.shape != p_ref.shape:
        raise DataError("noise profiles must have equal length")
    if background_columns is None:
        sel = np.ones(p_img.shape, bool)
        for prof in (image_profile, reference_profile):
            if isinstance(prof, NoiseProfile):
                sel &= prof.background
    else:
        bc = np.asarray(background_columns)
        sel = bc.astype(bool) if bc.dtype == bool else np.isin(np.arange(p_img.size), bc)
    if not sel.any():
        raise DataError("no valid background columns to match")
    a, b = p_img[sel], p_ref[sel]
    if not np.any(a):
        raise NumericalError("image noise profile is zero on the matching columns")
    if method == "lsq":
        return float(np.dot(b, a) / np.dot(a, a))
    if method == "abs":
        keep = a > 0
        ratio, weight = b[keep] / a[keep], a[keep]
        order = np.argsort(ratio)
        cw = np.cumsum(weight[order])
        return float(ratio[order][np.searchsorted(cw, 0.5 * cw[-1])])
    raise ConfigurationError(f"unknown matching method {method!r}")


# --------------------------------------------------------------------------
# SNR
# --------------------------------------------------------------------------

def set_snr(image, object_mask, target_snr: float) -> np.ndarray:
    """Rescale so the mean over ``object_mask`` equals ``target_snr``.

    Works on a single slice or a stack (the mask then applies per slice and
    the mean is taken over the whole masked stack).
    """
    if target_snr <= 0:
        raise ConfigurationError("target SNR must be > 0")
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    mask = np.asarray(object_mask, bool)
    if not mask.any():
        raise DataError("object mask is empty")
    if mask.shape != data.shape:
        mask = np.broadcast_to(mask, data.shape)
    mean = data[mask].mean()
    if mean == 0:
        raise NumericalError("object mean is zero; cannot set SNR")
    return data / mean * target_snr


# --------------------------------------------------------------------------
# PSF estimation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PsfEstimate:
    sigma: float
    edge_center: float
    low: float
    high: float
    fit_residual: float


def _erf_design(x, x0, sigma):
    if sigma <= 1e-9:
        step = np.where(x > x0, 1.0, np.where(x == x0, 0.5, 0.0))
        return step
    return ndtr((x - x0) / sigma)


def _linear_fit(x, y, x0, sigma):
    """Closed-form least squares for (a, b) given (x0, sigma); returns (rss, (a, b))."""
    phi = _erf_design(x, x0, sigma)
    pm, ym = phi.mean(axis=-1, keepdims=True), y.mean()
    dp = phi - pm
    spp = np.sum(dp * dp, axis=-1)
    spy = np.sum(dp * (y - ym), axis=-1)
    b = np.divide(spy, spp, out=np.zeros_like(spy), where=spp > 1e-300)
    a = ym - b * pm[..., 0]
    r = y - (a[..., None] + b[..., None] * phi)
    rss = np.sum(r * r, axis=-1)
    if np.ndim(rss) == 0:
        return float(rss), (float(a), float(b))
    return rss, (a, b)


def _golden(f, lo, hi, tol):
    g = (math.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


def estimate_psf_sigma(profile, sigma_max: float | None = None, tol: float = 1e-6) -> PsfEstimate:
    """Fit ``a + b * Phi((x - x0) / sigma)`` to a 1-D edge profile.

    A coarse grid over (x0, sigma) seeds nested golden-section searches
    (outer over sigma, inner over x0); ``a`` and ``b`` are solved linearly
    for every candidate.
    """
    y = np.asarray(profile, dtype=np.float64)
    if y.ndim != 1 or y.size < 8:
        raise DataError("edge profile needs at least 8 samples")
    n = y.size
    x = np.arange(n, dtype=np.float64)
    var_total = float(np.sum((y - y.mean()) ** 2))
    if var_total == 0:
        raise NumericalError("flat profile: PSF fit unreliable")
    sigma_max = sigma_max or n / 4.0

    def best_x0(sigma, lo=0.0, hi=n - 1.0):
        return _golden(lambda x0: _linear_fit(x, y, x0, sigma)[0], lo, hi, tol)

    # coarse grid, evaluated in one vectorised pass
    grid_x0 = np.linspace(0.0, n - 1.0, 4 * n + 1)
    grid_s = np.concatenate([[0.0], np.geomspace(0.05, sigma_max, 40)])
    S, X0 = np.meshgrid(grid_s, grid_x0, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x[None, None, :] - X0[..., None]) / S[..., None]
    phi = np.where(S[..., None] > 0, ndtr(np.nan_to_num(z, nan=0.0)), _erf_design(x[None, None, :], X0[..., None], 0.0))
    pm = phi.mean(axis=-1, keepdims=True)
    dp = phi - pm
    spp = np.sum(dp * dp, axis=-1)
    spy = np.sum(dp * (y - y.mean()), axis=-1)
    rss = var_total - np.divide(spy * spy, spp, out=np.zeros_like(spy), where=spp > 1e-300)
    i_s, i_x = np.unravel_index(np.argmin(rss), rss.shape)
    best = (rss[i_s, i_x], grid_x0[i_x], grid_s[i_s])
    _, gx0, gs = best
    step_x = (grid_x0[1] - grid_x0[0]) * 2
    i = int(np.argmin(np.abs(grid_s - gs)))
    s_lo, s_hi = grid_s[max(i - 1, 0)], grid_s[min(i + 1, grid_s.size - 1)]

    def outer(s):
        return best_x0(s, max(gx0 - step_x, 0.0), min(gx0 + step_x, n - 1.0))[1]

    sigma, _ = _golden(outer, s_lo, s_hi, tol)
    x0, _ = best_x0(sigma, max(gx0 - step_x, 0.0), min(gx0 + step_x, n - 1.0))
    resid, (a, b) = _linear_fit(x, y, x0, sigma)
    if resid > 0.5 * var_total:
        raise NumericalError("edge fit residual exceeds half of the profile variance; PSF fit unreliable")
    low, high = (a, a + b) if b >= 0 else (a + b, a)
    return PsfEstimate(float(sigma), float(x0), float(low), float(high), float(resid))


def erf_edge(n: int, x0: float, sigma: float, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Synthetic Gaussian-blurred step edge sampled at integer positions."""
    x = np.arange(n, dtype=np.float64)
    return low + (high - low) * _erf_design(x, x0, sigma)
