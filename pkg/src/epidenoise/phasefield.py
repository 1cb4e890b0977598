"""Smooth phase fields: bivariate polynomials, masked composition, Eq-style
phase application to modulus images.

Polynomials live on normalised coordinates ``x~ = 2 x / (W - 1) - 1`` (columns)
and ``y~ = 2 y / (H - 1) - 1`` (rows), so both run over [-1, 1]. Coefficient
``coeffs[p, q]`` multiplies ``x~**p * y~**q``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import gaussian_blur
from .errors import ConfigurationError, DataError, NumericalError


@dataclass(frozen=True)
class PolyCoeffs:
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if self.degree < 0:
            raise ConfigurationError("polynomial degree must be >= 0")
        n = self.degree + 1
        if c.size != n * n:
            raise ConfigurationError(f"degree {self.degree} needs {n * n} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c.reshape(n, n))

    def to_json(self) -> dict:
        return {"degree": self.degree, "coeffs": self.coeffs.ravel().tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "PolyCoeffs":
        return cls(int(d["degree"]), np.asarray(d["coeffs"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "PolyCoeffs":
        return cls.from_json(json.loads(Path(path).read_text()))


def normalized_grid(width: int, height: int):
    """Return ``(xn, yn)`` of shape ``(height, width)`` spanning [-1, 1]."""
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    return np.meshgrid(xs, ys)


def _design(xn, yn, degree):
    n = degree + 1
    px = np.stack([xn ** p for p in range(n)])
    py = np.stack([yn ** q for q in range(n)])
    return (px[:, None] * py[None, :]).reshape(n * n, -1).T


def evaluate_poly(coeffs: PolyCoeffs, width: int, height: int) -> np.ndarray:
    xn, yn = normalized_grid(width, height)
    return (_design(xn.ravel(), yn.ravel(), coeffs.degree) @ coeffs.coeffs.ravel()).reshape(height, width)


def fit_polynomial_phase(phase, mask, degree: int):
    """Least-squares polynomial fit restricted to ``mask``.

    Returns ``(PolyCoeffs, residual_norm)``.
    """
    phase = np.asarray(getattr(phase, "data", phase), dtype=np.float64)
    mask = np.asarray(getattr(mask, "data", mask), dtype=bool)
    if mask.shape != phase.shape:
        raise DataError("mask and phase map dimensions differ")
    n_coef = (degree + 1) ** 2
    if mask.sum() < n_coef:
        raise NumericalError(f"mask has {mask.sum()} pixels; degree {degree} needs at least {n_coef}")
    h, w = phase.shape
    xn, yn = normalized_grid(w, h)
    A = _design(xn[mask], yn[mask], degree)
    coef, _, rank, _ = np.linalg.lstsq(A, phase[mask], rcond=None)
    if rank < n_coef:
        raise NumericalError(f"rank-deficient polynomial fit (rank {rank} < {n_coef})")
    resid = float(np.linalg.norm(A @ coef - phase[mask]))
    return PolyCoeffs(degree, coef), resid


def compose_phase_map(inside: PolyCoeffs, outside: PolyCoeffs, mask, blur_sigma: float = 0.75,
                      blur_passes: int = 5) -> np.ndarray:
    """Inside polynomial on the mask, outside polynomial elsewhere, then blurred."""
    mask = np.asarray(getattr(mask, "data", mask), dtype=bool)
    h, w = mask.shape
    composed = np.where(mask, evaluate_poly(inside, w, h), evaluate_poly(outside, w, h))
    return gaussian_blur(composed, blur_sigma, passes=blur_passes)


def apply_phase(image, phase) -> np.ndarray:
    """``I_m * exp(j theta)`` per pixel."""
    im = np.asarray(getattr(image, "data", image), dtype=np.float64)
    th = np.asarray(getattr(phase, "data", phase), dtype=np.float64)
    if im.shape != th.shape:
        raise DataError(f"phase map {th.shape} does not match image {im.shape}")
    return im * np.exp(1j * th)


def random_poly(rng: np.random.Generator, degree: int, c00_max: float = np.pi, c_max: float = 1.0) -> PolyCoeffs:
    """Coefficients drawn uniformly: ``|c00| <= c00_max``, others ``<= c_max``."""
    n = degree + 1
    c = rng.uniform(-c_max, c_max, (n, n))
    c[0, 0] = rng.uniform(-c00_max, c00_max)
    return PolyCoeffs(degree, c)


def synthetic_phase_map(rng: np.random.Generator, mask, c00_max: float = np.pi, c_max: float = 1.0,
                        blur_sigma: float = 0.75, blur_passes: int = 5) -> np.ndarray:
    """Random bicubic phase on the object, its bilinear fit outside, blurred.

    The bilinear part is fitted to the bicubic over the mask so the two
    pieces agree on average; with a degenerate mask the bicubic is used
    everywhere.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    inside = random_poly(rng, 3, c00_max, c_max)
    try:
        outside, _ = fit_polynomial_phase(evaluate_poly(inside, w, h), mask, 1)
    except NumericalError:
        return gaussian_blur(evaluate_poly(inside, w, h), blur_sigma, passes=blur_passes)
    return compose_phase_map(inside, outside, mask, blur_sigma, blur_passes)
