"""EPI forward model and reconstruction.

Readout trajectory from a trapezoidal gradient, sinc regridding (``Q``) and
its inverse (``R``), navigator-based Nyquist-ghost phase estimation, ghost
introduction/correction, and the end-to-end forward and reconstruction
chains.

Conventions
-----------
* k-coordinates are normalised so the Cartesian grid has spacing ``pi``:
  ``kx_target = pi * (arange(n) - n // 2)``. With that scaling the kernel
  ``sin(d) / d`` interpolates exactly on matched grids.
* Lines are row vectors: reconstruction is ``line @ Q``, the forward model
  ``line @ R``.
* Row parity: row 0 (and every even row) is read in the forward direction,
  odd rows in reverse. Ghosting multiplies forward rows by ``exp(j th)``
  and reverse rows by ``exp(-j th)`` in hybrid x-ky space; correcting with
  ``theta = -th`` undoes it exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import fftc, ifftc, fft2c, ifft2c
from .errors import ConfigurationError, DataError, NumericalError

FORWARD_MODEL = "forward"
RECONSTRUCT = "reconstruct"

COND_EXACT_INVERSE = 1e6
COND_LIMIT = 1e10
_SNAP = 1e-10  # |d/pi - m| below this counts as an exact grid coincidence


class GhostEstimateWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# Trajectory
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientWaveform:
    """Trapezoidal readout gradient with a centred ADC window.

    Sample ``i`` is taken at ``t0 + (i + 0.5) * dwell_us`` where the window
    ``n_samples * dwell_us`` is centred in the waveform.
    """

    ramp_up_us: float
    flat_us: float
    ramp_down_us: float
    amplitude: float
    dwell_us: float
    n_samples: int
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.ramp_up_us, self.flat_us, self.ramp_down_us) < 0:
            raise ConfigurationError("gradient durations must be >= 0")
        if self.duration <= 0:
            raise ConfigurationError("gradient waveform has zero duration")
        if self.n_samples < 2:
            raise ConfigurationError("need at least 2 readout samples")
        if self.dwell_us <= 0:
            raise ConfigurationError("dwell time must be > 0")
        if self.n_samples * self.dwell_us > self.duration * (1 + 1e-12):
            raise ConfigurationError("readout window longer than the gradient waveform")

    @property
    def duration(self) -> float:
        return self.ramp_up_us + self.flat_us + self.ramp_down_us

    def sample_times(self) -> np.ndarray:
        t0 = 0.5 * (self.duration - self.n_samples * self.dwell_us)
        return t0 + (np.arange(self.n_samples) + 0.5) * self.dwell_us

    def gradient(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        ru, f, rd = self.ramp_up_us, self.flat_us, self.ramp_down_us
        g = np.zeros_like(t)
        if ru > 0:
            m = (t >= 0) & (t < ru)
            g[m] = t[m] / ru
        m = (t >= ru) & (t <= ru + f)
        g[m] = 1.0
        if rd > 0:
            m = (t > ru + f) & (t <= ru + f + rd)
            g[m] = 1.0 - (t[m] - ru - f) / rd
        return self.amplitude * g

    def area(self, t) -> np.ndarray:
        """Exact ``gamma * integral_0^t G`` for the piecewise-linear waveform."""
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, self.duration)
        ru, f, rd = self.ramp_up_us, self.flat_us, self.ramp_down_us
        a = np.minimum(t, ru) ** 2 / (2 * ru) if ru > 0 else np.zeros_like(t)
        a = a + np.clip(t - ru, 0.0, f)
        s = np.clip(t - ru - f, 0.0, rd)
        if rd > 0:
            a = a + s - s * s / (2 * rd)
        return self.gamma * self.amplitude * a

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GradientWaveform":
        return cls(**{k: d[k] for k in ("ramp_up_us", "flat_us", "ramp_down_us", "amplitude",
                                         "dwell_us", "n_samples")}, gamma=d.get("gamma", 1.0))

    @classmethod
    def load(cls, path) -> "GradientWaveform":
        return cls.from_json(json.loads(Path(path).read_text()))


def ramp_sampled_waveform(n_samples: int, ramp_fraction: float = 0.25, adc_start: float = 0.8,
                          dwell_us: float = 2.0, amplitude: float = 1.0) -> GradientWaveform:
    """Symmetric trapezoid whose ramps each take ``ramp_fraction`` of its duration.

    The ADC opens once the gradient has reached ``adc_start`` of its plateau
    value, so the outermost samples fall on the ramps. ``adc_start = 0``
    samples the full ramps; ``ramp_fraction = 0`` is a flat gradient.
    """
    if not 0 <= ramp_fraction < 0.5:
        raise ConfigurationError("ramp_fraction must be in [0, 0.5)")
    if not 0 <= adc_start <= 1:
        raise ConfigurationError("adc_start must be in [0, 1]")
    window = n_samples * dwell_us
    total = window / (1.0 - 2.0 * ramp_fraction * adc_start)
    ramp = ramp_fraction * total
    return GradientWaveform(ramp, total - 2 * ramp, ramp, amplitude, dwell_us, n_samples)


def cartesian_grid(n: int) -> np.ndarray:
    return np.pi * (np.arange(n, dtype=np.float64) - n // 2)


@dataclass(frozen=True)
class TrajectorySpec:
    kx_actual: np.ndarray
    kx_target: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.kx_actual, dtype=np.float64)
        t = np.asarray(self.kx_target, dtype=np.float64)
        if a.shape != t.shape or a.ndim != 1:
            raise DataError("trajectory coordinate arrays must be 1-D and equally long")
        if np.any(np.diff(a) <= 0) or np.any(np.diff(t) <= 0):
            raise DataError("trajectory coordinates must be strictly increasing")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "kx_actual", a)
        object.__setattr__(self, "kx_target", t)

    @property
    def n(self) -> int:
        return self.kx_actual.size

    @classmethod
    def cartesian(cls, n: int) -> "TrajectorySpec":
        g = cartesian_grid(n)
        return cls(g, g.copy())


def trajectory_from_gradient(g: GradientWaveform) -> TrajectorySpec:
    """Integrate the gradient at the sample times and span-normalise."""
    area = g.area(g.sample_times())
    target = cartesian_grid(g.n_samples)
    span = area[-1] - area[0]
    if not np.isfinite(span) or span <= 0:
        raise NumericalError("degenerate trajectory: zero (or negative) gradient area across the readout")
    k = (area - area[0]) / span * (target[-1] - target[0]) + target[0]
    return TrajectorySpec(k, target)


# --------------------------------------------------------------------------
# Regridding kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RegridKernel:
    q: np.ndarray
    r: np.ndarray
    condition_estimate: float

    @property
    def n(self) -> int:
        return self.q.shape[0]


def sinc_matrix(kx_actual, kx_target) -> np.ndarray:
    """``Q[p, r] = sin(d) / d`` with ``d = kx_actual[p] - kx_target[r]``.

    Entries where ``d`` is (to ``1e-10`` of a half-turn) an integer multiple
    of ``pi`` are set to their exact values 1 (``d = 0``) or 0.
    """
    d = np.asarray(kx_actual, dtype=np.float64)[:, None] - np.asarray(kx_target, dtype=np.float64)[None, :]
    q = np.sinc(d / np.pi)
    m = d / np.pi
    on_grid = np.abs(m - np.round(m)) < _SNAP
    q[on_grid] = 0.0
    q[on_grid & (np.round(m) == 0)] = 1.0
    return q


@lru_cache(maxsize=32)
def _kernel_cached(actual: bytes, target: bytes) -> RegridKernel:
    a = np.frombuffer(actual, dtype=np.float64)
    t = np.frombuffer(target, dtype=np.float64)
    q = sinc_matrix(a, t)
    cond = float(np.linalg.cond(q))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"regridding kernel is ill-conditioned (condition estimate {cond:.3g})")
    r = np.linalg.inv(q) if cond < COND_EXACT_INVERSE else np.linalg.pinv(q)
    q.setflags(write=False)
    r.setflags(write=False)
    return RegridKernel(q, r, cond)


def build_regrid_kernel(traj: TrajectorySpec) -> RegridKernel:
    """Sinc kernel ``Q`` and its (pseudo)inverse ``R``; cached per trajectory."""
    return _kernel_cached(traj.kx_actual.tobytes(), traj.kx_target.tobytes())


def _kernel(k) -> RegridKernel:
    if isinstance(k, RegridKernel):
        return k
    if isinstance(k, GradientWaveform):
        k = trajectory_from_gradient(k)
    return build_regrid_kernel(k)


def regrid_line(line, kernel, direction: str = RECONSTRUCT) -> np.ndarray:
    """Multiply a line (or every row of a 2-D array) by ``Q`` or ``R``."""
    kernel = _kernel(kernel)
    line = np.asarray(line)
    if line.shape[-1] != kernel.n:
        raise DataError(f"line length {line.shape[-1]} does not match kernel order {kernel.n}")
    if direction == RECONSTRUCT:
        return line @ kernel.q
    if direction == FORWARD_MODEL:
        return line @ kernel.r
    raise ConfigurationError(f"unknown regrid direction {direction!r}")


# --------------------------------------------------------------------------
# Navigators and ghost phase
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NavigatorSet:
    """Three k-space navigator lines read forward, reverse, forward."""

    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    directions: tuple = (1, -1, 1)

    def __post_init__(self):
        lines = [np.asarray(x, dtype=np.complex128) for x in (self.n1, self.n2, self.n3)]
        if any(x.ndim != 1 for x in lines) or len({x.size for x in lines}) != 1:
            raise DataError("navigator lines must be 1-D and equally long")
        if tuple(self.directions) != (1, -1, 1):
            raise DataError("navigator direction pattern must be (+, -, +)")
        for name, x in zip(("n1", "n2", "n3"), lines):
            object.__setattr__(self, name, x)


@dataclass(frozen=True)
class GhostPhase:
    theta: np.ndarray
    valid: np.ndarray

    @property
    def filled(self) -> bool:
        return not bool(self.valid.all())


def fit_phase_slope(theta, weights=None):
    """Weighted least-squares line ``theta ~ c + s * x``; returns ``(s, c)``."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.arange(theta.size, dtype=np.float64)
    w = np.ones_like(theta) if weights is None else np.asarray(weights, dtype=np.float64)
    sw = np.sqrt(w)
    A = np.stack([np.ones_like(x), x], axis=1) * sw[:, None]
    (c, s), *_ = np.linalg.lstsq(A, theta * sw, rcond=None)
    return float(s), float(c)


def estimate_ghost_phase(nav: NavigatorSet, rel_tol: float = 1e-12) -> GhostPhase:
    """Half the forward/reverse phase difference of the navigators.

    ``theta = angle(sqrt(conj(F^-1 N1 + F^-1 N3) * F^-1 N2))`` with the
    principal square root, so ``theta`` lies in ``(-pi/2, pi/2]``. Samples
    where the product is numerically zero are filled by a magnitude-weighted
    linear fit over the valid ones.
    """
    f1, f2, f3 = (ifftc(x) for x in (nav.n1, nav.n2, nav.n3))
    prod = np.conj(f1 + f3) * f2
    theta = np.angle(np.sqrt(prod))
    mag = np.abs(prod)
    valid = mag > rel_tol * (mag.max() if mag.size else 0.0)
    if not valid.any():
        raise NumericalError("navigators carry no signal; ghost phase undefined")
    if not valid.all():
        idx = np.flatnonzero(valid)
        if idx.size >= 2:
            s, c = fit_phase_slope(np.where(valid, theta, 0.0), np.where(valid, mag, 0.0))
            theta = np.where(valid, theta, c + s * np.arange(theta.size))
        else:
            theta = np.where(valid, theta, theta[idx[0]])
    return GhostPhase(theta, valid)


def synthetic_navigators(image, theta) -> NavigatorSet:
    """Navigators consistent with a correction phase ``theta`` (per column).

    All three lines copy the centre k-space line of ``image``; the forward
    lines carry ``exp(-j theta)`` and the reverse line ``exp(+j theta)`` in
    the image-x domain, matching the ghosting convention of this module.
    """
    img = np.asarray(getattr(image, "data", image))
    hybrid_center = fftc(img, axis=0)[img.shape[0] // 2]
    theta = np.asarray(theta, dtype=np.float64)
    fwd = fftc(hybrid_center * np.exp(-1j * theta))
    rev = fftc(hybrid_center * np.exp(1j * theta))
    return NavigatorSet(fwd, rev, fwd.copy())


# --------------------------------------------------------------------------
# Ghosting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GhostSpec:
    """Ghost amplitude (rad) and per-row first/last tissue columns (-1 = empty)."""

    amplitude: float
    per_row_extent: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ConfigurationError("ghost amplitude must be finite")
        ext = np.asarray(self.per_row_extent, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "per_row_extent", ext)

    @property
    def empty(self) -> bool:
        return bool(np.all(self.per_row_extent[:, 0] < 0))


def ghost_spec_from_mask(mask, amplitude: float = 0.5, union: bool = False) -> GhostSpec:
    """Tissue extent per row of ``mask``; with ``union`` every row gets the
    column extent of the whole mask."""
    mask = np.asarray(getattr(mask, "data", mask), dtype=bool)
    h, w = mask.shape
    ext = np.full((h, 2), -1, dtype=np.int64)
    if union:
        cols = np.flatnonzero(mask.any(axis=0))
        if cols.size:
            ext[:] = (cols[0], cols[-1])
    else:
        for i in range(h):
            cols = np.flatnonzero(mask[i])
            if cols.size:
                ext[i] = (cols[0], cols[-1])
    return GhostSpec(float(amplitude), ext)


def ghost_phase_pattern(spec: GhostSpec, width: int) -> np.ndarray:
    """``(rows, width)`` map of the introduced phase: linear from
    ``+amplitude`` at the first tissue column to ``-amplitude`` at the last,
    zero outside."""
    ext = spec.per_row_extent
    if np.any(ext[:, 1] >= width):
        raise DataError("ghost extents exceed slice width")
    out = np.zeros((ext.shape[0], width))
    for i, (a, b) in enumerate(ext):
        if a >= 0:
            out[i, a:b + 1] = np.linspace(spec.amplitude, -spec.amplitude, b - a + 1)
    return out


def row_directions(height: int) -> np.ndarray:
    """+1 for forward rows (even), -1 for reverse rows (odd)."""
    return np.where(np.arange(height) % 2 == 0, 1, -1)


def apply_ghost_correction(hybrid, theta, line_directions=None) -> np.ndarray:
    """Forward rows times ``exp(j theta)``, reverse rows times ``exp(-j theta)``.

    ``theta`` is a per-column vector or a per-row ``(height, width)`` map.
    """
    hyb = np.asarray(getattr(hybrid, "data", hybrid))
    h, w = hyb.shape
    theta = np.asarray(getattr(theta, "theta", theta), dtype=np.float64)
    if theta.shape not in ((w,), (h, w)):
        raise DataError(f"theta shape {theta.shape} incompatible with slice {hyb.shape}")
    dirs = row_directions(h) if line_directions is None else np.asarray(line_directions)
    if dirs.shape != (h,):
        raise DataError("line_directions must give one sign per row")
    theta = np.broadcast_to(theta, (h, w))
    return hyb * np.exp(1j * dirs[:, None] * theta)


def introduce_ghosting(image, tissue, amplitude: float = 0.5, union: bool = False) -> np.ndarray:
    """Add a Nyquist ghost by row-alternating phase in hybrid x-ky space.

    ``tissue`` is a mask or a ready :class:`GhostSpec`.
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.complex128)
    spec = tissue if isinstance(tissue, GhostSpec) else ghost_spec_from_mask(tissue, amplitude, union)
    if spec.empty:
        warnings.warn("empty tissue mask: no ghosting introduced", GhostEstimateWarning, stacklevel=2)
        return img.copy()
    pattern = ghost_phase_pattern(spec, img.shape[1])
    hybrid = apply_ghost_correction(fftc(img, axis=0), pattern)
    return ifftc(hybrid, axis=0)


# --------------------------------------------------------------------------
# End-to-end chains
# --------------------------------------------------------------------------

def forward_epi(image, trajectory, ghost: GhostSpec | None = None, noise=None) -> np.ndarray:
    """Image -> EPI k-space: ghosting, 2-D FFT, inverse regridding, noise.

    Noise (a complex map of the image size) is added in the image domain of
    the artifact-bearing k-space and transformed back, so the returned
    k-space is what a reconstruction would receive.
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.complex128)
    kernel = _kernel(trajectory)
    if kernel.n != img.shape[1]:
        raise DataError(f"trajectory has {kernel.n} samples, slice width is {img.shape[1]}")
    if ghost is not None and not ghost.empty and ghost.amplitude != 0:
        img = introduce_ghosting(img, ghost)
    k = regrid_line(fft2c(img), kernel, FORWARD_MODEL)
    if noise is not None:
        n = np.asarray(getattr(noise, "data", noise))
        if n.shape != k.shape:
            raise DataError("noise map shape does not match slice")
        k = fft2c(ifft2c(k) + n)
    return k


def reconstruct_epi(kspace, trajectory, ghost_phase=None) -> np.ndarray:
    """EPI k-space -> image: regrid, inverse FFT along X, ghost correction,
    inverse FFT along Y.

    ``ghost_phase`` may be ``None`` (no correction), a per-column vector, a
    per-row map, a :class:`GhostPhase`, or a :class:`NavigatorSet`.
    """
    k = np.asarray(getattr(kspace, "data", kspace), dtype=np.complex128)
    kernel = _kernel(trajectory)
    hybrid = ifftc(regrid_line(k, kernel, RECONSTRUCT), axis=1)
    if isinstance(ghost_phase, NavigatorSet):
        ghost_phase = estimate_ghost_phase(ghost_phase)
    if ghost_phase is not None:
        hybrid = apply_ghost_correction(hybrid, ghost_phase)
    return ifftc(hybrid, axis=0)


def correction_for(ghost: GhostSpec | None, width: int):
    """Correction phase map that exactly undoes ``ghost``."""
    if ghost is None or ghost.empty:
        return None
    return -ghost_phase_pattern(ghost, width)
