"""Image-quality metrics, NEX averaging curves and derived diffusion maps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, NumericalError

COMPLEX = "complex"
MODULUS = "modulus"


def _arr(a):
    return np.asarray(getattr(a, "data", a))


def _region(test, ref, mask):
    """Apply the TISSUE convention: background zeroed in both images."""
    test = _arr(test).astype(np.float64)
    ref = _arr(ref).astype(np.float64)
    if test.shape != ref.shape:
        raise DataError(f"image shapes differ: {test.shape} vs {ref.shape}")
    if mask is None:
        return test, ref, np.ones(ref.shape, bool)
    mask = np.asarray(mask, bool)
    if mask.shape != ref.shape:
        raise DataError("region mask shape mismatch")
    return np.where(mask, test, 0.0), np.where(mask, ref, 0.0), mask


def psnr(test, ref, mask=None) -> float:
    """``10 log10(peak^2 / MSE)`` with ``peak = max(ref)`` over the region.

    With a mask, background is zeroed in both images and the MSE is taken
    over the masked pixels. Identical inputs give ``inf``.
    """
    t, r, m = _region(test, ref, mask)
    mse = float(np.mean((t[m] - r[m]) ** 2))
    if mse == 0:
        return math.inf
    peak = float(r[m].max())
    return 10.0 * math.log10(peak * peak / mse)


def _gauss_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def ssim_map(test, ref, data_range: float, k1=0.01, k2=0.03, size=11, sigma=1.5):
    x = np.asarray(test, dtype=np.float64)
    y = np.asarray(ref, dtype=np.float64)
    g = _gauss_window(size, sigma)

    def filt(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(test, ref, mask=None, data_range: float | None = None) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03).

    ``L`` defaults to the dynamic range of ``ref`` over the region; the map
    is averaged over the region. The masked variant zeroes background first.
    """
    t, r, m = _region(test, ref, mask)
    if data_range is None:
        data_range = float(r[m].max() - r[m].min())
        if data_range == 0:
            raise NumericalError("reference has zero dynamic range; pass data_range explicitly")
    if np.array_equal(t, r):
        return 1.0
    return float(ssim_map(t, r, data_range)[m].mean())


def mae(test, ref, mask=None) -> float:
    t, r, m = _region(test, ref, mask)
    return float(np.mean(np.abs(t[m] - r[m])))


def abs_error_map(test, ref) -> np.ndarray:
    return np.abs(_arr(test).astype(np.float64) - _arr(ref).astype(np.float64))


@dataclass(frozen=True)
class MetricsReport:
    psnr_db: float
    ssim: float
    mae: float
    region: str = "slice"
    metadata: dict = field(default_factory=dict)


def metrics(test, ref, mask=None, region: str | None = None, **metadata) -> MetricsReport:
    region = region or ("tissue" if mask is not None else "slice")
    return MetricsReport(psnr(test, ref, mask), ssim(test, ref, mask), mae(test, ref, mask), region, metadata)


# --------------------------------------------------------------------------
# Averaging
# --------------------------------------------------------------------------

def average_repetitions(instances, domain: str = COMPLEX) -> np.ndarray:
    """Modulus of the complex mean (COMPLEX) or mean of moduli (MODULUS)."""
    arrs = [_arr(a) for a in instances]
    if not arrs:
        raise DataError("no repetitions to average")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DataError("repetitions differ in shape")
    stack = np.stack(arrs)
    if domain == COMPLEX:
        return np.abs(stack.mean(axis=0))
    if domain == MODULUS:
        return np.abs(stack).mean(axis=0)
    raise DataError(f"unknown averaging domain {domain!r}")


@dataclass(frozen=True)
class NexCurve:
    values: np.ndarray  # index k-1 holds NEX = k
    domain: str = COMPLEX
    metric: str = "psnr"

    @property
    def n_max(self) -> int:
        return len(self.values)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nex", "value"])
            for k, v in enumerate(self.values, start=1):
                w.writerow([k, repr(float(v))])
        return path


def nex_curve(clean_ref, instance_generator, metric, domain: str = COMPLEX, n_max: int = 25,
              name: str = "psnr") -> NexCurve:
    """Metric of the running k-instance average against ``clean_ref``.

    ``instance_generator(k)`` must return repetition ``k`` (1-based)
    reproducibly; ``metric(test, ref)`` scores one averaged image.
    """
    ref = _arr(clean_ref)
    mean = None
    vals = []
    for k in range(1, n_max + 1):
        inst = _arr(instance_generator(k))
        inst = inst.astype(np.complex128) if domain == COMPLEX else np.abs(inst).astype(np.float64)
        # running mean; an instance equal to the current mean leaves it bit-identical
        mean = inst if mean is None else mean + (inst - mean) / k
        vals.append(metric(np.abs(mean), ref))
    return NexCurve(np.asarray(vals, dtype=np.float64), domain, name)


def nex_equivalent(curve, denoised_value: float):
    """Smallest NEX whose averaged metric reaches ``denoised_value``, else
    the string ``">n_max"``."""
    values = np.asarray(getattr(curve, "values", curve), dtype=np.float64)
    hits = np.flatnonzero(values >= denoised_value)
    return int(hits[0]) + 1 if hits.size else f">{values.size}"


# --------------------------------------------------------------------------
# Residual analysis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualAnalysis:
    mean_estimate: np.ndarray
    denoised_std: np.ndarray
    noisy_std: np.ndarray

    def ratio_map(self) -> np.ndarray:
        return self.noisy_std / np.maximum(self.denoised_std, 1e-12)

    def region_ratios(self, regions: dict) -> dict:
        """Std-reduction ratio (noisy / denoised, pixel-averaged) per region mask."""
        out = {}
        for name, m in regions.items():
            m = np.asarray(m, bool)
            out[name] = float(self.noisy_std[m].mean() / max(self.denoised_std[m].mean(), 1e-12))
        return out


def residual_mean_analysis(denoise_fn, clean, n_instances: int = 100, seed=0, noise_std: float = 1.0,
                           component: str = "real") -> ResidualAnalysis:
    """Denoise ``n_instances`` fresh noisy copies of ``clean``.

    ``denoise_fn(image) -> (denoised, estimate)``. Unit Gaussian noise is
    added to the real-valued ``clean`` slice. Returns the pixelwise mean of
    the noise estimates and the pixelwise std of the denoised outputs (and,
    for reference, of the noisy inputs).
    """
    clean = _arr(clean).astype(np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s_est = np.zeros_like(clean)
    s1 = np.zeros_like(clean)
    s2 = np.zeros_like(clean)
    n1 = np.zeros_like(clean)
    n2 = np.zeros_like(clean)
    for _ in range(n_instances):
        noisy = clean + noise_std * rng.standard_normal(clean.shape)
        den, est = denoise_fn(noisy)
        s_est += est
        s1 += den
        s2 += den * den
        n1 += noisy
        n2 += noisy * noisy
    n = float(n_instances)

    def std(a, b):
        return np.sqrt(np.maximum(b / n - (a / n) ** 2, 0.0) * n / max(n - 1, 1))

    return ResidualAnalysis(s_est / n, std(s1, s2), std(n1, n2))


def tissue_regions(clean, mask, edge_width: int = 1, homogeneous_radius: int = 2, tol: float = 1e-6):
    """Background, homogeneous-tissue and edge pixel masks of a clean slice.

    Homogeneous pixels have a constant clean value within their
    ``(2r+1)^2`` neighbourhood; edge pixels lie on a jump between
    neighbouring values.
    """
    c = _arr(clean).astype(np.float64)
    mask = np.asarray(mask, bool)
    fp = np.ones((2 * homogeneous_radius + 1,) * 2)
    local_range = ndimage.maximum_filter(c, footprint=fp) - ndimage.minimum_filter(c, footprint=fp)
    scale = max(float(np.abs(c).max()), 1e-300)
    homogeneous = mask & (local_range <= tol * scale)
    grad = ndimage.maximum_filter(c, size=2 * edge_width + 1) - ndimage.minimum_filter(c, size=2 * edge_width + 1)
    bg_far = ~ndimage.binary_dilation(mask, np.ones((7, 7)))
    edge = mask & (grad >= 0.25 * float(np.ptp(c))) if np.ptp(c) > 0 else np.zeros_like(mask)
    return {"background": bg_far, "tissue": homogeneous, "edge": edge}


def intensity_profile(image, row: int, one_based: bool = False) -> np.ndarray:
    a = _arr(image)
    r = row - 1 if one_based else row
    if not 0 <= r < a.shape[0]:
        raise DataError(f"row {row} out of range for height {a.shape[0]}")
    return a[r].copy()


def write_profile_csv(profile, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "value"])
        for i, v in enumerate(profile):
            w.writerow([i, repr(float(v))])
    return path


# --------------------------------------------------------------------------
# Derived diffusion quantities
# --------------------------------------------------------------------------

def root_sum_of_squares(coils) -> np.ndarray:
    arrs = [_arr(c) for c in coils]
    if not arrs:
        raise DataError("no coil images")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DataError("coil images differ in shape")
    return np.sqrt(sum(np.abs(a).astype(np.float64) ** 2 for a in arrs))


def trace_image(dwis) -> np.ndarray:
    """Pixelwise geometric mean across diffusion directions."""
    arrs = [_arr(d).astype(np.float64) for d in dwis]
    if not arrs:
        raise DataError("no diffusion-weighted images")
    stack = np.stack(arrs)
    if np.any(stack < 0):
        raise DataError("trace image needs non-negative intensities")
    prod = np.prod(stack, axis=0)
    # dedicated roots keep exact cubes/squares exact (216 ** (1/3) is not 6.0)
    if len(arrs) == 1:
        return prod
    if len(arrs) == 2:
        return np.sqrt(prod)
    if len(arrs) == 3:
        return np.cbrt(prod)
    return prod ** (1.0 / len(arrs))


def adc_map(b_values, images):
    """Least-squares ADC from ``ln S = ln S0 - b D`` per pixel.

    Non-positive samples are excluded pixelwise; pixels with fewer than two
    usable distinct b-values get ADC 0 and ``valid = False``. Returns
    ``(adc, valid)``.
    """
    b = np.asarray(b_values, dtype=np.float64)
    stack = np.stack([_arr(s).astype(np.float64) for s in images])
    if stack.shape[0] != b.size:
        raise DataError("one image per b-value required")
    if np.unique(b).size < 2:
        raise DataError("need at least two distinct b-values")
    use = stack > 0
    logs = np.log(np.where(use, stack, 1.0))
    w = use.astype(np.float64)
    bb = b[:, None, None]
    n = w.sum(0)
    sb = (w * bb).sum(0)
    sbb = (w * bb * bb).sum(0)
    sl = (w * logs).sum(0)
    sbl = (w * bb * logs).sum(0)
    den = n * sbb - sb * sb
    valid = (n >= 2) & (den > 1e-12 * np.maximum(n * sbb, 1e-300))
    slope = np.divide(n * sbl - sb * sl, den, out=np.zeros_like(den), where=valid)
    adc = np.where(valid, -slope, 0.0)
    return adc, valid
