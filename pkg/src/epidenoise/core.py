"""Image / k-space containers, centered unitary FFTs and elementary pixel math.

Arrays are stored row-major with shape ``(height, width)``: rows run along Y
(phase encoding), columns along X (frequency encoding / readout).

All Fourier transforms here are unitary (``1/sqrt(N)`` both ways) and
centered, i.e. the zero frequency sits at index ``N // 2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class Domain(str, enum.Enum):
    IMAGE = "image"
    HYBRID_XKY = "hybrid"
    KSPACE = "kspace"


class DomainError(ValueError):
    """Raised when a transform is requested from the wrong domain."""


def fftc(a, axis=-1):
    """Centered unitary forward FFT along one axis."""
    a = np.fft.ifftshift(a, axes=axis)
    a = np.fft.fft(a, axis=axis, norm="ortho")
    return np.fft.fftshift(a, axes=axis)


def ifftc(a, axis=-1):
    """Centered unitary inverse FFT along one axis."""
    a = np.fft.ifftshift(a, axes=axis)
    a = np.fft.ifft(a, axis=axis, norm="ortho")
    return np.fft.fftshift(a, axes=axis)


def fft2c(image):
    """Image -> k-space (both axes)."""
    return fftc(fftc(image, axis=0), axis=1)


def ifft2c(kspace):
    """k-space -> image (both axes)."""
    return ifftc(ifftc(kspace, axis=1), axis=0)


def _check_spacing(spacing):
    if len(spacing) != 2 or min(spacing) <= 0:
        raise ValueError(f"spacing must be two positive values, got {spacing}")


@dataclass(frozen=True)
class RealSlice:
    data: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("RealSlice data must be 2-D")
        if not np.all(np.isfinite(data)):
            raise ValueError("RealSlice data must be finite")
        _check_spacing(self.spacing)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ComplexSlice:
    data: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)
    domain: Domain = Domain.IMAGE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ValueError("ComplexSlice data must be 2-D")
        if not np.all(np.isfinite(data)):
            raise ValueError("ComplexSlice data must be finite")
        _check_spacing(self.spacing)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Volume:
    """Ordered stack of equally sized slices."""

    slices: tuple
    slice_thickness: float = 1.0
    spacing: tuple[float, float] = (1.0, 1.0)
    domain: Domain = Domain.IMAGE
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = [np.asarray(getattr(s, "data", s)) for s in self.slices]
        if not arrays:
            raise ValueError("Volume must contain at least one slice")
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays) or len(shape) != 2:
            raise ValueError("all slices of a Volume must share 2-D dimensions")
        object.__setattr__(self, "slices", tuple(arrays))
        object.__setattr__(self, "domain", Domain(self.domain))
        object.__setattr__(self, "_array", np.stack(arrays))

    @classmethod
    def from_array(cls, array, **kwargs) -> "Volume":
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[None]
        return cls(tuple(array), **kwargs)

    def to_array(self) -> np.ndarray:
        return self._array.copy()

    def __len__(self):
        return len(self.slices)


def fft_cols(slc: ComplexSlice, inverse: bool = False) -> ComplexSlice:
    """Transform every column along Y: IMAGE <-> HYBRID_XKY."""
    src, dst = (Domain.HYBRID_XKY, Domain.IMAGE) if inverse else (Domain.IMAGE, Domain.HYBRID_XKY)
    if slc.domain is not src:
        raise DomainError(f"fft_cols(inverse={inverse}) needs {src.value} data, got {slc.domain.value}")
    op = ifftc if inverse else fftc
    return ComplexSlice(op(slc.data, axis=0), slc.spacing, dst)


def fft_rows(slc: ComplexSlice, inverse: bool = False) -> ComplexSlice:
    """Transform every row along X: HYBRID_XKY <-> KSPACE."""
    src, dst = (Domain.KSPACE, Domain.HYBRID_XKY) if inverse else (Domain.HYBRID_XKY, Domain.KSPACE)
    if slc.domain is not src:
        raise DomainError(f"fft_rows(inverse={inverse}) needs {src.value} data, got {slc.domain.value}")
    op = ifftc if inverse else fftc
    return ComplexSlice(op(slc.data, axis=1), slc.spacing, dst)


def modulus(data):
    """Pixelwise magnitude; accepts a ComplexSlice or a complex array."""
    if isinstance(data, ComplexSlice):
        return RealSlice(np.abs(data.data), data.spacing)
    return np.abs(data)


def segment_object(image, threshold: float, closing_radius: int = 1) -> np.ndarray:
    """Threshold an intensity image and close small holes.

    Closing uses a ``(2r+1) x (2r+1)`` square. Pixels beyond the image edge
    count as background for the dilation and as foreground for the erosion,
    so closing never removes pixels that passed the threshold.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    mask = data > threshold
    if closing_radius <= 0 or not mask.any():
        return mask
    struct = np.ones((2 * closing_radius + 1,) * 2, dtype=bool)
    dilated = ndimage.binary_dilation(mask, structure=struct, border_value=0)
    return ndimage.binary_erosion(dilated, structure=struct, border_value=1)
