"""EPI diffusion-weighted MRI simulation, reconstruction and CNN denoising.

Submodules:

* :mod:`~epidenoise.core` -- centred FFTs, slice containers, segmentation
* :mod:`~epidenoise.phantom` -- tissue tables, signal synthesis, phantoms
* :mod:`~epidenoise.phasefield` -- polynomial phase maps
* :mod:`~epidenoise.epi` -- ramp-sampled trajectories, regridding, Nyquist ghosting
* :mod:`~epidenoise.calibration` -- PSF blur/estimation, noise maps, SNR scaling
* :mod:`~epidenoise.motion` -- affine inter-scan motion and registration
* :mod:`~epidenoise.denoiser` -- residual SRCNN with numpy backpropagation
* :mod:`~epidenoise.evaluation` -- metrics, averaging, residual and ADC analyses
* :mod:`~epidenoise.experiment` -- seeded dataset / training / evaluation pipeline
"""

from .errors import ConfigurationError, DataError, NumericalError
from .core import Domain, RealSlice, ComplexSlice, Volume, fft2c, ifft2c
from .epi import forward_epi, reconstruct_epi, build_regrid_kernel, estimate_ghost_phase, ramp_sampled_waveform
from .denoiser import SrcnnModel, TrainConfig, denoise, train, save_model, load_model
from .evaluation import psnr, ssim, average_repetitions

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DataError", "NumericalError",
    "Domain", "RealSlice", "ComplexSlice", "Volume", "fft2c", "ifft2c",
    "forward_epi", "reconstruct_epi", "build_regrid_kernel", "estimate_ghost_phase", "ramp_sampled_waveform",
    "SrcnnModel", "TrainConfig", "denoise", "train", "save_model", "load_model",
    "psnr", "ssim", "average_repetitions",
]
