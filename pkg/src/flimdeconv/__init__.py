"""Frequency-domain FLIM restoration: phasor math, PSF blur, RL / RL-TV deconvolution."""

from .errors import DomainError, FieldFormatError, BoundaryAmbiguityError
from .phasor import (
    ModulationSpec,
    Fluorophore,
    PhasorPoint,
    ComplexSample,
    single_exponential_phasor,
    mixture_sample,
    phase_lifetime,
    modulation_lifetime,
    lifetime_map,
)
from .optics import Kernel, ComplexField, ScalarField, gaussian_kernel, delta_kernel, mirror, convolve
from .deconv import DeconvConfig, ConvergenceTrace, rl_step, tv_factor, rl_tv_step, deconvolve_field
from .phantom import (
    PhantomSpec,
    NoiseSpec,
    make_phantom,
    add_gaussian_noise,
    add_poisson_noise,
    average_realizations,
    snr_db,
)
from .metrics import BoundaryEstimate, boundary_from_threshold, lifetime_rmse, extract_profile

__version__ = "0.1.0"
