"""Two-fluorophore phantoms, noise injection and realization averaging.

Random streams come from numpy's PCG64 seeded through
``SeedSequence(seed, spawn_key=(realization,))``, so realization ``r`` of a
given base seed is the same on every machine and independent of how many
other realizations run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .errors import DomainError, RealizationError
from .optics import DEFAULT_PITCH_NM, ComplexField
from .phasor import Fluorophore, ModulationSpec, mixture_sample

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence(entropy=seed, spawn_key=(realization,))"


@dataclass(frozen=True)
class PhantomSpec:
    """Vertical interface: columns ``x < boundary_px`` hold ``left``, the rest ``right``."""

    width: int
    boundary_px: int
    left: Fluorophore
    right: Fluorophore
    height: int = 1
    mod: ModulationSpec = field(default_factory=ModulationSpec)
    pixel_pitch_nm: float = DEFAULT_PITCH_NM

    def __post_init__(self):
        if self.width < 2 or self.height < 1:
            raise DomainError(f"degenerate phantom dimensions {self.width}x{self.height}")
        if not 0 < self.boundary_px < self.width:
            raise DomainError(f"boundary {self.boundary_px} outside (0, {self.width})")
        if not self.pixel_pitch_nm > 0:
            raise DomainError("pixel pitch must be positive")

    @property
    def true_boundary_px(self) -> float:
        """Interface position in pixel-centre coordinates."""
        return self.boundary_px - 0.5

    @property
    def threshold_ns(self) -> float:
        return 0.5 * (self.left.tau_ns + self.right.tau_ns)

    @property
    def weak_side(self) -> int:
        """+1 if the right emitter is the weaker one (or they are equal), else -1."""
        return 1 if self.right.magnitude <= self.left.magnitude else -1


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma: float = 0.05
    seed: int = 0
    realizations: int = 100

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise DomainError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.realizations < 1:
            raise DomainError(f"realizations must be >= 1, got {self.realizations}")


def noise_rng(seed: int, realization: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(realization),))
    return np.random.Generator(np.random.PCG64(ss))


def make_phantom(spec: PhantomSpec) -> Tuple[ComplexField, np.ndarray]:
    """Ideal amplitude-weighted field and its piecewise-constant lifetime truth."""
    left = mixture_sample([spec.left], spec.mod)
    right = mixture_sample([spec.right], spec.mod)
    is_left = np.arange(spec.width) < spec.boundary_px
    row_re = np.where(is_left, left.re, right.re)
    row_im = np.where(is_left, left.im, right.im)
    row_tau = np.where(is_left, spec.left.tau_ns, spec.right.tau_ns).astype(float)
    shape = (spec.height, spec.width)
    field_ = ComplexField(
        np.broadcast_to(row_re, shape),
        np.broadcast_to(row_im, shape),
        spec.pixel_pitch_nm,
        spec.mod,
    )
    return field_, np.broadcast_to(row_tau, shape).copy()


def add_gaussian_noise(field_: ComplexField, noise: NoiseSpec, realization: int = 0) -> ComplexField:
    """Add independent N(0, sigma^2) noise to each plane. Negative values are kept."""
    if noise.sigma == 0:
        return field_.with_planes(field_.re.copy(), field_.im.copy())
    rng = noise_rng(noise.seed, realization)
    n = rng.normal(0.0, noise.sigma, size=(2,) + field_.re.shape)
    return field_.with_planes(field_.re + n[0], field_.im + n[1])


def add_poisson_noise(field_: ComplexField, peak_counts: float, seed: int, realization: int = 0) -> ComplexField:
    """Scale so the brightest pixel of either plane holds ``peak_counts``, sample, scale back."""
    if not peak_counts > 0:
        raise DomainError(f"peak_counts must be positive, got {peak_counts}")
    planes = field_.planes()
    if np.any(planes < 0):
        raise DomainError("Poisson noise needs a non-negative field")
    peak = planes.max()
    if peak == 0:
        return field_.with_planes(field_.re.copy(), field_.im.copy())
    scale = peak_counts / peak
    counts = noise_rng(seed, realization).poisson(planes * scale)
    out = counts / scale
    return field_.with_planes(out[0], out[1])


def clip_negative(field_: ComplexField) -> ComplexField:
    return field_.with_planes(np.maximum(field_.re, 0.0), np.maximum(field_.im, 0.0))


def snr_db(signal_amplitude: float, sigma: float) -> float:
    if not (signal_amplitude > 0 and sigma > 0):
        raise DomainError("signal amplitude and sigma must both be positive")
    return 20.0 * math.log10(signal_amplitude / sigma)


Result = Union[ComplexField, np.ndarray]


class _RunningMean:
    # incremental mean: identical inputs reproduce the input exactly
    def __init__(self):
        self.mean = None
        self.count = None

    def add(self, a: np.ndarray):
        finite = np.isfinite(a)
        if self.mean is None:
            self.mean = np.where(finite, a, 0.0)
            self.count = finite.astype(np.int64)
            return
        self.count += finite
        delta = np.where(finite, a - self.mean, 0.0)
        safe = np.maximum(self.count, 1)
        self.mean = self.mean + delta / safe

    def result(self):
        return np.where(self.count > 0, self.mean, np.nan)


def average_realizations(
    pipeline: Callable[[ComplexField], Result],
    noise: NoiseSpec,
    field_: ComplexField,
    progress: Optional[Callable[[int], None]] = None,
) -> Result:
    """Mean of ``pipeline(add_gaussian_noise(field_, realization=r))`` over all realizations.

    ``pipeline`` may return a ComplexField (planes averaged) or an array such
    as a lifetime map (NaN pixels excluded per pixel). Accumulation runs in
    realization order.
    """
    acc = _RunningMean()
    template = None
    for r in range(noise.realizations):
        try:
            out = pipeline(add_gaussian_noise(field_, noise, r))
        except Exception as exc:
            raise RealizationError(r, exc) from exc
        if isinstance(out, ComplexField):
            template = out
            acc.add(out.planes())
        else:
            acc.add(np.asarray(out, dtype=float))
        if progress is not None:
            progress(r)
    mean = acc.result()
    if template is not None:
        return template.with_planes(mean[0], mean[1])
    return mean
