"""Closed-form frequency-domain lifetime math.

A single exponential decay with lifetime ``tau`` measured at angular
modulation frequency ``w`` has phasor coordinates

    G = 1 / (1 + (w tau)^2),   S = w tau / (1 + (w tau)^2)

and lies on the universal semicircle. Emitters inside one pixel add as
amplitude-weighted complex numbers, which is why blurring mixes lifetimes
non-linearly.

Lifetimes are in ns, frequencies in MHz, angular frequency in rad/ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DomainError

DEFAULT_FREQUENCY_MHZ = 80.0
# pixels with re below this fraction of the field maximum get no lifetime
DEFAULT_MAGNITUDE_FLOOR = 1e-6


@dataclass(frozen=True)
class ModulationSpec:
    frequency_mhz: float = DEFAULT_FREQUENCY_MHZ

    def __post_init__(self):
        if not (self.frequency_mhz > 0 and math.isfinite(self.frequency_mhz)):
            raise DomainError(f"modulation frequency must be positive, got {self.frequency_mhz}")

    @property
    def angular_frequency(self) -> float:
        """Angular frequency in rad/ns."""
        return 2.0 * math.pi * self.frequency_mhz * 1e-3


@dataclass(frozen=True)
class Fluorophore:
    """One emitter. ``magnitude`` is concentration times cross-section."""

    tau_ns: float
    magnitude: float = 1.0

    def __post_init__(self):
        if not self.tau_ns >= 0:
            raise DomainError(f"lifetime must be >= 0, got {self.tau_ns}")
        if not self.magnitude >= 0:
            raise DomainError(f"magnitude must be >= 0, got {self.magnitude}")


class PhasorPoint(NamedTuple):
    g: float
    s: float


class ComplexSample(NamedTuple):
    re: float
    im: float


def single_exponential_phasor(tau_ns, mod: ModulationSpec = ModulationSpec()) -> PhasorPoint:
    """Phasor of a mono-exponential decay. Accepts scalars or arrays."""
    tau = np.asarray(tau_ns, dtype=float)
    if np.any(~(tau >= 0)):
        raise DomainError("lifetime must be >= 0")
    wt = mod.angular_frequency * tau
    denom = 1.0 + wt * wt
    g = 1.0 / denom
    s = wt / denom
    if g.ndim == 0:
        return PhasorPoint(float(g), float(s))
    return PhasorPoint(g, s)


def mixture_sample(emitters: Iterable[Fluorophore], mod: ModulationSpec = ModulationSpec()) -> ComplexSample:
    """Amplitude-weighted sum of the emitters' phasors."""
    re = 0.0
    im = 0.0
    for f in emitters:
        g, s = single_exponential_phasor(f.tau_ns, mod)
        re += f.magnitude * g
        im += f.magnitude * s
    return ComplexSample(re, im)


def phase_lifetime(sample: ComplexSample, mod: ModulationSpec = ModulationSpec()) -> float:
    """Phase lifetime ``im / (w re)``; NaN when ``re`` is not positive."""
    re, im = sample
    if not re > 0:
        return math.nan
    return im / (mod.angular_frequency * re)


def modulation_lifetime(
    sample: ComplexSample, mod: ModulationSpec = ModulationSpec(), amplitude: float = 1.0
) -> float:
    """Modulation lifetime from depth ``|sample| / amplitude``.

    Returns NaN when the modulation depth is outside ``(0, 1]``.
    """
    re, im = sample
    if not amplitude > 0:
        return math.nan
    m2 = (re * re + im * im) / (amplitude * amplitude)
    if not (0 < m2 <= 1):
        return math.nan
    return math.sqrt(1.0 / m2 - 1.0) / mod.angular_frequency


def lifetime_map(re, im, mod: ModulationSpec = ModulationSpec(), floor: float = DEFAULT_MAGNITUDE_FLOOR) -> np.ndarray:
    """Per-pixel phase lifetime of amplitude-weighted planes.

    Pixels whose ``re`` falls below ``floor * max(re)`` (or is not positive)
    are undefined and come back as NaN.
    """
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    if re.shape != im.shape:
        raise DomainError(f"plane shapes differ: {re.shape} vs {im.shape}")
    peak = np.max(re) if re.size else 0.0
    valid = (re > 0) & (re >= floor * peak)
    tau = np.full(re.shape, np.nan)
    np.divide(im, mod.angular_frequency * re, out=tau, where=valid)
    return tau
