"""PSF synthesis and the forward blur model.

Convolution always pads the field by the kernel radius (``reflect`` uses
half-sample symmetric extension, ``periodic`` wraps) and keeps the valid
part. The ``direct`` engine is an explicit tap-by-tap sum and serves as the
reference; the ``fft`` engine reproduces it through real FFTs on a
fast-length grid. When the boundary is ``reflect`` and the kernel is even
along each axis, half-sample reflection turns the blur into a diagonal
operator in the DCT-II basis, and the ``fft`` engine uses that instead
(no padding, smaller transforms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .errors import DomainError
from .phasor import ModulationSpec

BOUNDARY_MODES = ("reflect", "periodic")
ENGINES = ("direct", "fft")
DEFAULT_PITCH_NM = 300.0
DEFAULT_SIGMA_PX = 5.0


@dataclass(frozen=True, eq=False)
class Kernel:
    """Discrete PSF on an odd-sized 1D or 2D grid."""

    values: np.ndarray
    sigma_px: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2):
            raise DomainError(f"kernel must be 1D or 2D, got {v.ndim}D")
        if any(n % 2 == 0 for n in v.shape):
            raise DomainError(f"kernel extent must be odd in every axis, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("kernel weights must be finite and non-negative")
        if abs(v.sum() - 1.0) > 1e-12:
            raise DomainError(f"kernel weights must sum to 1, got {v.sum()!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def radius(self) -> int:
        """Largest half-extent over the axes."""
        return max(self.values.shape) // 2


@dataclass(eq=False)
class ComplexField:
    """Amplitude-weighted real/imaginary FLIM planes, shape ``(height, width)``."""

    re: np.ndarray
    im: np.ndarray
    pixel_pitch_nm: float = DEFAULT_PITCH_NM
    mod: ModulationSpec = field(default_factory=ModulationSpec)

    def __post_init__(self):
        self.re = _as_plane(self.re)
        self.im = _as_plane(self.im)
        if self.re.shape != self.im.shape:
            raise DomainError(f"plane shapes differ: {self.re.shape} vs {self.im.shape}")
        if not self.pixel_pitch_nm > 0:
            raise DomainError(f"pixel pitch must be positive, got {self.pixel_pitch_nm}")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise DomainError("field planes must be finite")

    @property
    def height(self) -> int:
        return self.re.shape[0]

    @property
    def width(self) -> int:
        return self.re.shape[1]

    def planes(self) -> np.ndarray:
        return np.stack([self.re, self.im])

    def with_planes(self, re, im) -> "ComplexField":
        return ComplexField(re, im, self.pixel_pitch_nm, self.mod)


@dataclass(eq=False)
class ScalarField:
    """Single-plane raster (lifetime maps, kernels, intensity)."""

    plane: np.ndarray
    pixel_pitch_nm: float = DEFAULT_PITCH_NM
    mod: ModulationSpec = field(default_factory=ModulationSpec)

    def __post_init__(self):
        self.plane = _as_plane(self.plane)
        if not self.pixel_pitch_nm > 0:
            raise DomainError(f"pixel pitch must be positive, got {self.pixel_pitch_nm}")

    @property
    def height(self) -> int:
        return self.plane.shape[0]

    @property
    def width(self) -> int:
        return self.plane.shape[1]


def _as_plane(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    if a.ndim != 2:
        raise DomainError(f"plane must be 1D or 2D, got {a.ndim}D")
    return a


def gaussian_kernel(sigma_px: float, dims: int = 2) -> Kernel:
    """Isotropic Gaussian truncated at ``ceil(4 sigma)`` and normalized to unit sum."""
    if not (sigma_px > 0 and math.isfinite(sigma_px)):
        raise DomainError(f"sigma must be positive, got {sigma_px}")
    if dims not in (1, 2):
        raise DomainError(f"dims must be 1 or 2, got {dims}")
    r = int(math.ceil(4.0 * sigma_px))
    x = np.arange(-r, r + 1, dtype=float)
    if dims == 1:
        v = np.exp(-(x * x) / (2.0 * sigma_px * sigma_px))
    else:
        r2 = x[:, None] ** 2 + x[None, :] ** 2
        v = np.exp(-r2 / (2.0 * sigma_px * sigma_px))
    return Kernel(v / v.sum(), sigma_px=float(sigma_px))


def delta_kernel(dims: int = 2) -> Kernel:
    return Kernel(np.ones((1,) * dims))


def mirror(k: Kernel) -> Kernel:
    """``h(-s)``: the kernel reversed along every axis."""
    v = k.values[(slice(None, None, -1),) * k.ndim]
    return Kernel(v.copy(), sigma_px=k.sigma_px)


class Blur:
    """Convolution operator for a fixed kernel, boundary mode, engine and plane shape.

    Works on arrays whose last two axes are ``(height, width)``; leading axes
    are batched. A 1D kernel acts along rows only. The FFT engine caches the
    kernel spectrum and a padding buffer, so build one ``Blur`` per
    deconvolution run and do not share it between threads.
    """

    def __init__(self, kernel: Kernel, shape, boundary="reflect", engine="fft"):
        if boundary not in BOUNDARY_MODES:
            raise DomainError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")
        if engine not in ENGINES:
            raise DomainError(f"engine must be one of {ENGINES}, got {engine!r}")
        h, w = shape
        self._axes = (-1,) if kernel.ndim == 1 else (-2, -1)
        self._extent = (h, w)[-kernel.ndim:]
        if any(e > n for e, n in zip(kernel.values.shape, self._extent)):
            raise DomainError(f"kernel extent {kernel.values.shape} exceeds field extent {(h, w)}")
        self.kernel = kernel
        self.shape = (h, w)
        self.boundary = boundary
        self.engine = engine
        self._radii = tuple(e // 2 for e in kernel.values.shape)
        self._buffers = {}
        self._dct_gain = None
        if engine == "fft" and boundary == "reflect" and _axis_symmetric(kernel.values):
            self._dct_gain = self._dct_transfer()
        elif engine == "fft":
            padded = [n + 2 * r for n, r in zip(self._extent, self._radii)]
            self._fft_shape = tuple(sfft.next_fast_len(n, real=True) for n in padded)
            self._spectrum = sfft.rfftn(kernel.values, s=self._fft_shape, axes=self._axes)

    def _dct_transfer(self):
        # eigenvalues of the symmetric-extension blur: sum_j h_j cos(pi k j / n) per axis
        gain = self.kernel.values
        for ax, n, r in zip(self._axes, self._extent, self._radii):
            j = np.arange(-r, r + 1, dtype=float)
            c = np.cos(np.pi * np.outer(np.arange(n), j) / n)
            gain = np.moveaxis(np.tensordot(gain, c, axes=([ax], [1])), -1, ax)
        return gain

    def _pad(self, a):
        # same result as np.pad(symmetric | wrap) for r < n; reuses one buffer per input shape
        if not any(self._radii):
            return a
        out = self._buffers.get(a.shape)
        if out is None:
            shape = list(a.shape)
            for ax, r in zip(self._axes, self._radii):
                shape[ax] += 2 * r
            out = self._buffers[a.shape] = np.empty(shape)
        idx = [slice(None)] * a.ndim
        for ax, r in zip(self._axes, self._radii):
            idx[ax] = slice(r, r + a.shape[ax])
        out[tuple(idx)] = a
        for ax, r in zip(self._axes, self._radii):
            n = a.shape[ax]
            if self.boundary == "periodic":
                pairs = ((slice(0, r), slice(n, n + r)), (slice(r + n, None), slice(r, 2 * r)))
            else:
                pairs = ((slice(0, r), slice(2 * r - 1, r - 1, -1) if r else slice(0, 0)),
                         (slice(r + n, None), slice(r + n - 1, n - 1, -1) if r else slice(0, 0)))
            for dst, src in pairs:
                idx[ax] = dst
                d = tuple(idx)
                idx[ax] = src
                out[d] = out[tuple(idx)]
            # later axes see this axis fully padded
            idx[ax] = slice(None)
        return out

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.shape[-2:] != self.shape:
            raise DomainError(f"plane shape {a.shape[-2:]} does not match operator shape {self.shape}")
        if self._dct_gain is not None:
            spec = sfft.dctn(a, type=2, axes=self._axes)
            spec *= self._dct_gain
            return sfft.idctn(spec, type=2, axes=self._axes, overwrite_x=True)
        padded = self._pad(a)
        if self.engine == "direct":
            return self._direct(padded)
        return self._fft(padded)

    def _direct(self, p):
        # out[x] = sum_j k[j] p[x - j], fixed tap order
        k = self.kernel.values
        if k.ndim == 1:
            (r,), n = self._radii, self.shape[1]
            out = None
            for j in range(2 * r + 1):
                start = 2 * r - j
                term = k[j] * p[..., start:start + n]
                out = term if out is None else out + term
            return out
        (ry, rx), (h, w) = self._radii, self.shape
        out = None
        for jy in range(2 * ry + 1):
            sy = 2 * ry - jy
            for jx in range(2 * rx + 1):
                sx = 2 * rx - jx
                term = k[jy, jx] * p[..., sy:sy + h, sx:sx + w]
                out = term if out is None else out + term
        return out

    def _fft(self, p):
        spec = sfft.rfftn(p, s=self._fft_shape, axes=self._axes)
        spec *= self._spectrum
        full = sfft.irfftn(spec, s=self._fft_shape, axes=self._axes, overwrite_x=True)
        idx = [slice(None)] * full.ndim
        for ax, n, r in zip(self._axes, self._extent, self._radii):
            idx[ax] = slice(2 * r, 2 * r + n)
        return full[tuple(idx)]


def _axis_symmetric(v) -> bool:
    return all(np.array_equal(v, np.flip(v, axis=ax)) for ax in range(v.ndim))


def convolve_plane(plane, k: Kernel, boundary="reflect", engine="fft") -> np.ndarray:
    plane = np.asarray(plane, dtype=float)
    squeeze = plane.ndim == 1
    if squeeze:
        plane = plane[np.newaxis, :]
    out = Blur(k, plane.shape[-2:], boundary, engine)(plane)
    return out[0] if squeeze else out


def convolve(field: ComplexField, k: Kernel, boundary="reflect", engine="fft") -> ComplexField:
    """Blur both planes of ``field`` with the same kernel."""
    blur = Blur(k, field.re.shape, boundary, engine)
    return field.with_planes(blur(field.re), blur(field.im))
