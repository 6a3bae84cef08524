"""Richardson-Lucy and RL-TV deconvolution of FLIM planes.

One RL-TV iteration on a non-negative plane ``o`` given measurement ``i``
and PSF ``h``::

    o <- o * [ (i / max(o*h, eps_div)) * h(-s) ] / max(1 - lam div(grad o / |grad o|), denom_floor)

With ``lam = 0`` the TV factor is exactly one and the update is plain RL.
The update is applied independently to the real and imaginary planes of a
complex FLIM field; the lifetime is recovered afterwards from their ratio.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DomainError
from .optics import BOUNDARY_MODES, ENGINES, Blur, ComplexField, Kernel, mirror

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.005
DEFAULT_ITERATIONS = 50


@dataclass(frozen=True)
class DeconvConfig:
    iterations: int = DEFAULT_ITERATIONS
    lam: float = DEFAULT_LAMBDA
    eps_div: float = 1e-12
    eps_tv: float = 1e-8
    denom_floor: float = 0.1
    boundary: str = "reflect"
    engine: str = "fft"

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise DomainError(f"iterations must be an integer >= 1, got {self.iterations}")
        if not self.lam >= 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not (self.eps_div > 0 and self.eps_tv > 0):
            raise DomainError("numerical guards must be positive")
        if not 0 < self.denom_floor <= 1:
            raise DomainError(f"denom_floor must lie in (0, 1], got {self.denom_floor}")
        if self.boundary not in BOUNDARY_MODES:
            raise DomainError(f"boundary must be one of {BOUNDARY_MODES}")
        if self.engine not in ENGINES:
            raise DomainError(f"engine must be one of {ENGINES}")


@dataclass
class ConvergenceTrace:
    """Per-iteration residual ``||i - o_k*h||_2`` and max relative change of ``o``."""

    residual: List[float] = field(default_factory=list)
    max_rel_change: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.residual)


def _check_plane(a, name, eps):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite values")
    low = a.min() if a.size else 0.0
    if low < -eps:
        raise DomainError(f"{name} has negative values (min {low:g}); offset or mask first")
    if low < 0:
        a = np.maximum(a, 0.0)
    return a


class _Operators:
    def __init__(self, k: Kernel, shape, cfg: DeconvConfig):
        self.forward = Blur(k, shape, cfg.boundary, cfg.engine)
        self.adjoint = Blur(mirror(k), shape, cfg.boundary, cfg.engine)


def _as2d(a):
    a = np.asarray(a, dtype=float)
    return a[np.newaxis, :] if a.ndim == 1 else a


def _rl_update(o, i, ops: _Operators, eps_div):
    blurred = ops.forward(o)
    ratio = np.maximum(blurred, eps_div)
    np.divide(i, ratio, out=ratio)
    back = ops.adjoint(ratio)
    back *= o
    return back, blurred


class _TVWorkspace:
    """Scratch planes for the TV factor; the returned factor is overwritten by the next call."""

    def __init__(self, shape):
        self.gx, self.gy, self.norm, self.div = (np.empty(shape) for _ in range(4))

    def factor(self, o, cfg: DeconvConfig) -> np.ndarray:
        gx, gy, norm, div = self.gx, self.gy, self.norm, self.div
        np.subtract(o[:, 1:], o[:, :-1], out=gx[:, :-1])
        gx[:, -1] = 0.0
        np.subtract(o[1:, :], o[:-1, :], out=gy[:-1, :])
        gy[-1, :] = 0.0
        np.multiply(gx, gx, out=norm)
        np.multiply(gy, gy, out=div)
        np.add(norm, div, out=norm)
        np.add(norm, cfg.eps_tv * cfg.eps_tv, out=norm)
        np.sqrt(norm, out=norm)
        np.divide(gx, norm, out=gx)
        np.divide(gy, norm, out=gy)
        np.copyto(div, gx)
        np.subtract(div[:, 1:], gx[:, :-1], out=div[:, 1:])
        np.add(div, gy, out=div)
        np.subtract(div[1:, :], gy[:-1, :], out=div[1:, :])
        # 1 / max(1 - lam * div, floor)
        np.multiply(div, -cfg.lam, out=div)
        np.add(div, 1.0, out=div)
        np.maximum(div, cfg.denom_floor, out=div)
        return np.reciprocal(div, out=div)


def tv_factor(o_k, cfg: DeconvConfig = DeconvConfig()) -> np.ndarray:
    """Multiplicative TV correction ``1 / max(1 - lam div(grad o/|grad o|), denom_floor)``.

    Forward differences with a replicated last sample for the gradient,
    backward differences for the divergence (its negative adjoint).
    """
    o = np.asarray(o_k, dtype=float)
    squeeze = o.ndim == 1
    o = _as2d(o)
    factor = _TVWorkspace(o.shape).factor(o, cfg)
    return factor[0] if squeeze else factor


def rl_step(o_k, i, k: Kernel, cfg: DeconvConfig = DeconvConfig()) -> np.ndarray:
    """One plain Richardson-Lucy update of ``o_k`` towards measurement ``i``."""
    o = _check_plane(o_k, "estimate", 0.0)
    meas = _check_plane(i, "measurement", 0.0)
    squeeze = o.ndim == 1
    o, meas = _as2d(o), _as2d(meas)
    out, _ = _rl_update(o, meas, _Operators(k, o.shape, cfg), cfg.eps_div)
    return out[0] if squeeze else out


def rl_tv_step(o_k, i, k: Kernel, cfg: DeconvConfig = DeconvConfig()) -> np.ndarray:
    """RL update times the TV factor of ``o_k``; identical to ``rl_step`` when ``lam == 0``."""
    o = _check_plane(o_k, "estimate", 0.0)
    meas = _check_plane(i, "measurement", 0.0)
    squeeze = o.ndim == 1
    o, meas = _as2d(o), _as2d(meas)
    out, _ = _rl_update(o, meas, _Operators(k, o.shape, cfg), cfg.eps_div)
    out *= tv_factor(o, cfg)
    return out[0] if squeeze else out


def deconvolve_plane(
    measured, k: Kernel, cfg: DeconvConfig = DeconvConfig(), start: Optional[np.ndarray] = None,
    track: bool = True,
) -> Tuple[np.ndarray, ConvergenceTrace]:
    """Run ``cfg.iterations`` RL-TV steps on one plane, starting from ``start`` or the data.

    With ``track=False`` the trace stays empty and its per-iteration cost is skipped.
    """
    i = _check_plane(measured, "measurement", cfg.eps_div)
    squeeze = i.ndim == 1
    i = _as2d(i)
    o = i.copy() if start is None else _as2d(_check_plane(start, "start", 0.0)).copy()
    if o.shape != i.shape:
        raise DomainError(f"start shape {o.shape} differs from measurement shape {i.shape}")
    ops = _Operators(k, i.shape, cfg)
    tv = _TVWorkspace(i.shape)
    change, scale = np.empty(i.shape), np.empty(i.shape)
    trace = ConvergenceTrace()
    for _ in range(cfg.iterations):
        nxt, blurred = _rl_update(o, i, ops, cfg.eps_div)
        if cfg.lam != 0:
            nxt *= tv.factor(o, cfg)
        if track:
            blurred -= i
            trace.residual.append(float(np.linalg.norm(blurred)))
            np.subtract(nxt, o, out=change)
            np.abs(change, out=change)
            np.abs(o, out=scale)
            np.maximum(scale, cfg.eps_div, out=scale)
            change /= scale
            trace.max_rel_change.append(float(change.max()))
        o = nxt
    if track:
        log.debug("deconvolved plane %s: final residual %.3g", i.shape, trace.residual[-1])
    return (o[0] if squeeze else o), trace


def deconvolve_field(
    measured: ComplexField, k: Kernel, cfg: DeconvConfig = DeconvConfig(), track: bool = True
) -> Tuple[ComplexField, Tuple[ConvergenceTrace, ConvergenceTrace]]:
    """Deconvolve the real and imaginary planes independently, each from its own data."""
    re, tr_re = deconvolve_plane(measured.re, k, cfg, track=track)
    im, tr_im = deconvolve_plane(measured.im, k, cfg, track=track)
    return measured.with_planes(re, im), (tr_re, tr_im)
