"""Boundary localization and lifetime error measures.

Positions are in pixel-centre coordinates: sample ``j`` sits at ``x = j``,
so the interface between columns ``b - 1`` and ``b`` is at ``b - 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import BoundaryAmbiguityError, DomainError
from .optics import DEFAULT_PITCH_NM, ScalarField

CENTRAL_FRACTION = 0.8


@dataclass(frozen=True)
class BoundaryEstimate:
    position_px: float
    position_nm: float
    # signed offset from the true interface; positive points into the weaker emitter
    shift_px: Optional[float] = None


class Profile(NamedTuple):
    x_px: np.ndarray
    x_nm: np.ndarray
    values: np.ndarray


def central_slice(n: int, fraction: float = CENTRAL_FRACTION) -> slice:
    margin = int(math.floor(n * (1.0 - fraction) / 2.0 + 1e-9))
    return slice(margin, n - margin)


def central_mask(shape, fraction: float = CENTRAL_FRACTION) -> np.ndarray:
    """Inner ``fraction`` of each axis longer than one pixel."""
    mask = np.zeros(shape, dtype=bool)
    idx = tuple(central_slice(n, fraction) if n > 1 else slice(None) for n in shape)
    mask[idx] = True
    return mask


def boundary_from_threshold(
    profile,
    tau_threshold: float,
    true_position_px: Optional[float] = None,
    weak_side: int = 1,
    pixel_pitch_nm: float = DEFAULT_PITCH_NM,
    central_fraction: float = CENTRAL_FRACTION,
) -> BoundaryEstimate:
    """Subpixel position where ``profile`` crosses ``tau_threshold``.

    Only the central ``central_fraction`` of the profile is searched. The
    crossing is linearly interpolated between the bracketing samples; NaN
    samples never bracket a crossing.

    Raises
    ------
    BoundaryAmbiguityError
        If the central region crosses the threshold zero or several times.
    """
    v = np.asarray(profile, dtype=float).ravel()
    region = central_slice(v.size, central_fraction)
    offset = region.start
    d = v[region] - tau_threshold
    a, b = d[:-1], d[1:]
    with np.errstate(invalid="ignore"):
        up = (a < 0) & (b >= 0)
        down = (a > 0) & (b <= 0)
    hits = np.flatnonzero(up | down)
    if hits.size != 1:
        raise BoundaryAmbiguityError(int(hits.size))
    j = int(hits[0]) + offset
    pos = j + (tau_threshold - v[j]) / (v[j + 1] - v[j])
    shift = None
    if true_position_px is not None:
        shift = float((pos - true_position_px) * (1 if weak_side >= 0 else -1))
    return BoundaryEstimate(float(pos), float(pos * pixel_pitch_nm), shift)


def lifetime_rmse(estimate, truth, mask=None) -> float:
    """RMS lifetime error over ``mask`` pixels where the estimate is defined."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise DomainError(f"shape mismatch {est.shape} vs {tru.shape}")
    use = np.isfinite(est) & np.isfinite(tru)
    if mask is not None:
        use &= np.asarray(mask, dtype=bool)
    if not use.any():
        raise DomainError("no pixels selected for RMSE")
    diff = est[use] - tru[use]
    return float(np.sqrt(np.mean(diff * diff)))


def extract_profile(data, row: Optional[int] = None, pixel_pitch_nm: Optional[float] = None) -> Profile:
    """Copy one row of a lifetime map or plane, with pixel and physical x coordinates.

    ``row`` defaults to the centre row.
    """
    if isinstance(data, ScalarField):
        pitch = data.pixel_pitch_nm if pixel_pitch_nm is None else pixel_pitch_nm
        a = data.plane
    else:
        pitch = DEFAULT_PITCH_NM if pixel_pitch_nm is None else pixel_pitch_nm
        a = np.asarray(data, dtype=float)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    if a.ndim != 2:
        raise DomainError(f"expected a 1D or 2D map, got {a.ndim}D")
    if row is None:
        row = a.shape[0] // 2
    if not 0 <= row < a.shape[0]:
        raise DomainError(f"row {row} out of range [0, {a.shape[0]})")
    x = np.arange(a.shape[1], dtype=float)
    return Profile(x, x * pitch, a[row].copy())
