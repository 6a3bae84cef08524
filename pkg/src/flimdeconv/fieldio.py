"""FieldFile binary format and lifetime map outputs.

FieldFile layout, all little-endian::

    offset  size  content
    0       8     magic b"FLIMCF1\\0"
    8       4     width   (uint32)
    12      4     height  (uint32)
    16      4     planes  (uint32, 1 = scalar, 2 = re then im)
    20      4     pixel pitch in nm (float32)
    24      4     modulation frequency in MHz (float32)
    28      ...   planes x height x width float32, plane-sequential, row-major

All writes go to a temporary file in the target directory that is then
renamed over the destination.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DomainError, FieldFormatError
from .metrics import extract_profile
from .optics import ComplexField, ScalarField
from .phasor import ModulationSpec

MAGIC = b"FLIMCF1\x00"
_HEADER = struct.Struct("<8sIIIff")
HEADER_SIZE = _HEADER.size
CSV_FORMAT = "{:.9g}"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def encode_field(field: Union[ComplexField, ScalarField]) -> bytes:
    if isinstance(field, ComplexField):
        planes = field.planes()
    elif isinstance(field, ScalarField):
        planes = field.plane[np.newaxis]
    else:
        raise TypeError(f"cannot encode {type(field).__name__}")
    payload = planes.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise DomainError("FieldFile payload must be finite (after float32 conversion)")
    n_planes, height, width = payload.shape
    header = _HEADER.pack(MAGIC, width, height, n_planes, field.pixel_pitch_nm, field.mod.frequency_mhz)
    return header + payload.tobytes(order="C")


def write_field(field: Union[ComplexField, ScalarField], path) -> None:
    atomic_write_bytes(path, encode_field(field))


def decode_field(data: bytes) -> Union[ComplexField, ScalarField]:
    if len(data) < 8 or data[:8] != MAGIC:
        raise FieldFormatError(f"bad magic {data[:8]!r}, expected {MAGIC!r}", 0)
    if len(data) < HEADER_SIZE:
        raise FieldFormatError(
            f"truncated header: expected {HEADER_SIZE} bytes, got {len(data)}", len(data)
        )
    _, width, height, n_planes, pitch, freq = _HEADER.unpack_from(data)
    if width == 0 or height == 0:
        raise FieldFormatError(f"zero dimension {width}x{height}", 8)
    if n_planes not in (1, 2):
        raise FieldFormatError(f"planes must be 1 or 2, got {n_planes}", 16)
    if not (np.isfinite(pitch) and pitch > 0):
        raise FieldFormatError(f"invalid pixel pitch {pitch}", 20)
    if not (np.isfinite(freq) and freq > 0):
        raise FieldFormatError(f"invalid modulation frequency {freq}", 24)
    expected = 4 * n_planes * height * width
    actual = len(data) - HEADER_SIZE
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise FieldFormatError(
            f"{kind} payload: expected {expected} bytes, got {actual}", HEADER_SIZE + min(actual, expected)
        )
    raw = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        raise FieldFormatError("non-finite payload value", HEADER_SIZE + 4 * int(bad[0]))
    planes = raw.astype(np.float64).reshape(n_planes, height, width)
    mod = ModulationSpec(float(freq))
    if n_planes == 2:
        return ComplexField(planes[0], planes[1], float(pitch), mod)
    return ScalarField(planes[0], float(pitch), mod)


def read_field(path) -> Union[ComplexField, ScalarField]:
    """Parse a FieldFile. Values come back as float64 holding the stored float32 exactly."""
    with open(path, "rb") as fh:
        return decode_field(fh.read())


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else CSV_FORMAT.format(v)


def lifetime_csv(tau: np.ndarray) -> str:
    tau = np.atleast_2d(tau)
    lines = ["x_px,y_px,lifetime_ns"]
    for y in range(tau.shape[0]):
        for x in range(tau.shape[1]):
            lines.append(f"{x},{y},{_fmt(tau[y, x])}")
    return "\n".join(lines) + "\n"


def profile_csv(tau: np.ndarray, row: Optional[int], pixel_pitch_nm: float) -> str:
    prof = extract_profile(tau, row, pixel_pitch_nm)
    lines = ["x_px,x_nm,lifetime_ns"]
    for x, xn, v in zip(prof.x_px, prof.x_nm, prof.values):
        lines.append(f"{int(x)},{_fmt(xn)},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def graymap(tau: np.ndarray):
    """16-bit PGM bytes plus the (min, max) mapped onto [0, 65535].

    Undefined pixels and flat maps encode as 0.
    """
    tau = np.atleast_2d(tau)
    finite = np.isfinite(tau)
    lo = float(tau[finite].min()) if finite.any() else float("nan")
    hi = float(tau[finite].max()) if finite.any() else float("nan")
    out = np.zeros(tau.shape, dtype=">u2")
    if finite.any() and hi > lo:
        scaled = np.round((tau[finite] - lo) / (hi - lo) * 65535.0)
        out[finite] = np.clip(scaled, 0, 65535).astype(np.uint16)
    h, w = tau.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + out.tobytes(), lo, hi


def write_lifetime_outputs(tau: np.ndarray, basename, pixel_pitch_nm: float, profile_row: Optional[int] = None):
    """Write ``<basename>.csv``, ``.pgm``, ``.pgm.txt`` and optionally ``.profile.csv``.

    Returns the list of paths written.
    """
    base = str(basename)
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    paths = []
    atomic_write_text(base + ".csv", lifetime_csv(tau))
    paths.append(base + ".csv")
    pgm, lo, hi = graymap(tau)
    atomic_write_bytes(base + ".pgm", pgm)
    paths.append(base + ".pgm")
    flat = not (hi > lo)
    sidecar = (
        f"min_ns={_fmt(lo)}\n"
        f"max_ns={_fmt(hi)}\n"
        f"mapping={'flat map, all pixels 0' if flat else 'linear [min_ns, max_ns] -> [0, 65535]'}\n"
        "undefined=0\n"
    )
    atomic_write_text(base + ".pgm.txt", sidecar)
    paths.append(base + ".pgm.txt")
    if profile_row is not None:
        atomic_write_text(base + ".profile.csv", profile_csv(tau, profile_row, pixel_pitch_nm))
        paths.append(base + ".profile.csv")
    return paths
