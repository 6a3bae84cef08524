"""End-to-end simulate -> blur -> (noise, averaging) -> deconvolve -> lifetime -> metrics."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import __version__
from .deconv import DeconvConfig, deconvolve_field
from .errors import BoundaryAmbiguityError
from .fieldio import atomic_write_text, sha256_file, write_field, write_lifetime_outputs
from .metrics import boundary_from_threshold, central_mask, extract_profile, lifetime_rmse
from .optics import ComplexField, ScalarField, convolve, gaussian_kernel
from .phantom import (
    RNG_ALGORITHM,
    NoiseSpec,
    PhantomSpec,
    average_realizations,
    clip_negative,
    make_phantom,
)
from .phasor import Fluorophore, ModulationSpec, lifetime_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    width: int = 256
    height: int = 1
    boundary_px: Optional[int] = None
    tau1: float = 1.0
    tau2: float = 2.0
    a1: float = 1.0
    a2: float = 1.0
    freq_mhz: float = 80.0
    pitch_nm: float = 300.0
    psf_sigma_px: float = 5.0
    boundary_mode: str = "reflect"
    engine: str = "fft"
    iters: int = 50
    lam: float = 0.005
    noise: bool = False
    sigma: float = 0.05
    realizations: int = 100
    seed: int = 0
    avg_order: str = "field"
    row: Optional[int] = None

    @property
    def boundary(self) -> int:
        return self.width // 2 if self.boundary_px is None else self.boundary_px

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(
            width=self.width,
            height=self.height,
            boundary_px=self.boundary,
            left=Fluorophore(self.tau1, self.a1),
            right=Fluorophore(self.tau2, self.a2),
            mod=ModulationSpec(self.freq_mhz),
            pixel_pitch_nm=self.pitch_nm,
        )

    def deconv_config(self) -> DeconvConfig:
        return DeconvConfig(
            iterations=self.iters, lam=self.lam, boundary=self.boundary_mode, engine=self.engine
        )

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec("gaussian", self.sigma, self.seed, self.realizations)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIG1 = dict(width=256, height=1, boundary_px=128, tau1=1.0, tau2=2.0, psf_sigma_px=5.0, iters=50, lam=0.005)
_FIG2 = dict(
    width=260, height=260, boundary_px=130, tau1=1.0, tau2=2.0, psf_sigma_px=5.0, iters=50, lam=0.005,
    noise=True, sigma=0.05, realizations=100,
)

PRESETS: Dict[str, dict] = {
    "fig1a": dict(_FIG1, a1=1.0, a2=1.0),
    "fig1b": dict(_FIG1, a1=5.0, a2=1.0),
    "fig2-equal": dict(_FIG2, a1=1.0, a2=1.0),
    "fig2-unequal": dict(_FIG2, a1=5.0, a2=1.0),
}


def preset_config(name: str, **overrides) -> PipelineConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PipelineConfig(**dict(PRESETS[name], **overrides))


@dataclass
class PipelineResult:
    config: PipelineConfig
    ideal: ComplexField
    truth: np.ndarray
    convolved: ComplexField
    deconvolved: Optional[ComplexField]
    tau_convolved: np.ndarray
    tau_deconvolved: np.ndarray
    traces: Optional[tuple]
    metrics: dict


def _boundary_metrics(tau, spec: PhantomSpec, row) -> dict:
    prof = extract_profile(tau, row, spec.pixel_pitch_nm)
    try:
        est = boundary_from_threshold(
            prof.values, spec.threshold_ns, spec.true_boundary_px, spec.weak_side, spec.pixel_pitch_nm
        )
    except BoundaryAmbiguityError as exc:
        return {"error": str(exc), "crossings": exc.crossings}
    return {"position_px": est.position_px, "position_nm": est.position_nm, "shift_px": est.shift_px}


def evaluate(tau, truth, spec: PhantomSpec, row=None) -> dict:
    out = _boundary_metrics(tau, spec, row)
    out["rmse_ns"] = lifetime_rmse(tau, truth, central_mask(truth.shape))
    return out


def run_pipeline(cfg: PipelineConfig, progress=None) -> PipelineResult:
    spec = cfg.phantom_spec()
    mod = spec.mod
    ideal, truth = make_phantom(spec)
    kernel = gaussian_kernel(cfg.psf_sigma_px, dims=1 if cfg.height == 1 else 2)
    blurred = convolve(ideal, kernel, cfg.boundary_mode, cfg.engine)
    dcfg = cfg.deconv_config()
    traces = None
    deconvolved = None

    if not cfg.noise:
        convolved = blurred
        deconvolved, traces = deconvolve_field(convolved, kernel, dcfg)
        tau_c = lifetime_map(convolved.re, convolved.im, mod)
        tau_d = lifetime_map(deconvolved.re, deconvolved.im, mod)
    else:
        noise = cfg.noise_spec()

        def restore(f):
            return deconvolve_field(clip_negative(f), kernel, dcfg, track=False)[0]

        if cfg.avg_order == "field":
            convolved = average_realizations(clip_negative, noise, blurred)
            deconvolved = average_realizations(restore, noise, blurred, progress)
            tau_c = lifetime_map(convolved.re, convolved.im, mod)
            tau_d = lifetime_map(deconvolved.re, deconvolved.im, mod)
        elif cfg.avg_order == "lifetime":
            def tau_of(f):
                return lifetime_map(f.re, f.im, mod)

            convolved = average_realizations(clip_negative, noise, blurred)
            tau_c = average_realizations(lambda f: tau_of(clip_negative(f)), noise, blurred)
            tau_d = average_realizations(lambda f: tau_of(restore(f)), noise, blurred, progress)
        else:
            raise ValueError(f"avg_order must be 'field' or 'lifetime', got {cfg.avg_order!r}")

    metrics = {
        "threshold_ns": spec.threshold_ns,
        "true_boundary_px": spec.true_boundary_px,
        "true_boundary_nm": spec.true_boundary_px * spec.pixel_pitch_nm,
        "weak_side": spec.weak_side,
        "convolved": evaluate(tau_c, truth, spec, cfg.row),
        "deconvolved": evaluate(tau_d, truth, spec, cfg.row),
    }
    return PipelineResult(cfg, ideal, truth, convolved, deconvolved, tau_c, tau_d, traces, metrics)


def build_manifest(command, argv, config: dict, out_dir: Path, outputs, inputs=(), extra=None) -> dict:
    """Run record: configuration, RNG scheme, version and SHA-256 of every file touched."""
    manifest = {
        "tool": "flimdeconv",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "rng": RNG_ALGORITHM,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(Path(p).relative_to(out_dir)) if _under(p, out_dir) else str(p): sha256_file(p)
                    for p in outputs},
    }
    if extra:
        manifest.update(extra)
    return manifest


def _under(p, root) -> bool:
    try:
        Path(p).resolve().relative_to(Path(root).resolve())
        return True
    except ValueError:
        return False


def write_manifest(path, manifest: dict) -> None:
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_pipeline_outputs(result: PipelineResult, out_dir, argv=(), preset=None) -> Path:
    """Write fields, lifetime outputs, metrics and the manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    pitch, mod = cfg.pitch_nm, ModulationSpec(cfg.freq_mhz)
    row = cfg.row if cfg.row is not None else cfg.height // 2
    files = []

    def field_out(name, f):
        p = out / name
        write_field(f, p)
        files.append(p)

    field_out("ideal.fcf", result.ideal)
    field_out("truth.fcf", ScalarField(result.truth, pitch, mod))
    field_out("convolved.fcf", result.convolved)
    if result.deconvolved is not None:
        field_out("deconvolved.fcf", result.deconvolved)
    files += [Path(p) for p in write_lifetime_outputs(result.truth, out / "lifetime_truth", pitch, row)]
    files += [Path(p) for p in write_lifetime_outputs(result.tau_convolved, out / "lifetime_convolved", pitch, row)]
    files += [Path(p) for p in write_lifetime_outputs(result.tau_deconvolved, out / "lifetime_deconvolved", pitch, row)]
    if result.traces is not None:
        lines = ["iteration,plane,residual,max_rel_change"]
        for name, tr in zip(("re", "im"), result.traces):
            for k, (res, chg) in enumerate(zip(tr.residual, tr.max_rel_change)):
                lines.append(f"{k},{name},{res:.9g},{chg:.9g}")
        atomic_write_text(out / "trace.csv", "\n".join(lines) + "\n")
        files.append(out / "trace.csv")
    atomic_write_text(out / "metrics.json", json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
    files.append(out / "metrics.json")
    manifest = build_manifest("pipeline", argv, cfg.to_dict(), out, files, extra={"preset": preset})
    write_manifest(out / "manifest.json", manifest)
    return out / "manifest.json"
