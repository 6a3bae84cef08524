"""Command-line driver.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import ctypes
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .deconv import DeconvConfig, deconvolve_field
from .errors import BoundaryAmbiguityError, DomainError, RealizationError
from .fieldio import atomic_write_text, read_field, write_field, write_lifetime_outputs, profile_csv
from .metrics import boundary_from_threshold, central_mask, extract_profile, lifetime_rmse
from .optics import BOUNDARY_MODES, ENGINES, ComplexField, Kernel, ScalarField, convolve, gaussian_kernel
from .phantom import NoiseSpec, add_gaussian_noise, add_poisson_noise, make_phantom
from .phasor import lifetime_map
from .pipeline import (
    PRESETS,
    PipelineConfig,
    build_manifest,
    preset_config,
    run_pipeline,
    write_manifest,
    write_pipeline_outputs,
)

log = logging.getLogger("flimdeconv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _add_phantom_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n", type=_positive_int, help="1D phantom length")
    p.add_argument("--width", type=_positive_int)
    p.add_argument("--height", type=_positive_int)
    p.add_argument("--boundary-px", type=int)
    p.add_argument("--tau1", type=_nonneg_float, help="left lifetime, ns")
    p.add_argument("--tau2", type=_nonneg_float, help="right lifetime, ns")
    p.add_argument("--a1", type=_nonneg_float, help="left magnitude")
    p.add_argument("--a2", type=_nonneg_float, help="right magnitude")
    p.add_argument("--freq-mhz", type=_positive_float)
    p.add_argument("--pitch-nm", type=_positive_float)


def _add_psf_args(p):
    p.add_argument("--psf-sigma-px", type=_positive_float, default=5.0)
    p.add_argument("--psf", help="kernel FieldFile (overrides --psf-sigma-px)")
    p.add_argument("--boundary-mode", choices=BOUNDARY_MODES, default="reflect")
    p.add_argument("--engine", choices=ENGINES, default="fft")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flimdeconv", description="FLIM convolution / RL-TV deconvolution toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write an ideal two-fluorophore field and its lifetime truth")
    _add_phantom_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("psf", help="write a Gaussian PSF kernel")
    p.add_argument("--psf-sigma-px", type=_positive_float, default=5.0)
    p.add_argument("--dims", type=int, choices=(1, 2), default=2)
    p.add_argument("--pitch-nm", type=_positive_float, default=300.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("convolve", help="blur a field with the PSF")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_psf_args(p)

    p = sub.add_parser("noise", help="add Gaussian (or Poisson) noise to a field")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=_nonneg_float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--poisson-peak", type=_positive_float, help="Poisson noise at this peak count instead")

    p = sub.add_parser("deconvolve", help="RL-TV deconvolution of both planes")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_psf_args(p)
    p.add_argument("--iters", type=_positive_int, default=50)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.005)

    p = sub.add_parser("lifetime", help="phase lifetime map as CSV + 16-bit PGM")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="output basename")
    p.add_argument("--row", type=int, help="also write this row as a profile CSV")

    p = sub.add_parser("profile", help="one row of a lifetime map as CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--row", type=int)

    p = sub.add_parser("metrics", help="boundary position and lifetime RMSE against truth")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--row", type=int)
    p.add_argument("--tau1", type=_nonneg_float)
    p.add_argument("--tau2", type=_nonneg_float)
    p.add_argument("--a1", type=_nonneg_float, default=1.0)
    p.add_argument("--a2", type=_nonneg_float, default=1.0)
    p.add_argument("--boundary-px", type=int)

    p = sub.add_parser("pipeline", help="simulate, blur, (noise), deconvolve, lifetime, metrics")
    _add_phantom_args(p)
    p.add_argument("--psf-sigma-px", type=_positive_float)
    p.add_argument("--boundary-mode", choices=BOUNDARY_MODES)
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--iters", type=_positive_int)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float)
    p.add_argument("--noise", dest="noise", action="store_true", default=None)
    p.add_argument("--no-noise", dest="noise", action="store_false")
    p.add_argument("--sigma", type=_nonneg_float)
    p.add_argument("--realizations", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--avg-order", choices=("field", "lifetime"))
    p.add_argument("--row", type=int)
    p.add_argument("--from-manifest", help="rerun the configuration recorded in a manifest")
    p.add_argument("--out", required=True, help="output directory")
    return parser


_PIPELINE_FLAGS = (
    "width", "height", "boundary_px", "tau1", "tau2", "a1", "a2", "freq_mhz", "pitch_nm",
    "psf_sigma_px", "boundary_mode", "engine", "iters", "lam", "noise", "sigma",
    "realizations", "seed", "avg_order", "row",
)


def _overrides(args) -> dict:
    over = {}
    for name in _PIPELINE_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "n", None) is not None:
        over["width"] = args.n
        over["height"] = 1
    return over


def _config_from_args(args) -> PipelineConfig:
    over = _overrides(args)
    if args.preset:
        return preset_config(args.preset, **over)
    return PipelineConfig(**over)


def _manifest_path(out) -> Path:
    return Path(str(out) + ".manifest.json")


def _record(command, argv, config, outputs, inputs=()):
    outputs = [Path(p) for p in outputs]
    root = outputs[0].parent
    write_manifest(_manifest_path(outputs[0]), build_manifest(command, argv, config, root, outputs, inputs))


def _load_kernel(args, height) -> Kernel:
    if args.psf:
        k = read_field(args.psf)
        if not isinstance(k, ScalarField):
            raise DomainError("PSF file must hold a single plane")
        v = k.plane[0] if k.height == 1 else k.plane
        return Kernel(v / v.sum())
    return gaussian_kernel(args.psf_sigma_px, dims=1 if height == 1 else 2)


def _read_complex(path) -> ComplexField:
    f = read_field(path)
    if not isinstance(f, ComplexField):
        raise DomainError(f"{path}: expected a complex (2-plane) field")
    return f


def _cmd_simulate(args, argv):
    cfg = _config_from_args(args)
    field, truth = make_phantom(cfg.phantom_spec())
    out = Path(args.out)
    truth_path = out.with_name(out.stem + ".truth" + out.suffix)
    write_field(field, out)
    write_field(ScalarField(truth, cfg.pitch_nm, field.mod), truth_path)
    _record("simulate", argv, cfg.to_dict(), [out, truth_path])


def _cmd_psf(args, argv):
    k = gaussian_kernel(args.psf_sigma_px, args.dims)
    write_field(ScalarField(k.values, args.pitch_nm), args.out)
    _record("psf", argv, {"psf_sigma_px": args.psf_sigma_px, "dims": args.dims}, [args.out])


def _cmd_convolve(args, argv):
    f = _read_complex(args.inp)
    k = _load_kernel(args, f.height)
    write_field(convolve(f, k, args.boundary_mode, args.engine), args.out)
    cfg = {"psf_sigma_px": args.psf_sigma_px, "psf": args.psf, "boundary_mode": args.boundary_mode,
           "engine": args.engine}
    _record("convolve", argv, cfg, [args.out], [args.inp] + ([args.psf] if args.psf else []))


def _cmd_noise(args, argv):
    f = _read_complex(args.inp)
    if args.poisson_peak:
        noisy = add_poisson_noise(f, args.poisson_peak, args.seed, args.realization)
    else:
        noisy = add_gaussian_noise(f, NoiseSpec("gaussian", args.sigma, args.seed, 1), args.realization)
    write_field(noisy, args.out)
    cfg = {"sigma": args.sigma, "seed": args.seed, "realization": args.realization,
           "poisson_peak": args.poisson_peak}
    _record("noise", argv, cfg, [args.out], [args.inp])


def _cmd_deconvolve(args, argv):
    f = _read_complex(args.inp)
    k = _load_kernel(args, f.height)
    cfg = DeconvConfig(iterations=args.iters, lam=args.lam, boundary=args.boundary_mode, engine=args.engine)
    clipped = f.with_planes(np.maximum(f.re, 0.0), np.maximum(f.im, 0.0))
    if not (np.array_equal(clipped.re, f.re) and np.array_equal(clipped.im, f.im)):
        log.info("clipped negative input values to 0 before deconvolution")
    result, traces = deconvolve_field(clipped, k, cfg)
    write_field(result, args.out)
    trace_path = Path(str(args.out) + ".trace.csv")
    lines = ["iteration,plane,residual,max_rel_change"]
    for name, tr in zip(("re", "im"), traces):
        for i, (res, chg) in enumerate(zip(tr.residual, tr.max_rel_change)):
            lines.append(f"{i},{name},{res:.9g},{chg:.9g}")
    atomic_write_text(trace_path, "\n".join(lines) + "\n")
    conf = {"iterations": args.iters, "lambda": args.lam, "psf_sigma_px": args.psf_sigma_px, "psf": args.psf,
            "boundary_mode": args.boundary_mode, "engine": args.engine}
    _record("deconvolve", argv, conf, [args.out, trace_path], [args.inp] + ([args.psf] if args.psf else []))


def _cmd_lifetime(args, argv):
    f = _read_complex(args.inp)
    tau = lifetime_map(f.re, f.im, f.mod)
    paths = write_lifetime_outputs(tau, args.out, f.pixel_pitch_nm, args.row)
    write_manifest(
        _manifest_path(args.out),
        build_manifest("lifetime", argv, {"row": args.row}, Path(args.out).parent, paths, [args.inp]),
    )


def _lifetime_of(f):
    if isinstance(f, ComplexField):
        return lifetime_map(f.re, f.im, f.mod)
    return f.plane


def _cmd_profile(args, argv):
    f = read_field(args.inp)
    atomic_write_text(args.out, profile_csv(_lifetime_of(f), args.row, f.pixel_pitch_nm))
    _record("profile", argv, {"row": args.row}, [args.out], [args.inp])


def _cmd_metrics(args, argv):
    f = read_field(args.inp)
    truth = read_field(args.truth)
    if not isinstance(truth, ScalarField):
        raise DomainError("truth file must hold a single plane")
    tau = _lifetime_of(f)
    if tau.shape != truth.plane.shape:
        raise DomainError(f"map shape {tau.shape} differs from truth shape {truth.plane.shape}")
    row = truth.height // 2 if args.row is None else args.row
    truth_row = extract_profile(truth.plane, row).values
    tau1 = truth_row[0] if args.tau1 is None else args.tau1
    tau2 = truth_row[-1] if args.tau2 is None else args.tau2
    if args.boundary_px is not None:
        b = args.boundary_px
    else:
        changes = np.flatnonzero(np.diff(truth_row) != 0)
        if changes.size != 1:
            raise DomainError("cannot infer boundary from truth; pass --boundary-px")
        b = int(changes[0]) + 1
    weak = 1 if args.a2 <= args.a1 else -1
    threshold = 0.5 * (tau1 + tau2)
    report = {"threshold_ns": threshold, "true_boundary_px": b - 0.5, "weak_side": weak,
              "rmse_ns": lifetime_rmse(tau, truth.plane, central_mask(tau.shape))}
    prof = extract_profile(tau, row, f.pixel_pitch_nm)
    try:
        est = boundary_from_threshold(prof.values, threshold, b - 0.5, weak, f.pixel_pitch_nm)
        report.update(position_px=est.position_px, position_nm=est.position_nm, shift_px=est.shift_px)
    except BoundaryAmbiguityError as exc:
        report.update(error=str(exc), crossings=exc.crossings)
    atomic_write_text(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    _record("metrics", argv, {"row": row, "threshold_ns": threshold}, [args.out], [args.inp, args.truth])


def _cmd_pipeline(args, argv):
    if args.from_manifest:
        with open(args.from_manifest) as fh:
            recorded = json.load(fh)
        cfg = PipelineConfig(**recorded["config"])
        preset = recorded.get("preset")
    else:
        cfg = _config_from_args(args)
        preset = args.preset
    result = run_pipeline(cfg)
    write_pipeline_outputs(result, args.out, argv, preset)
    m = result.metrics
    for stage in ("convolved", "deconvolved"):
        s = m[stage]
        where = f"boundary {s['position_px']:.3f} px, shift {s['shift_px']:+.3f} px" if "error" not in s else s["error"]
        print(f"{stage:12s} {where}, RMSE {s['rmse_ns']:.4f} ns")


_COMMANDS = {
    "simulate": _cmd_simulate,
    "psf": _cmd_psf,
    "convolve": _cmd_convolve,
    "noise": _cmd_noise,
    "deconvolve": _cmd_deconvolve,
    "lifetime": _cmd_lifetime,
    "profile": _cmd_profile,
    "metrics": _cmd_metrics,
    "pipeline": _cmd_pipeline,
}


def cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _COMMANDS[args.command](args, argv)
    except (ValueError, KeyError, TypeError, OSError, RealizationError) as exc:
        print(f"flimdeconv {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


def _tune_allocator():
    # per-iteration plane temporaries (~0.5 MB) would otherwise round-trip through mmap
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 32 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 128 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def main():
    _tune_allocator()
    sys.exit(cli())


if __name__ == "__main__":
    main()
