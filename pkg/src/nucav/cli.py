"""Command-line front end.

Angles are given in mrad and detunings in units of gamma. Every command that
writes a data file also writes ``<out>.manifest.json`` recording how the file
was produced; the data file names its manifest in its header.

Exit codes: 0 ok, 2 usage, 3 input/parse, 4 numerical failure, 5 fit failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__, io, parratt, qomodel
from .calibrate import FitConfig, FitError, calibrate_pipeline
from .domain import InputError, NumericalError, Spectrum, load_stack, params_hash

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4, 5

log = logging.getLogger("nucav")


class UsageError(Exception):
    """Flags that parse but make no sense together."""


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    """Provenance of one CLI invocation."""

    command: str
    argv: list
    inputs: list
    params_hashes: dict
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    versions: dict = field(
        default_factory=lambda: {"nucav": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    )
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))

    def write(self, path: Path) -> Path:
        path.write_text(io.dumps(asdict(self)))
        return path


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# argument helpers


def _mrad_range(lo: float, hi: float, n: int, what: str = "theta range"):
    if not hi > lo:
        raise UsageError(f"empty {what}: {lo} .. {hi}")
    if n < 1:
        raise UsageError("--n must be positive")
    if lo <= 0:
        # the grazing angle 0 itself is excluded
        lo = (hi - lo) / n if lo == 0 else lo
        if lo <= 0:
            raise UsageError("angles must be positive")
    return np.linspace(lo, hi, n) * 1e-3


def _delta_grid(lo: float, hi: float, n: int):
    if not hi > lo:
        raise UsageError(f"empty delta range: {lo} .. {hi}")
    if n < 2:
        raise UsageError("--n-delta must be at least 2")
    return np.linspace(lo, hi, n)


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("config file must hold a JSON object")
    return data


def _resolve(args, config: dict, defaults: dict) -> dict:
    """Merge settings with precedence flag > config file > default."""
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else config.get(key, default)
    return out


def _engine_source(args):
    """(kind, model) for the selected engine."""
    if args.engine == "parratt":
        if not args.stack:
            raise UsageError("the parratt engine needs a stack file")
        stack = load_stack(args.stack)
        return "parratt", stack
    if not args.params:
        raise UsageError("the qo engine needs --params")
    mp, cs = io.load_params(args.params)
    return "qo", (mp, cs)


def _compute(kind, obj, theta, delta, what, method="general"):
    if kind == "parratt":
        fn = {"curve": parratt.curve, "spectrum": parratt.spectrum, "grid": parratt.grid}[what]
        return fn(obj, theta, delta)
    mp, cs = obj
    fn = {"curve": qomodel.curve, "spectrum": qomodel.spectrum, "grid": qomodel.grid}[what]
    return fn(mp, cs, theta, delta, method)


def _emit_spectrum(args, spec: Spectrum, manifest: RunManifest, xcol: str, ycol: str = "abs2_R"):
    out = Path(args.out) if args.out else None
    if out is None:
        sys.stdout.write(io.spectrum_csv(spec))
        return
    mpath = manifest_path(out)
    io.write_spectrum(spec, out, manifest=mpath.name)
    manifest.outputs.append(str(out))
    if args.plot_script:
        Path(args.plot_script).write_text(_gnuplot(out, xcol, ycol, spec))
        manifest.outputs.append(str(args.plot_script))
    manifest.write(mpath)


def _gnuplot(data: Path, xcol: str, ycol: str, spec: Spectrum) -> str:
    cols = io.SPECTRUM_COLUMNS
    xi, yi = cols.index(xcol) + 1, cols.index(ycol) + 1
    lines = [
        f"# gnuplot script for {data.name}",
        "set datafile separator ','",
        f"set xlabel '{xcol}'",
        f"set ylabel '{ycol}'",
    ]
    if spec.theta.size > 1 and spec.delta.size > 1:
        lines += ["set view map", f"splot '{data.name}' skip 2 using 2:1:{yi} with image notitle"]
    else:
        lines.append(f"plot '{data.name}' skip 2 using {xi}:{yi} with lines notitle")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_curve(args) -> int:
    theta = _mrad_range(*args.theta_range, args.n)
    kind, obj = _engine_source(args)
    spec = _compute(kind, obj, theta, args.delta, "curve", args.method)
    m = RunManifest("curve", list(args.argv), _inputs(args), {kind: spec.params_hash})
    _emit_spectrum(args, spec, m, "theta_rad")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    if not args.theta > 0:
        raise UsageError("--theta must be positive")
    delta = _delta_grid(*args.delta_range, args.n_delta)
    kind, obj = _engine_source(args)
    spec = _compute(kind, obj, args.theta * 1e-3, delta, "spectrum", args.method)
    m = RunManifest("spectrum", list(args.argv), _inputs(args), {kind: spec.params_hash})
    _emit_spectrum(args, spec, m, "delta_gamma")
    return EXIT_OK


def cmd_grid(args) -> int:
    theta = _mrad_range(*args.theta_range, args.n)
    delta = _delta_grid(*args.delta_range, args.n_delta)
    kind, obj = _engine_source(args)
    spec = _compute(kind, obj, theta, delta, "grid", args.method)
    m = RunManifest("grid", list(args.argv), _inputs(args), {kind: spec.params_hash})
    _emit_spectrum(args, spec, m, "delta_gamma")
    return EXIT_OK


def cmd_field(args) -> int:
    if not args.theta > 0:
        raise UsageError("--theta must be positive")
    stack = load_stack(args.stack)
    fm = parratt.field_map(stack, args.theta * 1e-3, args.delta, args.depth_step)
    if not args.out:
        sys.stdout.write(io.field_csv(fm))
        return EXIT_OK
    out = Path(args.out)
    mpath = manifest_path(out)
    io.write_field(fm, out, manifest=mpath.name)
    m = RunManifest("field", list(args.argv), _inputs(args), {"parratt": params_hash(stack.to_dict())}, [str(out)])
    if args.plot_script:
        Path(args.plot_script).write_text(
            f"# gnuplot script for {out.name}\nset datafile separator ','\n"
            "set xlabel 'depth_nm'\nset ylabel 'intensity'\n"
            f"plot '{out.name}' skip 2 using 1:4 with lines notitle\n"
        )
        m.outputs.append(str(args.plot_script))
    m.write(mpath)
    return EXIT_OK


FIT_DEFAULTS = {
    "theta_range": (0.0, 5.0),
    "n_modes": 5,
    "samples": 2000,
    "loss": "abs",
    "initializer": "branches",
    "max_iter": 400,
    "tolerance": 1e-10,
    "restarts": 4,
    "seed": 0,
    "target_scale": None,
    "exclude": 5.0,
}


def cmd_fit(args) -> int:
    stack = load_stack(args.stack)
    config = _load_config(args.config)
    if "theta_range_mrad" in config:
        config = {**config, "theta_range": config["theta_range_mrad"]}
    s = _resolve(args, config, FIT_DEFAULTS)
    lo, hi = s.pop("theta_range")
    if not hi > lo:
        raise UsageError(f"empty theta range: {lo} .. {hi}")
    target, exclude = s.pop("target_scale"), s.pop("exclude")
    cfg = FitConfig(theta_range=(lo * 1e-3, hi * 1e-3), **s)
    res = calibrate_pipeline(stack, cfg, target_scale=target, exclude=exclude)

    outputs, report_path = [], Path(args.report) if args.report else None
    mname = manifest_path(Path(args.out_params)).name if args.out_params else None
    if args.out_params and res.params is not None:
        io.save_params(args.out_params, res.params, res.couplings)
        outputs.append(str(args.out_params))
    if report_path is not None:
        report_path.write_text(io.dumps({**res.to_dict(), "manifest": mname}))
        outputs.append(str(report_path))
    if args.out_params:
        hashes = {"stack": params_hash(stack.to_dict())}
        if res.params is not None:
            hashes["params"] = params_hash(res.parameter_file())
        summary = {"status": res.status, "residual_rms": res.mode_report.residual_rms}
        RunManifest("fit", list(args.argv), _inputs(args), hashes, outputs, summary).write(manifest_path(Path(args.out_params)))

    rep = res.mode_report
    print(f"status: {res.status}; mode fit rms {rep.residual_rms:.3g} after {rep.iterations} evaluations")
    if res.params is not None:
        for j, (t, k, kr) in enumerate(zip(res.params.theta0, res.params.kappa, res.params.kappa_r), 1):
            print(f"  mode {j}: theta0 {t * 1e3:.5f} mrad  kappa {k:.4g}  kappa_R {kr:.4g}  2kR/k {2 * kr / k:.3f}")
    if res.scale_fit is not None:
        print(f"  scale {res.scale_fit.scale:.6g} gamma (rms {res.scale_fit.residual_rms:.3g})")
    if rep.multimodal:
        print("  warning: restarts disagree, the fit may be multimodal")
    return EXIT_FIT if res.status == "fit not converged" else EXIT_OK


COMPARE_COLUMNS = ("delta_gamma", "abs2_parratt", "abs2_qo", "diff_abs2")


def cmd_compare(args) -> int:
    if not args.theta > 0:
        raise UsageError("--theta must be positive")
    stack = load_stack(args.stack)
    mp, cs = io.load_params(args.params)
    delta = _delta_grid(*args.delta_range, args.n_delta)
    theta = args.theta * 1e-3
    a = parratt.spectrum(stack, theta, delta).reflectance[0]
    b = qomodel.spectrum(mp, cs, theta, delta, args.method).reflectance[0]
    diff = b - a
    keep = np.abs(delta) >= args.exclude
    if not keep.any():
        raise UsageError("--exclude removes every detuning")
    dmax = float(np.max(np.abs(diff[keep])))
    rms = float(np.sqrt(np.mean(diff[keep] ** 2)))
    rows = [",".join(COMPARE_COLUMNS)]
    rows += [",".join(repr(float(x)) for x in r) for r in zip(delta, a, b, diff)]
    text = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        mpath = manifest_path(out)
        out.write_text(f"# nucav compare theta_mrad={args.theta!r} manifest={mpath.name}\n" + text)
        hashes = {"parratt": params_hash(stack.to_dict()), "qo": params_hash(io.params_to_dict(mp, cs))}
        RunManifest("compare", list(args.argv), _inputs(args), hashes, [str(out)], {"max_abs_diff": dmax, "rms_diff": rms}).write(mpath)
    print(f"max |diff |R|^2| = {dmax:.6g}; rms = {rms:.6g} (|delta| >= {args.exclude:g} gamma)")
    return EXIT_OK


def _inputs(args) -> list:
    return [str(p) for p in (getattr(args, "stack", None), getattr(args, "params", None), getattr(args, "config", None)) if p]


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nucav", description="X-ray thin-film cavities with Moessbauer nuclei.")
    p.add_argument("--version", action="version", version=f"nucav {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads for grids (overrides NUCAV_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    # --threads is accepted before or after the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    def data_cmd(name, helptext, fn):
        s = sub.add_parser(name, help=helptext, parents=[common])
        s.add_argument("stack", nargs="?", help="stack JSON file or fixture name (eit_cavity, non_eit_cavity)")
        s.add_argument("--engine", choices=("parratt", "qo"), default="parratt")
        s.add_argument("--params", help="qomodel parameter file or fixture name (eit_params, non_eit_params)")
        s.add_argument("--method", choices=("general", "closed-form"), default="general", help="qo solver")
        s.add_argument("--out", help="output file (.csv or .json); stdout CSV if omitted")
        s.add_argument("--plot-script", help="also write a gnuplot script here")
        s.set_defaults(func=fn)
        return s

    s = data_cmd("curve", "reflection versus angle", cmd_curve)
    s.add_argument("--theta-range", nargs=2, type=float, default=(0.0, 5.0), metavar=("LO", "HI"), help="mrad")
    s.add_argument("--n", type=int, default=1000, help="angle samples")
    s.add_argument("--delta", type=float, default=0.0, help="detuning (gamma)")

    s = data_cmd("spectrum", "reflection versus detuning at one angle", cmd_spectrum)
    s.add_argument("--theta", type=float, required=True, help="mrad")
    s.add_argument("--delta-range", nargs=2, type=float, default=(-50.0, 50.0), metavar=("LO", "HI"))
    s.add_argument("--n-delta", type=int, default=401)

    s = data_cmd("grid", "reflection on an angle x detuning grid", cmd_grid)
    s.add_argument("--theta-range", nargs=2, type=float, default=(3.3, 3.7), metavar=("LO", "HI"), help="mrad")
    s.add_argument("--n", type=int, default=41, help="angle samples")
    s.add_argument("--delta-range", nargs=2, type=float, default=(-50.0, 50.0), metavar=("LO", "HI"))
    s.add_argument("--n-delta", type=int, default=101)

    s = sub.add_parser("field", help="field intensity versus depth", parents=[common])
    s.add_argument("stack")
    s.add_argument("--theta", type=float, required=True, help="mrad")
    s.add_argument("--delta", type=float, default=0.0, help="detuning (gamma)")
    s.add_argument("--depth-step", type=float, default=0.1, help="nm")
    s.add_argument("--out")
    s.add_argument("--plot-script")
    s.set_defaults(func=cmd_field)

    s = sub.add_parser("fit", help="derive qomodel parameters from the Parratt oracle", parents=[common])
    s.add_argument("stack")
    s.add_argument("--config", help="JSON file with fit settings (flags take precedence)")
    s.add_argument("--theta-range", nargs=2, type=float, default=None, metavar=("LO", "HI"), help="mrad")
    s.add_argument("--n-modes", type=int, default=None)
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--loss", choices=("abs", "complex"), default=None)
    s.add_argument("--initializer", choices=("branches", "minima"), default=None)
    s.add_argument("--max-iter", type=int, default=None)
    s.add_argument("--tolerance", type=float, default=None)
    s.add_argument("--restarts", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--target-scale", type=float, default=None, help="calibrate the oracle strength to this scale (gamma)")
    s.add_argument("--exclude", type=float, default=None, help="half-width of the band around 0 left out of the scale fit")
    s.add_argument("--out-params", help="write the parameter file here")
    s.add_argument("--report", help="write the fit report (JSON) here")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compare", help="both engines' spectra at one angle", parents=[common])
    s.add_argument("params", help="qomodel parameter file or fixture name")
    s.add_argument("stack", help="stack JSON file or fixture name")
    s.add_argument("--theta", type=float, required=True, help="mrad")
    s.add_argument("--delta-range", nargs=2, type=float, default=(-50.0, 50.0), metavar=("LO", "HI"))
    s.add_argument("--n-delta", type=int, default=201)
    s.add_argument("--exclude", type=float, default=0.0, help="leave |delta| below this out of the summary")
    s.add_argument("--method", choices=("general", "closed-form"), default="general")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("nucav: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        os.environ["NUCAV_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nucav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"nucav: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except InputError as exc:
        print(f"nucav: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"nucav: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
