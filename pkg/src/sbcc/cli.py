"""Command line front end: ``sbcc generate | correlate | benchmark | compare``.

File formats
------------
Images
    8- or 16-bit grayscale PNG/TIFF.  Intensities are divided by the
    bit-depth maximum (255 or 65535) so estimators see values in [0, 1].
    ``generate`` writes 16-bit PNGs scaled to [0, 65535].
truth.csv
    ``x,y,u,v`` at the interrogation-window centres, row-major.
field.csv
    ``x,y,u,v,flag,peak,secondary_ratio,sigma_fit`` where ``flag`` is
    ``valid``, ``outlier`` or ``degenerate`` and ``sigma_fit`` is 0 when no
    width could be fitted.  ``compare`` accepts both files.
plane CSV
    One correlation plane as a matrix; row ``i`` / column ``j`` hold the
    score for displacement ``(j - W//2, i - H//2)``.
benchmark config
    ``key = value`` lines, ``#`` starts a comment.  See ``CONFIG_KEYS``.
    A JSON summary written by ``benchmark`` is accepted as a config too.

Errors print a single line ``error[CODE]: message``.  Exit status is 0 on
success, 2 for usage errors and 1 for everything else.
"""
import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .bench import ExperimentSpec, emit_report, load_summary, run_rmse_sweep
from .correlators import PRESETS, method_config
from .errors import InvalidInputError, ParameterError, SBCCError, UsageError
from .pivgrid import (FLAG_NAMES, FLAG_OUTLIER, ContextPolicy, GridSpec, VectorField, detect_outliers,
                      median_reference, process_pair, window_plane)
from .synth import BackgroundSpec, FlowSpec, NoiseSpec, ParticleSpec, generate_pair

FIELD_COLUMNS = ("x", "y", "u", "v", "flag", "peak", "secondary_ratio", "sigma_fit")
TRUTH_COLUMNS = ("x", "y", "u", "v")
USAGE_EXIT, FAILURE_EXIT = 2, 1

CONFIG_KEYS = {
    "kind": "sweep | robustness (default sweep)",
    "methods": "comma-separated preset names, each optionally name:key=value:... (default sbcc)",
    "displacements": "semicolon-separated 'dx,dy' pairs; a bare number means (d, 0)",
    "runs": "Monte Carlo runs per displacement (default 100)",
    "seed": "master seed (default 0)",
    "image_size": "image edge in pixels (default 256)",
    "window": "interrogation window (default 32)",
    "step": "grid step (default 16)",
    "dp": "particle image diameter (default 2.2)",
    "cp": "seeding density in particles per pixel (default 0.02)",
    "intensity_peak": "particle peak intensity (default 1.0)",
    "sampling": "integrated | point (default integrated)",
    "noise_sigma": "additive Gaussian noise std (default 0)",
    "out_of_plane": "fraction of particles replaced in frame 2 (default 0)",
    "background": "none | stripes | blobs | mixed (default none)",
    "snr": "background signal-to-noise ratio (default 2.0)",
    "background_seed": "background pattern seed (default 12345)",
    "threshold": "outlier threshold on squared error (default 4.0)",
    "record_timing": "true | false (default false, keeps reports deterministic)",
    "context_source": "both_frames | frame1 | frame2",
    "context_sampling": "global_average | random_excluding_self",
    "context_m": "context size for random sampling (default 8)",
    "context_seed": "context RNG seed (default 0)",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- image I/O

def read_image(path):
    """Decode a grayscale image to float intensities in [0, 1]."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read image {path}: {exc}") from None
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: expected a grayscale image, got mode {mode}")
    if mode in ("1", "L", "P"):
        scale = 255.0
    elif mode.startswith("I;16") or mode == "I":
        scale = 65535.0
    else:
        raise InvalidInputError(f"{path}: unsupported image mode {mode}")
    return arr.astype(float) / scale


def write_image16(path, img):
    a = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(a).save(path, format="PNG")


# ---------------------------------------------------------------- CSV I/O

def write_truth(path, truth):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for x, y, u, v in zip(truth.xs.ravel(), truth.ys.ravel(), truth.u.ravel(), truth.v.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(u)), repr(float(v))])


def write_field(path, fld):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        cols = [fld.xs, fld.ys, fld.u, fld.v, fld.flags, fld.peak, fld.secondary_ratio,
                fld.sigma_fit]
        for x, y, u, v, f, p, s, sg in zip(*(np.ravel(c) for c in cols)):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(u)), repr(float(v)),
                        FLAG_NAMES[int(f)], repr(float(p)), repr(float(s)), repr(float(sg))])


def _flag(text):
    text = text.strip()
    if text in FLAG_NAMES:
        return FLAG_NAMES.index(text)
    try:
        value = int(text)
    except ValueError:
        raise InvalidInputError(f"unknown flag {text!r}") from None
    if not 0 <= value < len(FLAG_NAMES):
        raise InvalidInputError(f"unknown flag {text!r}")
    return value


def read_field(path):
    """Parse a field.csv or truth.csv into a :class:`VectorField`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InvalidInputError(f"{path}: no vectors")
    missing = [c for c in TRUTH_COLUMNS if c not in rows[0]]
    if missing:
        raise InvalidInputError(f"{path}: missing columns {', '.join(missing)}")
    try:
        cols = {c: np.array([float(r[c]) for r in rows]) for c in TRUTH_COLUMNS}
        for c in ("peak", "secondary_ratio", "sigma_fit"):
            cols[c] = np.array([float(r[c]) for r in rows]) if c in rows[0] else None
        flags = np.array([_flag(r["flag"]) for r in rows]) if "flag" in rows[0] else None
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed value ({exc})") from None
    ny = len(np.unique(cols["y"]))
    nx = len(rows) // ny
    if nx * ny != len(rows):
        raise InvalidInputError(f"{path}: vectors do not form a regular grid")
    shape = (ny, nx)

    def grid(a):
        return None if a is None else a.reshape(shape)

    return VectorField(grid(cols["x"]), grid(cols["y"]), grid(cols["u"]), grid(cols["v"]),
                       flags=grid(flags), peak=grid(cols["peak"]),
                       secondary_ratio=grid(cols["secondary_ratio"]),
                       sigma_fit=grid(cols["sigma_fit"]),
                       outlier_count=int(np.sum(flags == FLAG_OUTLIER)) if flags is not None else 0)


# ---------------------------------------------------------------- helpers

def _threads(value):
    if value is None:
        value = os.environ.get("SBCC_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _index_pair(text):
    try:
        ix, iy = (int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected IX,IY, got {text!r}") from None
    return ix, iy


def _method_from_args(args):
    return method_config(args.method, lam=args.lam, mu=args.mu, nu=args.nu, rho=args.rho,
                         epsilon=args.epsilon, sigma=args.sigma, sigma_d=args.sigma_d,
                         target=args.target)


def _add_grid_args(p):
    p.add_argument("--window", type=int, default=32, help="interrogation window (px)")
    p.add_argument("--step", type=int, default=16, help="grid step (px)")


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------- generate

def cmd_generate(args):
    particle = ParticleSpec(d_p=args.dp, c_p=args.cp, intensity_peak=args.peak,
                            rng_seed=args.seed, sampling=args.sampling)
    flow = FlowSpec(args.flow, u=args.u, v=args.v, omega=args.omega, shear=args.shear)
    bg = None if args.background == "none" else BackgroundSpec(args.background, args.snr,
                                                                args.background_seed)
    noise = NoiseSpec(args.noise_sigma, bg, args.out_of_plane)
    grid = GridSpec(args.window, args.step)
    img1, img2, truth = generate_pair(args.size, particle, flow, noise, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image16(out / "frame1.png", img1)
    write_image16(out / "frame2.png", img2)
    write_truth(out / "truth.csv", truth)
    print(f"wrote {out / 'frame1.png'}, {out / 'frame2.png'}, {out / 'truth.csv'}")


# ---------------------------------------------------------------- correlate

def cmd_correlate(args):
    img1, img2 = read_image(args.image1), read_image(args.image2)
    if img1.shape != img2.shape:
        raise InvalidInputError(f"image shapes differ: {img1.shape} vs {img2.shape}")
    cfg = _method_from_args(args)
    grid = GridSpec(args.window, args.step)
    policy = ContextPolicy(args.context_m, args.context_source, args.context_sampling,
                           args.context_seed)
    fld = process_pair(img1, img2, grid, cfg, policy, subtract_mean=not args.keep_mean,
                       threads=_threads(args.threads))
    write_field(args.out, fld)
    live = fld.valid
    print(f"{cfg.label}: {fld.u.size} vectors, {fld.degenerate_count} degenerate, "
          f"mean u={np.mean(fld.u[live]) if live.any() else float('nan'):.4f} "
          f"v={np.mean(fld.v[live]) if live.any() else float('nan'):.4f}")
    if args.dump_plane is not None:
        ix, iy = args.dump_plane
        plane = window_plane(img1, img2, grid, cfg, policy, ix, iy,
                             subtract_mean=not args.keep_mean)
        path = args.plane_out or str(Path(args.out).with_name(f"plane_{ix}_{iy}.csv"))
        np.savetxt(path, plane.data, delimiter=",", fmt="%.17g")
        print(f"wrote plane ({ix}, {iy}) to {path}")


# ---------------------------------------------------------------- benchmark

def parse_config(text):
    """Parse ``key = value`` lines into a dict, rejecting unknown keys."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = value
    return out


def _parse_methods(text):
    methods = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, *params = item.split(":")
        overrides = {}
        for p in params:
            if "=" not in p:
                raise UsageError(f"method parameter {p!r} must be key=value")
            k, v = (s.strip() for s in p.split("=", 1))
            try:
                overrides[k] = v if k == "target" else float(v)
            except ValueError:
                raise UsageError(f"bad value in method parameter {p!r}") from None
        try:
            cfg = method_config(name, **overrides)
            methods.append(cfg.with_params(name=item) if overrides else cfg)
        except TypeError:
            raise UsageError(f"unknown parameter in method {item!r}") from None
    if not methods:
        raise UsageError("no methods given")
    return methods


def _parse_displacements(text):
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            parts = [float(c) for c in item.split(",")]
        except ValueError:
            raise UsageError(f"bad displacement {item!r}") from None
        if len(parts) == 1:
            parts.append(0.0)
        if len(parts) != 2:
            raise UsageError(f"displacement {item!r} must be 'dx,dy' or a number")
        out.append(tuple(parts))
    if not out:
        raise UsageError("no displacements given")
    return out


def experiment_from_config(cfg):
    """Build ``(ExperimentSpec, kind)`` from parsed config entries."""
    def get(key, default, conv=float):
        if key not in cfg:
            return default
        try:
            return conv(cfg[key])
        except ValueError:
            raise UsageError(f"bad value for {key}: {cfg[key]!r}") from None

    kind = get("kind", "sweep", str)
    if kind not in ("sweep", "robustness"):
        raise UsageError(f"kind must be sweep or robustness, got {kind!r}")
    background = get("background", "none", str)
    bg = None if background == "none" else BackgroundSpec(
        background, get("snr", 2.0), get("background_seed", 12345, int))
    spec = ExperimentSpec(
        methods=_parse_methods(cfg.get("methods", "sbcc")),
        displacements=_parse_displacements(cfg.get("displacements", "0")),
        runs=get("runs", 100, int),
        particle=ParticleSpec(d_p=get("dp", 2.2), c_p=get("cp", 0.02),
                              intensity_peak=get("intensity_peak", 1.0),
                              sampling=get("sampling", "integrated", str)),
        noise=NoiseSpec(get("noise_sigma", 0.0), bg, get("out_of_plane", 0.0)),
        grid=GridSpec(get("window", 32, int), get("step", 16, int)),
        image_size=get("image_size", 256, int),
        seed=get("seed", 0, int),
        context=ContextPolicy(get("context_m", 8, int),
                              get("context_source", "both_frames", str),
                              get("context_sampling", "global_average", str),
                              get("context_seed", 0, int)),
        threshold=get("threshold", 4.0),
        record_timing=get("record_timing", False, _bool),
    )
    return spec, kind


def load_experiment(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        spec, _, kind = load_summary(path)
        if spec is None:
            raise InvalidInputError(f"{path}: summary has no experiment section")
        return spec, kind
    return experiment_from_config(parse_config(text))


def cmd_benchmark(args):
    spec, kind = load_experiment(args.config)
    if args.runs is not None:
        spec.runs = args.runs
        spec.__post_init__()
    reports = run_rmse_sweep(spec, threads=_threads(args.threads))
    emit_report(reports, args.csv, args.json, spec=spec, kind=kind)
    for rep in reports:
        print(f"{rep.method:>10s}  mean rmse {rep.mean_rmse:.5f}  outliers {rep.outliers}"
              f"  degenerate {rep.degenerate}")
    print(f"wrote {args.csv} and {args.json}")


# ---------------------------------------------------------------- compare

def cmd_compare(args):
    fld = read_field(args.field)
    if args.reference == "median":
        ref = median_reference(fld)
    else:
        ref = read_field(args.reference)
    annotated, count = detect_outliers(fld, ref, args.threshold)
    if args.out:
        write_field(args.out, annotated)
    print(f"outliers: {count}")


# ---------------------------------------------------------------- parser

def build_parser():
    methods = ", ".join(PRESETS)
    parser = _Parser(prog="sbcc", description="Cross-correlation estimators for PIV.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic particle image pair")
    g.add_argument("--size", type=int, default=256)
    g.add_argument("--dp", type=float, default=2.2, help="particle image diameter (px)")
    g.add_argument("--cp", type=float, default=0.02, help="seeding density (particles/px)")
    g.add_argument("--peak", type=float, default=1.0, help="particle peak intensity")
    g.add_argument("--sampling", choices=("integrated", "point"), default="integrated")
    g.add_argument("--flow", choices=("uniform", "rotation", "shear"), default="uniform")
    g.add_argument("--u", type=float, default=0.0)
    g.add_argument("--v", type=float, default=0.0)
    g.add_argument("--omega", type=float, default=0.0, help="rotation rate (rad/frame)")
    g.add_argument("--shear", type=float, default=0.0, help="du/dy for shear flow")
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--background", choices=("none", "stripes", "blobs", "mixed"),
                   default="none")
    g.add_argument("--snr", type=float, default=2.0)
    g.add_argument("--background-seed", type=int, default=12345)
    g.add_argument("--out-of-plane", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    _add_grid_args(g)
    g.add_argument("--out", default=".", help="output directory")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("correlate", help="compute a vector field from two images",
                       description=f"Methods: {methods}.  Writes columns "
                                   f"{','.join(FIELD_COLUMNS)}.")
    c.add_argument("image1")
    c.add_argument("image2")
    c.add_argument("--method", default="sbcc", choices=list(PRESETS), metavar="NAME",
                   help=f"one of {methods} (default sbcc)")
    for flag in ("lam", "mu", "nu", "rho", "epsilon", "sigma"):
        c.add_argument(f"--{flag}", type=float, default=None,
                       help="override the preset value")
    c.add_argument("--sigma-d", type=float, default=None, help="difference filter width (px)")
    c.add_argument("--target", choices=("gaussian", "delta"), default=None)
    _add_grid_args(c)
    c.add_argument("--context-source", choices=("both_frames", "frame1", "frame2"),
                   default="both_frames")
    c.add_argument("--context-sampling", choices=("global_average", "random_excluding_self"),
                   default="global_average")
    c.add_argument("--context-m", type=int, default=8)
    c.add_argument("--context-seed", type=int, default=0)
    c.add_argument("--keep-mean", action="store_true", help="skip window mean removal")
    c.add_argument("--threads", type=int, default=None, help="worker threads (env SBCC_THREADS)")
    c.add_argument("--out", default="field.csv")
    c.add_argument("--dump-plane", type=_index_pair, default=None, metavar="IX,IY")
    c.add_argument("--plane-out", default=None)
    c.set_defaults(func=cmd_correlate)

    b = sub.add_parser("benchmark", help="run a Monte Carlo experiment",
                       description="Config keys: " + "; ".join(
                           f"{k}: {v}" for k, v in CONFIG_KEYS.items()))
    b.add_argument("config", help="key=value config or JSON summary")
    b.add_argument("--runs", type=int, default=None, help="override the run count")
    b.add_argument("--threads", type=int, default=None, help="worker threads (env SBCC_THREADS)")
    b.add_argument("--csv", default="report.csv")
    b.add_argument("--json", default="summary.json")
    b.set_defaults(func=cmd_benchmark)

    m = sub.add_parser("compare", help="count outliers against a reference field")
    m.add_argument("field")
    m.add_argument("reference", nargs="?", default=None,
                   help="reference field.csv/truth.csv (or use --reference median)")
    m.add_argument("--reference", dest="reference_opt", default=None)
    m.add_argument("--threshold", type=float, default=4.0)
    m.add_argument("--out", default=None, help="annotated field output")
    m.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "compare":
            if args.reference_opt is not None:
                if args.reference is not None:
                    raise UsageError("give the reference either positionally or via --reference")
                args.reference = args.reference_opt
            if args.reference is None:
                raise UsageError("compare needs a reference file or --reference median")
        args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except SBCCError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return FAILURE_EXIT
    except OSError as exc:
        print(f"error[E_IO]: {exc}", file=sys.stderr)
        return FAILURE_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
