"""Command-line front end.

Every command writes its outputs and a ``<command>.manifest.json`` into the
output directory (``--out``, else ``$PSEUDOLAB_OUTPUT_DIR``, else the
current directory).  Exit status: 0 on success, 1 on invalid input, 2 on
numerical failure.
"""
from __future__ import annotations

import argparse
import cmath
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

OUTPUT_ENV = "PSEUDOLAB_OUTPUT_DIR"

COMMANDS = ("spectrum", "pseudospectrum", "pseudomode", "residual-scan", "projections",
            "quadratic-identify", "swanson-check", "perturb-cloud", "jordan-sweep",
            "semigroup", "airy-diagnostics")


# output file name -> shipped schema
SCHEMAS = {"spectrum.json": "spectrum", "grid.json": "grid", "pseudomode.json": "pseudomode",
           "scan.json": "scan", "rate.json": "rate", "quadratic.json": "quadratic",
           "swanson.json": "swanson", "cloud.json": "cloud", "sweep.json": "sweep",
           "semigroup.json": "semigroup", "airy.json": "airy"}


def load_schema(filename: str) -> dict:
    """Schema for a JSON output file (manifests included)."""
    from importlib.resources import files
    name = "manifest" if filename.endswith(".manifest.json") else SCHEMAS[Path(filename).name]
    return json.loads((files("pseudolab") / "schemas" / f"{name}.json").read_text())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# flag parsing

def parse_complex(text: str) -> complex:
    """'re,im' or a bare real number."""
    parts = [p.strip() for p in str(text).split(",")]
    try:
        if len(parts) == 1:
            return complex(float(parts[0]), 0.0)
        if len(parts) == 2:
            return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}")


def parse_polar(text: str) -> complex:
    """'modulus,argument' with the argument in radians."""
    parts = str(text).split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'mod,arg', got {text!r}")
    try:
        r, a = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'mod,arg', got {text!r}") from None
    if r < 0:
        raise argparse.ArgumentTypeError("modulus must be non-negative")
    return cmath.rect(r, a)


def _floats(n=None):
    def conv(text):
        try:
            vals = [float(v) for v in str(text).split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals
    return conv


def _ints(n):
    def conv(text):
        vals = _floats(n)(text)
        if any(v != int(v) for v in vals):
            raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
        return [int(v) for v in vals]
    return conv


def _terms(text):
    if text == "auto":
        return "auto"
    try:
        t = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("terms must be a positive integer or 'auto'") from None
    if t < 1:
        raise argparse.ArgumentTypeError("terms must be >= 1")
    return t


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


# ---------------------------------------------------------------------------
# parser

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker threads (default: machine parallelism)")
    return p


def _model_flags(default=None):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--model", default=default, required=default is None,
                   choices=("airy", "cubic", "rotated_ho", "shifted_ho", "swanson",
                            "advection_diffusion", "perturbed_ho"))
    for name in ("theta", "omega", "alpha", "beta", "epsilon", "L", "h"):
        p.add_argument(f"--{name}", type=float)
    return p


def _disc_flags(N=400):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--N", type=_positive_int, default=N)
    p.add_argument("--basis", default="auto", choices=("auto", "hermite", "grid", "quadrature"))
    p.add_argument("--interval", type=_floats(2), help="grid window a,b")
    p.add_argument("--scale", type=float, default=1.0, help="Hermite basis dilation")
    return p


def _z_flags(required=True):
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--z", type=parse_complex, help="target as re,im")
    g.add_argument("--z-polar", type=parse_polar, help="target as modulus,argument (radians)")
    return p


def build_parser():
    common = _common()
    ap = _Parser(prog="pseudolab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pseudolab {__version__}")
    ap.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    ap.add_argument("--replay-out", metavar="DIR", help="output directory for --replay")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("spectrum", parents=[common, _model_flags(), _disc_flags()],
                       help="eigenvalues of a discretized model")
    p.add_argument("--count", type=_positive_int, default=10)

    p = sub.add_parser("pseudospectrum", parents=[common, _model_flags(), _disc_flags()],
                       help="resolvent-norm grid, contours and SVG")
    p.add_argument("--region", type=_floats(4), required=True, help="re0,re1,im0,im1")
    p.add_argument("--res", type=_ints(2), default=[100, 100], help="n_re,n_im")
    p.add_argument("--levels", type=_floats(), default=None, help="eps levels")
    p.add_argument("--precision", default="double", choices=("double", "extended", "auto"))
    p.add_argument("--ceiling", type=float, default=None)

    p = sub.add_parser("pseudomode", parents=[common, _model_flags(), _z_flags()],
                       help="certified JWKB pseudomode")
    p.add_argument("--terms", type=_terms, default=7)
    p.add_argument("--x0", type=float)
    p.add_argument("--plateau", type=_floats(2), help="cutoff plateau p1,p2")
    p.add_argument("--support", type=_floats(2), help="cutoff support s1,s2")

    p = sub.add_parser("residual-scan", parents=[common, _model_flags(), _z_flags(False)],
                       help="pseudomode residuals over h with decay-law fits")
    p.add_argument("--h-list", type=_floats(), default=[2.0 ** -k for k in range(3, 8)])
    p.add_argument("--z-rule", choices=("fixed", "shifted"), default="fixed",
                   help="'shifted' uses z = 2 - h + 2i sqrt(h)")
    p.add_argument("--terms", type=_terms, default=7)
    p.add_argument("--law", choices=("1/h", "1/sqrt(h)"), default="1/h")
    p.add_argument("--plateau", type=_floats(2))
    p.add_argument("--support", type=_floats(2))

    p = sub.add_parser("projections", parents=[common, _model_flags("rotated_ho"), _disc_flags()],
                       help="spectral-projection norms and growth rate")
    p.add_argument("--source", choices=("exact", "asymptotic", "numeric"), default="exact")
    p.add_argument("--kmax", type=int, default=100)
    p.add_argument("--kmin", type=int, default=0)
    p.add_argument("--law", choices=("linear_in_k", "linear_in_sqrt_k"), default="linear_in_k")
    p.add_argument("--fit-range", type=_floats(2), help="kmin,kmax of the rate fit")

    p = sub.add_parser("quadratic-identify", parents=[common],
                       help="classify a quadratic symbol and identify its rotated oscillator")
    p.add_argument("--omega", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--coef-a", type=parse_complex, help="x^2 coefficient re,im")
    p.add_argument("--coef-b", type=parse_complex, help="x xi coefficient re,im")
    p.add_argument("--coef-c", type=parse_complex, help="xi^2 coefficient re,im")
    p.add_argument("--count", type=_positive_int, default=8)

    p = sub.add_parser("swanson-check", parents=[common], help="unitary reduction check")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--L", type=float, default=30.0)
    p.add_argument("--n", type=_positive_int, default=4096)
    p.add_argument("--convention", choices=("consistent", "reciprocal"), default="consistent")

    p = sub.add_parser("perturb-cloud", parents=[common, _model_flags("rotated_ho"), _disc_flags()],
                       help="random perturbation cloud against the computed pseudospectrum")
    p.add_argument("--eps", type=float, required=True, help="perturbation norm bound")
    p.add_argument("--samples", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--res", type=_ints(2), default=[101, 101])
    p.add_argument("--region", type=_floats(4))
    p.add_argument("--slack", type=float, default=0.1)

    p = sub.add_parser("jordan-sweep", parents=[common], help="perturbed-oscillator collision sweep")
    p.add_argument("--eps-list", type=_floats(), help="explicit increasing eps values")
    p.add_argument("--eps-range", type=_floats(3), default=[0.0, 1.5, 31], help="start,stop,count")
    p.add_argument("--N", type=_positive_int, default=200)
    p.add_argument("--count", type=_positive_int, default=6)

    p = sub.add_parser("semigroup", parents=[common, _model_flags("airy"), _disc_flags(1500)],
                       help="semigroup norms ||exp(-tH)||")
    p.add_argument("--t-list", type=_floats(), default=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5])

    p = sub.add_parser("airy-diagnostics", parents=[common], help="Airy translation and growth checks")
    p.add_argument("--N", type=_positive_int, default=1500)
    p.add_argument("--window", type=_floats(2), default=[-40.0, 40.0])
    p.add_argument("--shift", type=float, default=1.0)
    p.add_argument("--levels", type=_floats(), default=None)
    return ap


# ---------------------------------------------------------------------------
# helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return str(path)


def _model_params(a):
    from .model import make_model
    params = {}
    for name in ("theta", "omega", "alpha", "beta", "epsilon", "L", "h"):
        v = getattr(a, name, None)
        if v is not None:
            params[name] = v
    if a.model == "rotated_ho":
        params.setdefault("theta", math.pi / 4)
    return make_model(a.model, params)


def _operator(a, model):
    from .discretize import assemble, hermite_assemble
    if a.basis == "hermite" or (a.basis == "auto" and a.scale != 1.0):
        return hermite_assemble(model, a.N, scale=a.scale)
    return assemble(model, a.N, basis=a.basis, interval=a.interval)


def _target(a):
    return a.z if a.z is not None else a.z_polar


def _cutoff(a):
    from .pseudomode import cutoff_build
    if (a.plateau is None) != (a.support is None):
        raise UsageError("--plateau and --support must be given together")
    if a.plateau is None:
        return None
    return cutoff_build(tuple(a.plateau), tuple(a.support))


# ---------------------------------------------------------------------------
# commands (each returns a list of written paths)

def cmd_spectrum(a, out):
    from .resolvent import eigen
    op = _operator(a, _model_params(a))
    es = eigen(op)
    n = min(a.count, op.N)
    with open(out / "spectrum.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "re", "im", "pairing"])
        for k in range(n):
            wr.writerow([k, f"{es.values[k].real:.17g}", f"{es.values[k].imag:.17g}",
                         f"{es.pairing[k]:.17g}"])
    doc = {"operator": op.metadata(), "eigenvalues": es.values[:n], "pairing": es.pairing[:n]}
    return [str(out / "spectrum.csv"), _write_json(doc, out / "spectrum.json")]


def cmd_pseudospectrum(a, out):
    from .resolvent import (DEFAULT_LEVELS, contour_extract, pseudospectrum_grid,
                            write_polylines, write_svg)
    op = _operator(a, _model_params(a))
    grid = pseudospectrum_grid(op, a.region, a.res, ceiling=a.ceiling, precision=a.precision,
                               workers=a.workers)
    levels = a.levels or list(DEFAULT_LEVELS)
    contours = contour_extract(grid, levels, strict=False)
    return [grid.to_csv(out / "grid.csv"), _write_json(grid.metadata(), out / "grid.json"),
            write_polylines(contours, out / "contours.txt"),
            write_svg(grid, contours, out / "contours.svg")]


def cmd_pseudomode(a, out):
    from .pseudomode import build_pseudomode
    pm = build_pseudomode(_model_params(a), _target(a), terms=a.terms, x0=a.x0, cutoff=_cutoff(a))
    return [_write_json(pm.summary(), out / "pseudomode.json"), pm.write_csv(out / "pseudomode.csv")]


def cmd_residual_scan(a, out):
    from .pseudomode import residual_scan
    params = {k: getattr(a, k) for k in ("theta", "omega", "alpha", "beta", "epsilon")
              if getattr(a, k) is not None}
    if a.model == "rotated_ho":
        params.setdefault("theta", math.pi / 4)
    if a.z_rule == "shifted":
        z_of_h = lambda h: 2 - h + 2j * math.sqrt(h)  # noqa: E731
    else:
        z = _target(a)
        if z is None:
            raise UsageError("residual-scan needs --z/--z-polar unless --z-rule shifted")
        z_of_h = lambda h: z  # noqa: E731
    hs = sorted(a.h_list, reverse=True)
    scan = residual_scan(a.model, params, z_of_h, hs, terms=a.terms, law=a.law,
                         cutoff=_cutoff(a), workers=a.workers)
    return [scan.write_csv(out / "scan.csv"), _write_json(scan.to_dict(), out / "scan.json")]


def cmd_projections(a, out):
    from .projections import (asymptotic_series, exact_series, numeric_projection_norms,
                              rate_fit)
    if a.source == "numeric":
        ser = numeric_projection_norms(_operator(a, _model_params(a)), a.kmax + 1)
    else:
        if a.theta is None:
            raise UsageError("--theta is required for exact/asymptotic norms")
        f = exact_series if a.source == "exact" else asymptotic_series
        ser = f(a.theta, a.kmax, a.kmin)
    paths = [ser.write_csv(out / "projections.csv")]
    lo, hi = a.fit_range if a.fit_range else (None, None)
    try:
        rep = rate_fit(ser, a.law, kmin=lo, kmax=hi, full=True)
    except ValueError as exc:
        rep = {"law": a.law, "error": str(exc)}
    paths.append(_write_json(rep, out / "rate.json"))
    return paths


def cmd_quadratic_identify(a, out):
    from .quadratic import QuadraticSymbol, report, spectrum, swanson_to_weyl, ELLIPTIC
    sw = (a.omega, a.alpha, a.beta)
    co = (a.coef_a, a.coef_b, a.coef_c)
    if all(v is not None for v in sw) and all(v is None for v in co):
        q = swanson_to_weyl(*sw)
    elif all(v is not None for v in co) and all(v is None for v in sw):
        q = QuadraticSymbol(*co)
    else:
        raise UsageError("give either --omega/--alpha/--beta or --coef-a/--coef-b/--coef-c")
    rep = report(q)
    if rep["classification"] == ELLIPTIC:
        rep["spectrum"] = spectrum(q, a.count)
    return [_write_json(rep, out / "quadratic.json")]


def cmd_swanson_check(a, out):
    from .quadratic import swanson_unitary_check
    res = swanson_unitary_check(a.omega, a.alpha, a.beta, L=a.L, n=a.n, convention=a.convention)
    doc = {"omega": a.omega, "alpha": a.alpha, "beta": a.beta, "convention": a.convention,
           "L": a.L, "n": a.n, **res}
    return [_write_json(doc, out / "swanson.json")]


def cmd_perturb_cloud(a, out):
    from .instability import random_cloud
    from .resolvent import pseudospectrum_grid
    op = _operator(a, _model_params(a))
    ex = random_cloud(op, a.eps, a.samples, a.seed, workers=a.workers)
    region = a.region or ex.default_region()
    grid = pseudospectrum_grid(op, region, a.res, workers=a.workers, eigenvalues=False)
    rep = ex.containment(grid, slack=a.slack)
    doc = {**ex.metadata(), "region": region, "resolution": a.res, "containment": rep}
    return [ex.write_csv(out / "cloud.csv"), grid.to_csv(out / "cloud_grid.csv"),
            _write_json(doc, out / "cloud.json")]


def cmd_jordan_sweep(a, out):
    from .instability import jordan_sweep
    if a.eps_list:
        eps = a.eps_list
    else:
        lo, hi, n = a.eps_range
        if n != int(n) or n < 2:
            raise UsageError("--eps-range count must be an integer >= 2")
        eps = np.linspace(lo, hi, int(n))
    js = jordan_sweep(eps, a.N, count=a.count, workers=a.workers)
    return [js.write_csv(out / "sweep.csv"), _write_json(js.report(), out / "sweep.json")]


def cmd_semigroup(a, out):
    from .instability import airy_semigroup_reference, semigroup_norm
    model = _model_params(a)
    if a.basis == "auto" and a.interval is None and model.kind == "airy":
        a.interval = [-40.0, 40.0]
    op = _operator(a, model)
    ref = airy_semigroup_reference if model.kind == "airy" and model.h == 1.0 else None
    sg = semigroup_norm(op, a.t_list, reference=ref, workers=a.workers)
    doc = {"operator": op.metadata(), "t": sg.t, "norm": sg.norm, "reference": sg.reference,
           "accretive": sg.accretive, "submultiplicative": sg.submultiplicative(),
           "step": sg.step}
    return [sg.write_csv(out / "semigroup.csv"), _write_json(doc, out / "semigroup.json")]


def cmd_airy_diagnostics(a, out):
    from .instability import airy_diagnostics
    rep = airy_diagnostics(a.N, tuple(a.window), shift=a.shift, levels=a.levels)
    return [_write_json(rep, out / "airy.json")]


_DISPATCH = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}

_VALIDATION = (ValueError, UsageError, KeyError)


def _is_numerical(exc):
    from .pseudomode import OrderingViolated, OutsideParabola
    from .resolvent import InsufficientData
    from .instability import ResidualTooLarge
    if isinstance(exc, (OrderingViolated, OutsideParabola)):
        return False
    if isinstance(exc, (InsufficientData, ResidualTooLarge, ArithmeticError,
                        np.linalg.LinAlgError, RuntimeError)):
        return True
    return not isinstance(exc, _VALIDATION)


def _params_of(ns):
    d = {k: v for k, v in vars(ns).items() if k not in ("out", "replay", "replay_out")}
    return _jsonable(d)


def run(argv=None, *, stdout=None, stderr=None) -> int:
    """Parse, execute and write the manifest; return the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.replay:
            with open(a.replay) as fh:
                man = json.load(fh)
            replay_argv = manifest_argv(man)
            if a.replay_out:
                replay_argv.append(f"--out={a.replay_out}")
            a = parser.parse_args(replay_argv)
        if a.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        print(str(exc).rstrip(), file=stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"pseudolab: cannot read manifest: {exc}", file=stderr)
        return 1
    out = Path(a.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    if a.workers is None:
        a.workers = os.cpu_count() or 1
    t0 = time.perf_counter()
    try:
        files = _DISPATCH[a.command](a, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=stderr)
        return 1
    except Exception as exc:  # classified below
        code = 2 if _is_numerical(exc) else 1
        kind = "numerical failure" if code == 2 else "invalid input"
        print(f"pseudolab {a.command}: {kind}: {type(exc).__name__}: {exc}", file=stderr)
        return code
    manifest = {"command": a.command, "params": _params_of(a), "seed": getattr(a, "seed", None),
                "version": __version__, "inputs": [], "outputs": files,
                "output_dir": str(out), "wall_time": time.perf_counter() - t0}
    mpath = _write_json(manifest, out / f"{a.command}.manifest.json")
    for f in files:
        print(f, file=stdout)
    print(mpath, file=stdout)
    return 0


def manifest_argv(man: dict) -> list:
    """Rebuild a command line from a manifest."""
    cmd = man["command"]
    if cmd not in COMMANDS:
        raise UsageError(f"unknown command {cmd!r} in manifest")
    argv = [cmd]
    flags = {a.dest: a for a in _subparser(cmd)._actions}
    for k, v in man["params"].items():
        if k in ("command",) or v is None or k not in flags:
            continue
        opt = flags[k].option_strings[-1] if flags[k].option_strings else None
        if opt is None:
            continue
        if isinstance(v, list):
            if k in ("z", "z_polar"):
                v = complex(*v)
                if k == "z_polar":
                    opt, k = "--z", "z"
                argv.append(f"{opt}={v.real!r},{v.imag!r}")
                continue
            argv.append(f"{opt}=" + ",".join(repr(float(x)) if not isinstance(x, int) else str(x)
                                            for x in v))
        else:
            argv.append(f"{opt}={v}")
    if man.get("output_dir"):
        argv.append(f"--out={man['output_dir']}")
    return argv


def _subparser(cmd):
    ap = build_parser()
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[cmd]
    raise KeyError(cmd)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
