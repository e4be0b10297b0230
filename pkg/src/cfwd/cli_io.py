"""Configuration, command-line entry point and file emitters.

Config files are YAML (JSON is accepted as a subset).  Schema, version 1::

    schema_version: 1
    g: identity-staircase(3)        # or constant(c), dyadic(name, n),
    xi: dyadic(identity, 3)         # or {breakpoints: [...], values: [...]}
    T: 1.0
    dt: 1.0e-3
    replicas: 100
    seed: 42
    out: out                        # optional, default "out"
    workers: 1                      # optional
    scheme: sticky                  # optional, "sticky" or "naive"
    emit_trajectories: false        # optional
    tests:                          # optional, for ``verify``
      - mass_lemma                  # defaults, or a mapping with overrides:
      - {name: three_points, u: 0.5, r1: 0.25, r2: 0.25, lambda: 0.3}
    sticky:                         # optional, for ``sticky``
      xi0: [0, 0.5, 1]
      y0: [0, 0.2]
      T: [0.5, 1]
      dt: 1.0e-3                    # defaults to the top-level dt
      replicas: 10000               # defaults to the top-level replicas

``dyadic(name, n)`` uses one of :data:`NAMED_FUNCTIONS`; for ``xi`` it is
the strictly increasing dyadic staircase of level ``n`` and for ``g`` the
block means over the ``2**n`` dyadic intervals.

Report files hold one JSON object per line with sorted keys; the fields are
those of :meth:`cfwd.verify.VerificationReport.to_record`.  Trajectory CSVs
have the header ``t,piece,position,cluster_id,A,M,qv`` and sticky path CSVs
``t,y,at_zero``.  Floats are written with ``repr`` so that identical runs
give identical bytes.

Exit status: 0 when every verdict passes, 1 when any fails, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from . import verify as V
from .dynamics import SCHEMES, Trajectory, simulate
from .step_functions import (
    StepFunction,
    constant,
    dyadic_discretize_g,
    dyadic_discretize_xi,
    identity_staircase,
)
from .sticky1d import simulate_sticky

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

NAMED_FUNCTIONS = {
    "identity": lambda u: u,
    "square": lambda u: u * u,
    "sqrt": math.sqrt,
    "cube": lambda u: u**3,
}

_REQUIRED = ("schema_version", "g", "xi", "T", "dt", "replicas", "seed")
_OPTIONAL = ("out", "tests", "emit_trajectories", "workers", "scheme", "sticky")
_STICKY_FIELDS = ("xi0", "y0", "T", "dt", "replicas", "rho")

TEST_DEFAULTS = {
    "mass_lemma": {"u": 0.5, "r": None, "t": None},
    "three_points": {"u": 0.5, "r1": 0.25, "r2": 0.25, "lambda": 0.3, "T": None},
    "mass_near_boundary": {"side": 0, "u": 0.0, "r": 0.25, "t": None, "alpha": 0.5},
    "dispersion_moment": {"beta": 1.0, "p": 3.0, "t": None, "delta": 0.5},
    "martingale": {"piece": 0, "min_replicas": 1000},
    "qv_consistency": {"k": 0, "l": 1},
    "wiener_center": {"min_replicas": 10000},
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


@dataclass(frozen=True)
class StickyGrid:
    xi0: tuple
    y0: tuple
    T: tuple
    dt: float
    replicas: int
    rho: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    g: StepFunction
    xi: StepFunction
    T: float
    dt: float
    replicas: int
    seed: int
    out: str = "out"
    tests: tuple = ()
    emit_trajectories: bool = False
    workers: int = 1
    scheme: str = "sticky"
    sticky: Optional[StickyGrid] = None
    schema_version: int = SCHEMA_VERSION
    source: dict = field(default_factory=dict, compare=False)


# -- parsing ---------------------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z][a-z-]*)\s*\((.*)\)\s*$")


def parse_function(spec, name: str, role: str) -> StepFunction:
    """Build a step function from a preset string or a record."""
    if isinstance(spec, dict):
        try:
            return StepFunction.from_record(spec)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return constant(float(spec))
    if not isinstance(spec, str):
        raise ConfigError(f"{name}: expected a preset string or a {{breakpoints, values}} record")
    m = _CALL.match(spec)
    if not m:
        raise ConfigError(f"{name}: cannot parse preset {spec!r}")
    kind, args = m.group(1), [a.strip() for a in m.group(2).split(",") if a.strip()]
    try:
        if kind == "constant" and len(args) == 1:
            return constant(float(args[0]))
        if kind == "identity-staircase" and len(args) == 1:
            return identity_staircase(_level(args[0]))
        if kind == "dyadic" and len(args) == 2:
            if args[0] not in NAMED_FUNCTIONS:
                raise ConfigError(f"{name}: unknown function {args[0]!r}; known: {sorted(NAMED_FUNCTIONS)}")
            fn, level = NAMED_FUNCTIONS[args[0]], _level(args[1])
            if role == "xi":
                return dyadic_discretize_xi(fn, level)
            return dyadic_discretize_g(fn, identity_staircase(level))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    raise ConfigError(f"{name}: unknown preset {spec!r}")


def _level(text: str) -> int:
    n = int(text)
    if not 1 <= n <= 16:
        raise ValueError(f"level must lie in [1, 16], got {n}")
    return n


def _number(raw: dict, key: str, kind=float, positive=False, nonneg=False):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if kind is int and (isinstance(v, float) and not v.is_integer()):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    v = kind(v)
    if positive and not v > 0:
        raise ConfigError(f"{key}: must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(f"{key}: must be non-negative, got {v!r}")
    return v


def _tests(raw) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ConfigError("tests: expected a list")
    out = []
    for i, entry in enumerate(raw):
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(f"tests[{i}]: expected a name or a mapping with a name")
        name = entry["name"]
        if name not in TEST_DEFAULTS:
            raise ConfigError(f"tests[{i}].name: unknown test {name!r}; known: {sorted(TEST_DEFAULTS)}")
        unknown = set(entry) - {"name"} - set(TEST_DEFAULTS[name])
        if unknown:
            raise ConfigError(f"tests[{i}]: unknown fields {sorted(unknown)} for {name}")
        out.append({**TEST_DEFAULTS[name], **entry})
    return tuple(out)


def _sticky(raw, dt, replicas) -> Optional[StickyGrid]:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError("sticky: expected a mapping")
    unknown = set(raw) - set(_STICKY_FIELDS)
    if unknown:
        raise ConfigError(f"sticky: unknown fields {sorted(unknown)}")
    vals = {}
    for key in ("xi0", "y0", "T"):
        v = raw.get(key)
        v = [v] if isinstance(v, (int, float)) else v
        if not isinstance(v, list) or not v or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            raise ConfigError(f"sticky.{key}: expected a non-empty list of numbers")
        if any(x < 0 for x in v) or (key == "T" and any(x <= 0 for x in v)):
            raise ConfigError(f"sticky.{key}: values out of range")
        vals[key] = tuple(float(x) for x in v)
    sdt = float(raw.get("dt", dt))
    reps = int(raw.get("replicas", replicas))
    rho = float(raw.get("rho", 1.0))
    if not sdt > 0:
        raise ConfigError("sticky.dt: must be positive")
    if reps < 1:
        raise ConfigError("sticky.replicas: must be >= 1")
    if not 1.0 <= rho < math.inf:
        raise ConfigError("sticky.rho: must lie in [1, C]")
    return StickyGrid(vals["xi0"], vals["y0"], vals["T"], sdt, reps, rho)


def config_from_dict(raw: dict) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"{key}: missing required field")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {raw['schema_version']!r}")
    T = _number(raw, "T", positive=True)
    dt = _number(raw, "dt", positive=True)
    if dt > T:
        raise ConfigError(f"dt: must not exceed T ({dt!r} > {T!r})")
    replicas = _number(raw, "replicas", int, positive=True)
    seed = _number(raw, "seed", int, nonneg=True)
    if seed >= 2**64:
        raise ConfigError("seed: must fit in 64 bits")
    workers = _number(raw, "workers", int, positive=True) if "workers" in raw else 1
    scheme = raw.get("scheme", "sticky")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme: expected one of {SCHEMES}, got {scheme!r}")
    emit = raw.get("emit_trajectories", False)
    if not isinstance(emit, bool):
        raise ConfigError("emit_trajectories: expected true or false")
    out = raw.get("out", "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("out: expected a directory path")
    return SimConfig(
        g=parse_function(raw["g"], "g", "g"),
        xi=parse_function(raw["xi"], "xi", "xi"),
        T=T,
        dt=dt,
        replicas=replicas,
        seed=seed,
        out=out,
        tests=_tests(raw.get("tests")),
        emit_trajectories=emit,
        workers=workers,
        scheme=scheme,
        sticky=_sticky(raw.get("sticky"), dt, replicas),
        source=dict(raw),
    )


def load_config(path) -> SimConfig:
    """Read and validate a config file.

    Raises
    ------
    ConfigError
        On parse errors, unknown fields and failed domain checks.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: parse error: {exc}") from None
    return config_from_dict(raw)


# -- emitters --------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_jsonl(reports, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_record(), sort_keys=True) + "\n")


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "piece", "position", "cluster_id", "A", "M", "qv"])
    ids = traj.cluster_ids
    M = traj.M
    for j, t in enumerate(traj.times):
        for k in range(traj.n):
            w.writerow([_fmt(t), k, _fmt(traj.X[j, k]), int(ids[j, k]), _fmt(traj.A[j, k]), _fmt(M[j, k]), _fmt(traj.qv[j, k])])
    return buf.getvalue()


def sticky_csv(path_obj) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "y", "at_zero"])
    for t, y, z in zip(path_obj.times, path_obj.y, path_obj.at_zero):
        w.writerow([_fmt(t), _fmt(y), int(z)])
    return buf.getvalue()


def emit_svg(traj: Optional[Trajectory], path, dots: bool = False, width: int = 640, height: int = 400,
             max_points: int = 400) -> None:
    """Draw particle paths; stroke darkness is proportional to cluster mass.

    With ``dots=True`` every cluster is also marked at sampled times by a
    disc whose area grows with its mass.  ``traj=None`` or a single-time
    trajectory gives empty axes.
    """
    ml, mr, mt, mb = 50, 15, 15, 35
    pw, ph = width - ml - mr, height - mt - mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<g stroke="black" stroke-width="1"><line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}"/>'
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}"/></g>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" font-size="12" text-anchor="middle">t</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" font-size="12" text-anchor="middle">x</text>',
    ]
    if traj is not None and traj.times.size > 1 and traj.n > 0:
        stride = max(1, math.ceil((traj.times.size - 1) / max_points))
        idx = np.arange(0, traj.times.size, stride)
        if idx[-1] != traj.times.size - 1:
            idx = np.append(idx, traj.times.size - 1)
        t = traj.times[idx]
        X = traj.X[idx]
        cm = traj.cluster_mass[idx]
        lo, hi = float(X.min()), float(X.max())
        span = hi - lo if hi > lo else 1.0
        px = ml + pw * (t - t[0]) / (t[-1] - t[0])
        py = mt + ph * (1.0 - (X - lo) / span)
        parts.append(f'<text x="{ml - 4}" y="{mt + 4}" font-size="10" text-anchor="end">{hi:.3g}</text>')
        parts.append(f'<text x="{ml - 4}" y="{mt + ph}" font-size="10" text-anchor="end">{lo:.3g}</text>')
        parts.append(f'<text x="{ml + pw}" y="{mt + ph + 14}" font-size="10" text-anchor="end">{t[-1]:.3g}</text>')
        parts.append('<g fill="none" stroke-width="1.2" stroke-linejoin="round">')
        for k in range(traj.n):
            # one polyline per run of constant cluster mass
            start = 0
            for j in range(1, t.size + 1):
                if j == t.size or cm[j, k] != cm[start, k]:
                    seg = range(start, min(j + 1, t.size))
                    pts = " ".join(f"{px[i]:.2f},{py[i, k]:.2f}" for i in seg)
                    level = int(round(220 * (1.0 - cm[start, k])))
                    parts.append(f'<polyline points="{pts}" stroke="rgb({level},{level},{level})"/>')
                    start = j
        parts.append("</g>")
        if dots:
            parts.append('<g fill="black" fill-opacity="0.6">')
            every = max(1, t.size // 40)
            for i in range(0, t.size, every):
                k = 0
                while k < traj.n:
                    e = k
                    while e + 1 < traj.n and cm[i, e + 1] == cm[i, k] and X[i, e + 1] == X[i, k]:
                        e += 1
                    r = 1.0 + 4.0 * math.sqrt(cm[i, k])
                    parts.append(f'<circle cx="{px[i]:.2f}" cy="{py[i, k]:.2f}" r="{r:.2f}"/>')
                    k = e + 1
            parts.append("</g>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# -- runs -------------------------------------------------------------------------------


def _versions() -> dict:
    import numba
    import scipy

    return {
        "cfwd": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def _manifest(cfg: SimConfig, command: str, files) -> dict:
    return {
        "command": command,
        "config": cfg.source,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "workers": cfg.workers,
        "noise_key": "(domain << 96) | (replica << 64) | seed",
        "versions": _versions(),
        "files": sorted(files),
    }


def _outdir(cfg: SimConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def run_simulate(cfg: SimConfig) -> int:
    """Simulate every replica; write trajectory CSVs (if enabled) and a manifest."""
    out = _outdir(cfg)
    files = []

    def one(r):
        traj = simulate(cfg.g, cfg.xi, cfg.T, cfg.dt, cfg.seed, r, cfg.scheme)
        if cfg.emit_trajectories:
            name = f"trajectory_{r:06d}.csv"
            (out / name).write_text(trajectory_csv(traj))
            return name
        return None

    files = [f for f in V.ensemble_map(one, range(cfg.replicas), cfg.workers) if f]
    (out / "manifest.json").write_text(json.dumps(_manifest(cfg, "simulate", files + ["manifest.json"]), sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def _run_test(cfg: SimConfig, spec: dict) -> V.VerificationReport:
    name = spec["name"]
    common = dict(dt=cfg.dt, replicas=cfg.replicas, seed=cfg.seed, workers=cfg.workers)
    if name == "mass_lemma":
        u = spec["u"]
        r = spec["r"] if spec["r"] is not None else min(u, 1.0 - u)
        t = spec["t"] if spec["t"] is not None else cfg.T
        return V.check_mass_lemma(cfg.g, cfg.xi, u, r, t, scheme=cfg.scheme, **common)
    if name == "three_points":
        T = spec["T"] if spec["T"] is not None else cfg.T
        return V.check_three_points(cfg.g, cfg.xi, spec["u"], spec["r1"], spec["r2"], spec["lambda"], T, **common)
    if name == "mass_near_boundary":
        t = spec["t"] if spec["t"] is not None else cfg.T
        return V.check_mass_near_boundary(cfg.g, cfg.xi, spec["side"], spec["u"], spec["r"], t, spec["alpha"], **common)
    if name == "dispersion_moment":
        t = spec["t"] if spec["t"] is not None else cfg.T
        return V.check_dispersion_moment(cfg.g, cfg.xi, spec["beta"], spec["p"], t, delta=spec["delta"], **common)
    ens = V.Ensemble.from_functions(cfg.g, cfg.xi, cfg.T, cfg.dt, cfg.replicas, cfg.seed, scheme=cfg.scheme, workers=cfg.workers)
    if name == "martingale":
        return V.martingale_test(ens, spec["piece"], min_replicas=spec["min_replicas"])
    if name == "qv_consistency":
        return V.qv_consistency(ens, spec["k"], spec["l"])
    return V.wiener_center_test(ens, min_replicas=spec["min_replicas"])


def _status(reports) -> int:
    return EXIT_FAIL if any(r.verdict == V.FAIL for r in reports) else EXIT_OK


def run_verify(cfg: SimConfig) -> int:
    """Run the selected checks and write ``report.jsonl``."""
    tests = cfg.tests or tuple({**TEST_DEFAULTS[n], "name": n} for n in ("mass_lemma", "three_points"))
    reports = [_run_test(cfg, spec) for spec in tests]
    out = _outdir(cfg)
    write_jsonl(reports, out / "report.jsonl")
    return _status(reports)


def run_sticky(cfg: SimConfig) -> int:
    """Sitting-time checks over the sticky grid; writes ``sticky_report.jsonl``."""
    grid = cfg.sticky or StickyGrid((0.0, 0.5, 1.0), (0.0, 0.2), (0.5, 1.0), cfg.dt, cfg.replicas)
    out = _outdir(cfg)
    reports = []
    for xi0 in grid.xi0:
        for y0 in grid.y0:
            for T in grid.T:
                reports.append(V.check_sitting_time(xi0, y0, T, grid.dt, grid.replicas, cfg.seed, grid.rho))
                if cfg.emit_trajectories:
                    p = simulate_sticky(y0, xi0, grid.rho, T, grid.dt, cfg.seed, 0)
                    (out / f"sticky_xi{xi0!r}_y{y0!r}_T{T!r}.csv").write_text(sticky_csv(p))
    write_jsonl(reports, out / "sticky_report.jsonl")
    return _status(reports)


def run_plot(cfg: SimConfig, replica: int = 0, dots: bool = False) -> int:
    out = _outdir(cfg)
    traj = simulate(cfg.g, cfg.xi, cfg.T, cfg.dt, cfg.seed, replica, cfg.scheme)
    emit_svg(traj, out / f"trajectory_{replica:06d}.svg", dots=dots)
    return EXIT_OK


# -- command line -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfwd", description="Sticky-reflected particle simulator and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "simulate replicas and write trajectories"),
        ("verify", "run Monte Carlo checks and write a report"),
        ("sticky", "run the sticky 1-D sitting-time grid"),
        ("plot", "render one replica as SVG"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N", help="override the master seed")
        p.add_argument("--replicas", type=int, metavar="N", help="override the replica count")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
        p.add_argument("--workers", type=int, metavar="N", help="override the worker count")
        if name == "plot":
            p.add_argument("--replica", type=int, default=0)
            p.add_argument("--dots", action="store_true", help="mark clusters with discs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed: must fit in 64 bits")
            overrides["seed"] = args.seed
        if args.replicas is not None:
            if args.replicas < 1:
                raise ConfigError("replicas: must be positive")
            overrides["replicas"] = args.replicas
        if args.out is not None:
            overrides["out"] = args.out
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers: must be positive")
            overrides["workers"] = args.workers
        cfg = replace(cfg, **overrides)
        if args.command == "simulate":
            return run_simulate(cfg)
        if args.command == "verify":
            return run_verify(cfg)
        if args.command == "sticky":
            return run_sticky(cfg)
        return run_plot(cfg, args.replica, args.dots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
